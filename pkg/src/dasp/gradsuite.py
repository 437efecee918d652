"""Finite-difference gradient suite over every differentiable op, layer and loss.

Each case builds a scalar function and its input arrays from a seed; the
suite reports the worst relative error between tape and central-difference
gradients (``h = 1e-6``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import layers as L
from . import losses as LS
from .autodiff import Tensor, check_grad
from .detection import AGGREGATORS, aggregate
from .dsp import learned_analysis

Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray]]]


def _probs(rng, shape):
    return rng.uniform(0.05, 0.95, size=shape)


def _slots(module):
    out = [(module._params, k) for k in module._params]
    for child in module._children.values():
        out.extend(_slots(child))
    return out


def _module_case(build, xshape, reduce=lambda y: (y * y).sum()) -> Case:
    """Gradient w.r.t. the input and every parameter of a freshly built module."""

    def case(rng):
        module = build(rng)
        slots = _slots(module)
        originals = [d[k] for d, k in slots]

        def fn(x, *ps):
            for (d, k), p in zip(slots, ps):
                d[k] = p
            try:
                return reduce(module(x))
            finally:
                for (d, k), p in zip(slots, originals):
                    d[k] = p

        return fn, [rng.normal(size=xshape)] + [p.data.copy() for p in originals]

    return case


def _fixed(fn, *shapes, sampler=None) -> Case:
    def case(rng):
        draw = sampler or (lambda r, s: r.normal(size=s))
        return fn, [draw(rng, s) for s in shapes]

    return case


def _with_data(make) -> Case:
    """``make(rng)`` returns ``(fn, arrays)`` directly."""
    return make


def _norm_case(kind, shape, xshape) -> Case:
    def case(rng):
        w = rng.normal(size=xshape)
        st0 = ad.NormState.create(kind, shape)

        def fn(x, g, b):
            st_ = ad.NormState.create(kind, shape)
            st_.gamma, st_.beta = g, b
            return (ad.normalize(x, st_) * w).sum()

        return fn, [rng.normal(size=xshape), rng.normal(size=st0.gamma.shape), rng.normal(size=st0.beta.shape)]

    return case


def _loss_cases() -> dict[str, Case]:
    def reg(kind):
        return _with_data(lambda r: ((lambda a, y=r.normal(size=(4, 3)): LS.regression_loss(kind, y, a)), [r.normal(size=(4, 3))]))

    def cls(kind, labels, **kw):
        return _with_data(lambda r: ((lambda a, y=labels(r): LS.classification_loss(kind, y, a, **kw)), [_probs(r, (4, 3))]))

    onehot = lambda r: np.eye(3)[r.integers(0, 3, size=4)]
    binary = lambda r: (r.uniform(size=(4, 3)) > 0.5).astype(float)
    cases = {f"loss_{k}": reg(k) for k in ("mse", "l1", "huber")}
    cases["loss_ce"] = cls("ce", onehot)
    cases["loss_nll"] = _with_data(lambda r: ((lambda a, i=r.integers(0, 3, size=4): LS.nll(i, a)), [_probs(r, (4, 3))]))
    cases["loss_bce"] = cls("bce", binary)
    cases["loss_weighted_bce"] = cls("weighted_bce", binary, beta=2.0)
    cases["loss_ifl"] = cls("ifl", binary, c0=1.0, eta=1.0)
    cases["loss_focal_asym"] = cls("focal_asym", binary, eta=2.0)
    cases["loss_dice"] = cls("dice", binary, kappa0=0.1, eta=1.0)
    cases["loss_hinge_svm"] = _with_data(
        lambda r: ((lambda s, y=np.where(r.uniform(size=6) > 0.5, 1.0, -1.0): LS.hinge_svm(y, s * 3.0)), [r.normal(size=6)])
    )
    cases["loss_super_resolution"] = _with_data(
        lambda r: ((lambda p, y=binary(r)[:, :2]: LS.super_resolution_loss(p, y)), [_probs(r, (4, 2, 5))])
    )
    cases["loss_contrastive"] = _fixed(lambda a, b: LS.contrastive(a, b, [1, 0, 1, 0], margin=20.0), (4, 3), (4, 3))
    cases["loss_triplet"] = _fixed(lambda a, p, n: LS.triplet(a, p, n, margin=3.0), (4, 3), (4, 3), (4, 3))
    cases["loss_ntxent"] = _fixed(lambda a, b: LS.ntxent(a, b, tau=0.5, margin=0.2), (4, 3), (4, 3))
    cases["loss_moco"] = _with_data(
        lambda r: ((lambda a, b, n=LS._unit(Tensor(r.normal(size=(5, 3)))).data: LS.moco(a, b, n, tau=0.5)), [r.normal(size=(4, 3)), r.normal(size=(4, 3))])
    )
    cases["loss_si_sdr"] = _with_data(lambda r: ((lambda a, s=r.normal(size=(2, 16)): LS.si_sdr_loss(s, a)), [r.normal(size=(2, 16))]))
    cases["loss_spectral_distance"] = _with_data(
        lambda r: ((lambda m, X=np.abs(r.normal(size=(5, 4))), S=np.abs(r.normal(size=(5, 4))): LS.spectral_distance(m, X, S)), [_probs(r, (5, 4))])
    )
    cases["loss_mask_bce"] = _with_data(lambda r: ((lambda h, t=_probs(r, (5, 4)): LS.mask_bce(t, h)), [_probs(r, (5, 4))]))

    def pit(r):
        ref = r.normal(size=(3, 6))

        def fn(est):
            pair = [[((est[j] - ref[i]) ** 2).sum() for i in range(3)] for j in range(3)]
            return LS.pit_loss(pair)[0]

        return fn, [r.normal(size=(3, 6))]

    cases["loss_pit"] = pit

    def dc(variant):
        def make(r):
            U = np.eye(3)[r.integers(0, 3, size=8)].T
            return (lambda V: LS.deep_clustering_loss(V, U, variant)), [r.normal(size=(2, 8))]

        return make

    cases["loss_deep_clustering_frobenius"] = dc("frobenius")
    cases["loss_deep_clustering_trace"] = dc("trace")

    def feature(r):
        net = L.Sequential([L.DenseLayer(3, 4, "tanh", rng=r), L.DenseLayer(4, 2, "tanh", rng=r)])
        y = r.normal(size=(3, 5))
        return (lambda a: LS.feature_constraint_loss(net.outputs, y, a, weights=[1.0, 0.5])), [r.normal(size=(3, 5))]

    cases["loss_feature_constraint"] = feature
    cases["loss_auc_surrogate"] = _fixed(LS.auc_surrogate, (5,), (6,))
    return cases


PRIMITIVES: dict[str, Case] = {
    "matmul": _fixed(lambda a, b: (a @ b).sum(), (3, 4), (4, 2)),
    "add_broadcast": _fixed(lambda a, b: ((a + b) ** 2).sum(), (3, 4), (4,)),
    "mul_div": _fixed(lambda a, b: (a * b / (b * b + 1.0)).sum(), (3, 4), (1, 4)),
    "concat": _fixed(lambda a, b: (ad.concat([a, b], axis=1) ** 2).sum(), (2, 3), (2, 2)),
    "stack": _fixed(lambda a, b: (ad.stack([a, b]) ** 3).sum(), (2, 3), (2, 3)),
    "sum_mean": _fixed(lambda a: (a.sum(axis=0) * a.mean(axis=1)[0]).sum(), (3, 4)),
    "max": _fixed(lambda a: (a.max(axis=1) ** 2).sum() + a.max(), (3, 4)),
    "where": _fixed(lambda a, b: (ad.where(np.array([True, False, True]), a, b) ** 2).sum(), (3,), (3,)),
    "clip": _fixed(lambda a: (ad.clip(a, -0.5, 0.5) * a).sum(), (6,)),
    "sigmoid": _fixed(lambda a: ad.sigmoid(a).sum(), (5,)),
    "relu": _fixed(lambda a: (ad.relu(a) ** 2).sum(), (5,)),
    "leaky_relu": _fixed(lambda a: (ad.leaky_relu(a, 0.2) ** 2).sum(), (5,)),
    "swish": _fixed(lambda a: ad.swish(a).sum(), (5,)),
    "tanh": _fixed(lambda a: ad.tanh(a).sum(), (5,)),
    "softmax": _fixed(lambda a: (ad.softmax(a, axis=1) * np.arange(4)).sum(), (3, 4)),
    "log_softmax": _fixed(lambda a: (ad.log_softmax(a) * np.arange(4)).sum(), (3, 4)),
    "log_exp": _fixed(lambda a: ad.log(ad.exp(a) + 1.0).sum(), (4,)),
    "sqrt_square": _fixed(lambda a: ad.sqrt(ad.square(a) + 1.0).sum(), (4,)),
    "logsigmoid": _fixed(lambda a: ad.logsigmoid(a).sum(), (4,)),
    "getitem": _fixed(lambda a: (a[np.array([0, 2, 0]), 1:] ** 2).sum(), (3, 4)),
    "transpose_reshape": _fixed(lambda a: (a.T.reshape(-1) * np.arange(12)).sum(), (3, 4)),
    "abs": _fixed(lambda a: ad.abs_(a).sum(), (4,)),
    "batch_norm": _norm_case("batch", (3,), (5, 3)),
    "layer_norm": _norm_case("layer", (3,), (2, 3, 6)),
}

LAYERS: dict[str, Case] = {
    "dense": _module_case(lambda r: L.DenseLayer(3, 4, "tanh", rng=r), (3, 5)),
    "conv1d": _module_case(lambda r: L.Conv1dLayer(2, 3, 3, dilation=2, activation="tanh", rng=r), (2, 12)),
    "conv1d_average_pool": _module_case(lambda r: L.Conv1dLayer(2, 3, 3, pooling="average", pool_size=2, rng=r), (2, 12)),
    "conv1d_max_pool": _module_case(lambda r: L.Conv1dLayer(2, 3, 2, pooling="max", pool_size=2, rng=r), (2, 11)),
    "lstm": _module_case(lambda r: L.LSTMCell(3, 4, rng=r), (3, 5)),
    "gru": _module_case(lambda r: L.GRUCell(3, 4, rng=r), (3, 5)),
    "self_attention": _module_case(lambda r: L.SelfAttention(3, 2, 4, heads=2, rng=r), (3, 5)),
    "mean_pooling": _module_case(lambda r: L.MeanPooling(), (3, 5)),
    "attentive_pooling": _module_case(lambda r: L.AttentivePooling(3, hidden=4, heads=2, rng=r), (3, 5)),
    "stats_pooling": _module_case(lambda r: L.StatsPooling(), (3, 5)),
    "residual": _module_case(lambda r: L.Residual(L.DenseLayer(3, 3, "tanh", rng=r)), (3, 5)),
    "head_sigmoid": _module_case(lambda r: L.OutputHead("sigmoid", 3, rng=r), (3, 5)),
    "head_softmax": _module_case(lambda r: L.OutputHead("softmax", 3, 4, rng=r), (3, 5)),
    "head_multi_sigmoid": _module_case(lambda r: L.OutputHead("multi_sigmoid", 3, 4, rng=r), (3, 5)),
}


def _other_cases() -> dict[str, Case]:
    cases: dict[str, Case] = {}
    for method in AGGREGATORS:
        cases[f"aggregate_{method}"] = _fixed(
            lambda a, m=method: (aggregate(a, m, n=3, tau=2.0) ** 2).sum(), (6, 2), sampler=lambda r, s: _probs(r, s)
        )

    def analysis(r):
        x = r.normal(size=(6, 3))
        return (lambda U, Ut, h: (learned_analysis(U, Ut, x, h) ** 2).sum()), [r.normal(size=(6, 4)), r.normal(size=(6, 4)), r.normal(size=(4, 3))]

    cases["learned_analysis"] = analysis

    def diffusion(r):
        from .generative import diffusion_schedule, diffusion_train_loss

        s = diffusion_schedule(20, start=0.99, final_alpha_bar=1e-3)
        x0, eps, steps = r.normal(size=(2, 4)), r.normal(size=(2, 4)), r.integers(2, 21, size=4)
        b = r.normal(size=(2, 1))
        return (lambda W: diffusion_train_loss(lambda z: ad.tanh(W @ z) + b, x0, s, t=steps, noise=eps)), [r.normal(size=(2, 3))]

    cases["diffusion_loss"] = diffusion

    def gan(r):
        from .generative import gan_values

        real = r.normal(size=(2, 5))
        noise = r.normal(size=(2, 5))
        v = r.normal(size=(1, 2))
        disc = lambda x, w=None: ad.sigmoid(Tensor(v) @ x)
        return (lambda G: gan_values(disc, lambda z: G @ z, real, noise, "log_d").generator_loss), [r.normal(size=(2, 2))]

    cases["gan_generator_loss"] = gan
    return cases


def all_cases() -> dict[str, Case]:
    out: dict[str, Case] = {}
    out.update({f"op_{k}": v for k, v in PRIMITIVES.items()})
    out.update({f"layer_{k}": v for k, v in LAYERS.items()})
    out.update(_loss_cases())
    out.update(_other_cases())
    return out


@dataclass(frozen=True)
class GradResult:
    name: str
    seed: int
    error: float
    passed: bool


def run_suite(seeds=(0, 1, 2), tol: float = 1e-5, h: float = 1e-6, names=None) -> list[GradResult]:
    """Run every case at every seed; a case passes when its relative error is below ``tol``."""
    cases = all_cases()
    if names is not None:
        cases = {k: cases[k] for k in names}
    results = []
    for name, case in cases.items():
        for seed in seeds:
            fn, arrays = case(np.random.default_rng([seed, sum(map(ord, name))]))
            err = check_grad(fn, arrays, h)
            results.append(GradResult(name, int(seed), float(err), bool(err < tol)))
    return results


def format_table(results: list[GradResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'case':<{width}}  seed  rel.error   result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.seed:>4}  {r.error:9.2e}   {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def timed_suite(**kw) -> tuple[list[GradResult], float]:
    t0 = time.perf_counter()
    res = run_suite(**kw)
    return res, time.perf_counter() - t0
