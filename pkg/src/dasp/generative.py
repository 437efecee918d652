"""Toy-scale generative models: GAN objectives, WGAN-GP and variational diffusion.

Batches follow the column convention: ``D x N`` with one sample per column.
Networks are any callables mapping a ``D x N`` Tensor to an output Tensor,
typically :class:`dasp.layers.Sequential` stacks of dense layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .autodiff import Adam, Tensor, as_tensor, clip, concat, grad, log

EPS = 1e-12

__all__ = [
    "GAN_VARIANTS",
    "GanValues",
    "gan_values",
    "AdversarialPair",
    "WganValue",
    "wgan_gp_value",
    "DiffusionSchedule",
    "diffusion_schedule",
    "q_step",
    "q_sample",
    "posterior_mean_variance",
    "posterior_step",
    "with_time",
    "diffusion_train_loss",
    "reverse_sample",
    "train_diffusion",
    "two_cluster_data",
    "save_samples",
    "save_trajectory",
]

Network = Callable[[Tensor], Tensor]


# ---------------------------------------------------------------------------
# GAN


GAN_VARIANTS = ("mean_d", "log_d", "log_one_minus_d")


@dataclass
class GanValues:
    """Objective values and the losses to minimize for each side.

    ``discriminator_objective`` is ``E ln d(x) + E ln(1 - d(g(z)))`` (maximized
    by the discriminator). ``generator_objective`` follows the chosen variant:
    ``mean_d`` maximizes ``E d(g(z))``, ``log_d`` maximizes ``E ln d(g(z))`` and
    ``log_one_minus_d`` minimizes ``E ln(1 - d(g(z)))``. The ``*_loss`` fields
    carry the sign that turns each into a minimization.
    """

    discriminator_objective: Tensor
    generator_objective: Tensor
    discriminator_loss: Tensor
    generator_loss: Tensor
    variant: str


def _prob(t: Tensor) -> Tensor:
    return clip(t, EPS, 1.0 - EPS)


def gan_values(discriminator: Network, generator: Network, real, noise, variant: str = "log_d") -> GanValues:
    """Evaluate the minimax objective on a real batch and a noise batch.

    Discriminator outputs are clamped to ``[EPS, 1 - EPS]`` before the logs
    so the values stay finite for saturated discriminators.
    """
    if variant not in GAN_VARIANTS:
        raise ValueError(f"unknown generator variant {variant!r}; choose from {GAN_VARIANTS}")
    d_real = _prob(discriminator(as_tensor(real)))
    d_fake = _prob(discriminator(generator(as_tensor(noise))))
    d_obj = log(d_real).mean() + log(1.0 - d_fake).mean()
    if variant == "mean_d":
        g_obj = d_fake.mean()
        g_loss = -g_obj
    elif variant == "log_d":
        g_obj = log(d_fake).mean()
        g_loss = -g_obj
    else:
        g_obj = log(1.0 - d_fake).mean()
        g_loss = g_obj
    return GanValues(d_obj, g_obj, -d_obj, g_loss, variant)


# ---------------------------------------------------------------------------
# WGAN-GP


@dataclass
class AdversarialPair:
    """Transform ``f`` and critic ``d`` with gradient penalty coefficient ``lam``."""

    transform: Network
    critic: Network
    lam: float = 10.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"penalty coefficient must be >= 0, got {self.lam}")

    def parameters(self) -> list[Tensor]:
        out = []
        for net in (self.transform, self.critic):
            if hasattr(net, "parameters"):
                out.extend(net.parameters())
        return out


@dataclass
class WganValue:
    """``value = wasserstein + lam * penalty``.

    ``wasserstein`` is a Tensor (differentiable in the network parameters).
    The penalty is a plain float: its input gradient comes from one reverse
    pass and is not differentiated again.
    """

    value: float
    wasserstein: Tensor
    penalty: float
    input_gradients: np.ndarray
    mix: np.ndarray


def wgan_gp_value(pair: AdversarialPair, target, source, rng=None, mix=None) -> WganValue:
    """``E d(target) - E d(f(source)) + lam * E (||grad d(z)|| - 1)^2``.

    ``z = eps * target + (1 - eps) * f(source)`` with one ``eps ~ U(0, 1)``
    per column, or the given ``mix`` weights. The critic must map columns
    independently so that the gradient of ``sum d(Z)`` gives per-sample
    input gradients.
    """
    target = as_tensor(target)
    fake = pair.transform(as_tensor(source))
    if fake.shape != target.shape:
        raise ValueError(f"transformed batch {fake.shape} does not match target batch {target.shape}")
    n = target.shape[-1]
    if mix is None:
        mix = np.random.default_rng(rng).uniform(0.0, 1.0, size=n)
    mix = np.asarray(mix, dtype=np.float64)
    wasserstein = pair.critic(target).mean() - pair.critic(fake).mean()
    z = Tensor(mix * target.data + (1.0 - mix) * fake.data, requires_grad=True)
    (gz,) = grad(pair.critic(z).sum(), [z])
    norms = np.sqrt((gz**2).sum(axis=0))
    penalty = float(np.mean((norms - 1.0) ** 2))
    return WganValue(float(wasserstein.data) + pair.lam * penalty, wasserstein, penalty, gz, mix)


# ---------------------------------------------------------------------------
# diffusion schedule


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step coefficients indexed ``1..T`` (index 0 holds ``alpha_bar_0 = 1``).

    ``sigma2[1]`` is 0 and ``rho[1]`` is 0 since the training sum starts at 2.
    """

    alpha: np.ndarray
    alpha_bar: np.ndarray = field(init=False)
    sigma2: np.ndarray = field(init=False)
    rho: np.ndarray = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64).ravel()
        if a.size < 2:
            raise ValueError("a schedule needs T >= 2 steps")
        if np.any(~(a > 0)) or np.any(a > 1):
            raise ValueError("alpha_t must lie in (0, 1]")
        alpha = np.concatenate([[1.0], a])
        alpha_bar = np.cumprod(alpha)
        one_minus = 1.0 - alpha_bar
        sigma2 = np.zeros_like(alpha)
        rho = np.zeros_like(alpha)
        for t in range(1, alpha.size):
            if one_minus[t] > 0:
                sigma2[t] = (1 - alpha[t]) * (1 - alpha_bar[t - 1]) / (1 - alpha_bar[t])
            if t >= 2 and sigma2[t] > 0:
                rho[t] = (1 / (2 * sigma2[t])) * alpha_bar[t - 1] * (1 - alpha[t]) ** 2 / (1 - alpha_bar[t]) ** 2
        for name, val in (("alpha", alpha), ("alpha_bar", alpha_bar), ("sigma2", sigma2), ("rho", rho)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def T(self) -> int:
        return self.alpha.size - 1

    def check(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")
        return t


def diffusion_schedule(
    T: int,
    curve: Literal["linear", "constant"] = "linear",
    start: float = 0.9999,
    end: float | None = 0.98,
    final_alpha_bar: float | None = None,
) -> DiffusionSchedule:
    """Build a schedule of ``T`` steps.

    ``linear`` interpolates ``alpha_t`` from ``start`` to ``end``; ``constant``
    uses ``start`` at every step. With ``final_alpha_bar`` set, ``end`` (or the
    constant) is solved by bisection so that ``alpha_bar_T`` hits that value,
    which keeps short schedules in the pure-noise regime.
    """
    T = int(T)
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if curve not in ("linear", "constant"):
        raise ValueError(f"unknown schedule curve {curve!r}")

    def build(last: float) -> np.ndarray:
        if curve == "constant":
            return np.full(T, last)
        return np.linspace(start, last, T)

    if final_alpha_bar is not None:
        if not 0 < final_alpha_bar < 1:
            raise ValueError("final_alpha_bar must lie in (0, 1)")
        lo, hi = 1e-9, start if curve == "linear" else 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.prod(build(mid)) > final_alpha_bar:
                hi = mid
            else:
                lo = mid
        last = 0.5 * (lo + hi)
    else:
        last = start if curve == "constant" else end
    return DiffusionSchedule(build(last))


# ---------------------------------------------------------------------------
# forward and reverse processes


def _noise(shape, rng, noise):
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != tuple(shape):
            raise ValueError(f"noise shape {noise.shape} != sample shape {tuple(shape)}")
        return noise
    return np.random.default_rng(rng).standard_normal(shape)


def q_step(x_prev, t: int, schedule: DiffusionSchedule, rng=None, noise=None) -> np.ndarray:
    """One forward step: ``sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) eps``."""
    t = schedule.check(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = _noise(x_prev.shape, rng, noise)
    a = schedule.alpha[t]
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * eps


def q_sample(x0, t, schedule: DiffusionSchedule, rng=None, noise=None) -> np.ndarray:
    """Closed-form ``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` may be a scalar or one step per column of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"steps must lie in 1..{schedule.T}")
    ab = schedule.alpha_bar[t]
    eps = _noise(x0.shape, rng, noise)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean_variance(x_t, x0_hat, t: int, schedule: DiffusionSchedule) -> tuple[np.ndarray, float]:
    """Mean and variance of ``q(x_{t-1} | x_t, x0)``."""
    t = schedule.check(t)
    a, ab, ab_prev = schedule.alpha[t], schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if 1.0 - ab <= 0:
        return x_t.copy(), 0.0
    mean = (np.sqrt(a) * (1.0 - ab_prev) * x_t + np.sqrt(ab_prev) * (1.0 - a) * x0_hat) / (1.0 - ab)
    return mean, float(schedule.sigma2[t])


def posterior_step(x_t, x0_hat, t: int, schedule: DiffusionSchedule, rng=None, noise=None) -> np.ndarray:
    """Draw ``x_{t-1}`` from the Gaussian posterior; ``t = 1`` returns the mean."""
    mean, var = posterior_mean_variance(x_t, x0_hat, t, schedule)
    if t == 1 or var == 0:
        return mean
    return mean + np.sqrt(var) * _noise(mean.shape, rng, noise)


def with_time(x_t, t, T: int) -> Tensor:
    """Append the row ``t / T`` to a ``D x N`` batch."""
    x_t = as_tensor(x_t)
    n = x_t.shape[-1]
    row = np.broadcast_to(np.asarray(t, dtype=np.float64) / T, (n,)).reshape(1, n)
    return concat([x_t, Tensor(row)], axis=0)


def diffusion_train_loss(predictor: Network, x0, schedule: DiffusionSchedule, rng=None, t=None, noise=None) -> Tensor:
    """Monte Carlo estimate of ``sum_{t=2..T} rho_t ||f(x_t, t) - x0||^2``.

    One step ``t ~ U{2..T}`` and one ``eps`` are drawn per column. The batch
    sum is scaled by ``T - 1`` so that each column is an unbiased estimate of
    the full sum over steps.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2:
        raise ValueError(f"x0 must be a D x N batch, got shape {x0.shape}")
    rng = np.random.default_rng(rng)
    n = x0.shape[1]
    steps = rng.integers(2, schedule.T + 1, size=n) if t is None else np.broadcast_to(np.asarray(t), (n,))
    eps = _noise(x0.shape, rng, noise)
    x_t = q_sample(x0, steps, schedule, noise=eps)
    pred = predictor(with_time(x_t, steps, schedule.T))
    diff = pred - Tensor(x0)
    weights = Tensor((schedule.T - 1) * schedule.rho[steps])
    return ((diff * diff).sum(axis=0) * weights).sum()


def reverse_sample(
    predictor: Network,
    schedule: DiffusionSchedule,
    n: int,
    dim: int,
    rng=None,
    keep: Sequence[int] = (),
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Run the reverse chain from ``x_T ~ N(0, I)`` down to ``x_0``.

    Returns the final ``dim x n`` batch and snapshots ``{t: x_t}`` for the
    steps listed in ``keep`` (``0`` is the output).
    """
    rng = np.random.default_rng(rng)
    keep = set(int(k) for k in keep)
    x = rng.standard_normal((dim, n))
    snaps = {}
    if schedule.T in keep:
        snaps[schedule.T] = x.copy()
    for t in range(schedule.T, 0, -1):
        x0_hat = predictor(with_time(x, t, schedule.T)).data
        x = posterior_step(x, x0_hat, t, schedule, rng)
        if t - 1 in keep:
            snaps[t - 1] = x.copy()
    return x, snaps


def train_diffusion(
    predictor,
    data: np.ndarray,
    schedule: DiffusionSchedule,
    steps: int = 2000,
    batch: int = 128,
    lr: float = 1e-3,
    rng=None,
) -> list[float]:
    """Adam on :func:`diffusion_train_loss` with minibatches of columns of ``data``."""
    rng = np.random.default_rng(rng)
    params = predictor.parameters()
    opt = Adam(params, lr=lr)
    history = []
    for _ in range(int(steps)):
        idx = rng.integers(0, data.shape[1], size=batch)
        loss = diffusion_train_loss(predictor, data[:, idx], schedule, rng)
        opt.step(grad(loss, params))
        history.append(float(loss.data))
    return history


def two_cluster_data(n: int, centers=((-2.0, 0.0), (2.0, 0.0)), std: float = 0.1, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """``2 x n`` points split evenly between isotropic Gaussian clusters."""
    rng = np.random.default_rng(rng)
    centers = np.asarray(centers, dtype=np.float64)
    labels = rng.integers(0, len(centers), size=n)
    return centers[labels].T + std * rng.standard_normal((centers.shape[1], n)), labels


# ---------------------------------------------------------------------------
# export


def save_samples(path, samples: np.ndarray) -> None:
    """CSV with header ``id,x1,x2,...``; one row per sample column."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    d, n = samples.shape
    header = "id," + ",".join(f"x{i + 1}" for i in range(d))
    table = np.column_stack([np.arange(n), samples.T])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=["%d"] + ["%.10g"] * d)


def save_trajectory(path, snapshots: dict[int, np.ndarray]) -> None:
    """CSV with header ``step,id,x1,x2,...`` stacking every snapshot."""
    rows = []
    for t in sorted(snapshots, reverse=True):
        x = np.atleast_2d(snapshots[t])
        rows.append(np.column_stack([np.full(x.shape[1], t), np.arange(x.shape[1]), x.T]))
    table = np.vstack(rows)
    d = table.shape[1] - 2
    header = "step,id," + ",".join(f"x{i + 1}" for i in range(d))
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=["%d", "%d"] + ["%.10g"] * d)
