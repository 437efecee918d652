import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dasp import autodiff as ad
from dasp.autodiff import Tensor


def test_sigmoid_relu_tanh_values():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.relu(Tensor(-3.0)).item() == 0.0
    assert ad.relu(Tensor(2.0)).item() == 2.0
    for z in (-2.0, 0.0, 2.0):
        via_sigmoid = 2 * ad.sigmoid(Tensor(2 * z)).item() - 1
        assert abs(ad.tanh(Tensor(z)).item() - via_sigmoid) < 1e-12


def test_shape_mismatch_reports_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ad.ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_nonfinite_input_rejected():
    with pytest.raises(ad.NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        ad.leaky_relu(Tensor(1.0), alpha=1.5)


def test_linear_map_gradient():
    x = np.array([1.0, -2.0, 3.0])
    w = Tensor(np.array([0.3, 0.1, -0.4]), requires_grad=True)
    (gw,) = ad.grad(w @ Tensor(x), [w])
    np.testing.assert_array_equal(gw, x)


def test_unreachable_leaf_gets_zero():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([5.0], requires_grad=True)
    ga, gb = ad.grad((a * a).sum(), [a, b])
    np.testing.assert_allclose(ga, [2.0, 4.0])
    np.testing.assert_array_equal(gb, [0.0])


def test_paths_accumulate():
    a = Tensor(3.0, requires_grad=True)
    (g,) = ad.grad(a * a + a * 2.0 + a, [a])
    assert g == pytest.approx(2 * 3 + 3)


def test_backward_requires_scalar():
    with pytest.raises(ad.ShapeError):
        ad.grad(Tensor(np.ones(2), requires_grad=True) * 2, [])


def test_tensor_backward_fills_grad():
    a = Tensor([1.0, 2.0], requires_grad=True)
    (a * a).sum().backward()
    np.testing.assert_allclose(a.grad, [2.0, 4.0])


def test_dense_gradient_matches_closed_form():
    # dJ/dW = diag[s'(Wx+b)] e x^T for J = 0.5 ||s(Wx+b) - y||^2, e = s(.) - y
    rng = np.random.default_rng(0)
    W0, b0, x, y = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=2), rng.normal(size=3)

    def loss(W, b):
        out = ad.sigmoid(W @ Tensor(x) + b)
        return 0.5 * ((out - y) ** 2).sum()

    W, b = Tensor(W0, requires_grad=True), Tensor(b0, requires_grad=True)
    gW, gb = ad.grad(loss(W, b), [W, b])
    z = W0 @ x + b0
    s = 1 / (1 + np.exp(-z))
    e = s - y
    np.testing.assert_allclose(gW, np.outer(s * (1 - s) * e, x), rtol=1e-12)
    np.testing.assert_allclose(gb, s * (1 - s) * e, rtol=1e-12)
    assert ad.check_grad(loss, [W0, b0]) < 1e-5


def test_two_layer_error_propagation():
    rng = np.random.default_rng(1)
    W1, W2 = rng.normal(size=(4, 3)), rng.normal(size=(2, 4))
    b1, b2 = rng.normal(size=4), rng.normal(size=2)
    x0 = rng.normal(size=3)
    y = rng.normal(size=2)
    x1 = Tensor(np.tanh(W1 @ x0 + b1), requires_grad=True)
    out = ad.tanh(Tensor(W2) @ x1 + b2)
    (e1,) = ad.grad(0.5 * ((out - y) ** 2).sum(), [x1])
    e2 = out.data - y
    expected = W2.T @ ((1 - np.tanh(W2 @ x1.data + b2) ** 2) * e2)
    np.testing.assert_allclose(e1, expected, rtol=1e-12)
    # and against finite differences
    err = ad.check_grad(lambda h: 0.5 * ((ad.tanh(Tensor(W2) @ h + b2) - y) ** 2).sum(), [x1.data])
    assert err < 1e-5


PRIMITIVES = {
    "matmul": (lambda a, b: (a @ b).sum(), [(3, 4), (4, 2)]),
    "add_broadcast": (lambda a, b: ((a + b) ** 2).sum(), [(3, 4), (4,)]),
    "mul_div": (lambda a, b: (a * b / (b * b + 1.0)).sum(), [(3, 4), (1, 4)]),
    "concat": (lambda a, b: (ad.concat([a, b], axis=1) ** 2).sum(), [(2, 3), (2, 2)]),
    "stack": (lambda a, b: (ad.stack([a, b]) ** 3).sum(), [(2, 3), (2, 3)]),
    "sum_mean": (lambda a: (a.sum(axis=0) * a.mean(axis=1)[0]).sum(), [(3, 4)]),
    "max": (lambda a: (a.max(axis=1) ** 2).sum() + a.max(), [(3, 4)]),
    "sigmoid": (lambda a: ad.sigmoid(a).sum(), [(5,)]),
    "relu": (lambda a: (ad.relu(a) ** 2).sum(), [(5,)]),
    "leaky_relu": (lambda a: (ad.leaky_relu(a, 0.2) ** 2).sum(), [(5,)]),
    "swish": (lambda a: ad.swish(a).sum(), [(5,)]),
    "tanh": (lambda a: ad.tanh(a).sum(), [(5,)]),
    "softmax": (lambda a: (ad.softmax(a, axis=1) * np.arange(4)).sum(), [(3, 4)]),
    "log_softmax": (lambda a: (ad.log_softmax(a) * np.arange(4)).sum(), [(3, 4)]),
    "log_exp": (lambda a: ad.log(ad.exp(a) + 1.0).sum(), [(4,)]),
    "sqrt": (lambda a: ad.sqrt(a * a + 1.0).sum(), [(4,)]),
    "logsigmoid": (lambda a: ad.logsigmoid(a).sum(), [(4,)]),
    "getitem": (lambda a: (a[np.array([0, 2, 0]), 1:] ** 2).sum(), [(3, 4)]),
    "transpose_reshape": (lambda a: (a.T.reshape(-1) * np.arange(12)).sum(), [(3, 4)]),
    "abs": (lambda a: ad.abs_(a).sum(), [(4,)]),
}


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, seed):
    fn, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    assert ad.check_grad(fn, arrays) < 1e-5


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_simplex_and_sigmoid_range(x):
    s = ad.softmax(Tensor(x), axis=1).data
    assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-12)
    sig = ad.sigmoid(Tensor(np.clip(x, -30, 30))).data
    assert np.all((sig > 0) & (sig < 1))


def test_determinism():
    def run(seed):
        rng = np.random.default_rng(seed)
        W = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        x = ad.dropout(Tensor(rng.normal(size=4)), 0.3, rng)
        out = ad.tanh(W @ x).sum()
        return out.data, ad.grad(out, [W])[0]

    a, b = run(7), run(7)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_cycle_detected():
    a = Tensor(1.0, requires_grad=True)
    b = a * 2.0
    a._parents = (b,)  # corrupt the graph on purpose
    with pytest.raises(RuntimeError, match="cycle"):
        ad.Tape.record(b)


# optimizers ---------------------------------------------------------------


def test_adam_defaults():
    s = ad.OptimizerState()
    assert (s.beta1, s.beta2, s.lr) == (0.9, 0.99, 1e-3)


def test_adam_zero_gradient_fixed_point():
    s = ad.OptimizerState()
    p = [np.array([1.0, -2.0])]
    ad.adam_step(s, p, [np.array([1.0, 1.0])])
    m_before = s.m[0].copy()
    out = ad.adam_step(s, p, [np.zeros(2)])
    np.testing.assert_allclose(out[0], p[0] - s.lr * s.m[0] / np.sqrt(s.v[0] + s.eps))
    s2 = ad.OptimizerState()
    out2 = ad.adam_step(s2, p, [np.zeros(2)])
    np.testing.assert_array_equal(out2[0], p[0])
    assert np.all(np.abs(s.m[0]) < np.abs(m_before))


def test_adam_update_formula():
    s = ad.OptimizerState(lr=0.1)
    g = np.array([0.5, -2.0])
    (p,) = ad.adam_step(s, [np.zeros(2)], [g])
    m = 0.1 * g
    v = 0.01 * g * g
    np.testing.assert_allclose(p, -0.1 * m / np.sqrt(v + 1e-8), rtol=1e-14)


def test_adam_rejects_nonfinite_and_keeps_state():
    s = ad.OptimizerState()
    with pytest.raises(ad.NonFiniteError):
        ad.adam_step(s, [np.zeros(2)], [np.array([np.inf, 0.0])])
    assert s.step == 0 and s.m == []


def test_adam_quadratic_descent():
    theta = Tensor([1.5, -2.0], requires_grad=True)
    opt = ad.Adam([theta], lr=0.05)
    start = float((theta.data**2).sum())
    for _ in range(500):
        loss = (theta * theta).sum()
        opt.step(ad.grad(loss, [theta]))
    assert float((theta.data**2).sum()) < 1e-4 * start


def test_sgd():
    assert ad.sgd_step([np.array(1.0)], [np.array(2.0)], 0.1)[0] == pytest.approx(0.8)
    p = np.array([3.0, 4.0])
    np.testing.assert_array_equal(ad.sgd_step([p], [np.ones(2)], 0.0)[0], p)
    # same descent direction sign as Adam on a convex quadratic
    g = 2 * p
    step_sgd = ad.sgd_step([p], [g], 0.01)[0] - p
    step_adam = ad.adam_step(ad.OptimizerState(), [p], [g])[0] - p
    assert np.all(np.sign(step_sgd) == np.sign(step_adam))


# normalization and dropout --------------------------------------------------


def test_batch_norm_constant_input_is_zero():
    st_ = ad.NormState.create("batch", (3,))
    out = ad.normalize(Tensor(np.full((4, 3), 2.5)), st_)
    np.testing.assert_array_equal(out.data, 0.0)


def test_layer_norm_example():
    st_ = ad.NormState.create("layer", (1,), eps=0.0)
    out = ad.normalize(Tensor([[0.0, 2.0]]), st_)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]])


def test_batch_statistics_match_direct():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 4)) * 3 + 1
    st_ = ad.NormState.create("batch", (4,), eps=1e-5)
    out = ad.normalize(Tensor(x), st_).data
    mu = np.array([x[:, j].sum() / 8 for j in range(4)])
    var = np.array([((x[:, j] - mu[j]) ** 2).sum() / 8 for j in range(4)])
    np.testing.assert_allclose(out, (x - mu) / np.sqrt(var + 1e-5), rtol=1e-12)
    np.testing.assert_allclose(st_.running_mean, mu)
    # infer mode uses frozen stats
    out2 = ad.normalize(Tensor(x[:1]), st_, mode="infer").data
    np.testing.assert_allclose(out2, out[:1], rtol=1e-12)
    # a second batch moves running stats by EMA with decay 0.9
    x2 = rng.normal(size=(8, 4))
    ad.normalize(Tensor(x2), st_)
    np.testing.assert_allclose(st_.running_mean, 0.9 * mu + 0.1 * x2.mean(axis=0))


def test_batch_of_one_rejected():
    st_ = ad.NormState.create("batch", (2,))
    with pytest.raises(ValueError):
        ad.normalize(Tensor(np.ones((1, 2))), st_)


@pytest.mark.parametrize("kind,shape,xshape", [("batch", (3,), (5, 3)), ("layer", (3,), (2, 3, 6))])
def test_norm_gradients(kind, shape, xshape):
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=xshape)
    w = rng.normal(size=xshape)

    def f(x, g, b):
        st_ = ad.NormState.create(kind, shape)
        st_.gamma, st_.beta = g, b
        return (ad.normalize(x, st_) * w).sum()

    st0 = ad.NormState.create(kind, shape)
    g0 = rng.normal(size=st0.gamma.shape)
    b0 = rng.normal(size=st0.beta.shape)
    assert ad.check_grad(f, [x0, g0, b0]) < 1e-5


def test_dropout():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones(100_000))
    assert ad.dropout(x, 0.0, rng) is x
    assert ad.dropout(x, 0.7, rng, mode="infer") is x
    out = ad.dropout(x, 0.3, rng).data
    assert abs((out == 0).mean() - 0.3) < 0.02
    np.testing.assert_allclose(out[out != 0], 1 / 0.7)


# serialization --------------------------------------------------------------


def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = {"W": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(2.0)}
    ad.save_tensors(tmp_path / "ck.bin", data)
    back = ad.load_tensors(tmp_path / "ck.bin")
    for k in data:
        assert back[k].tobytes() == data[k].tobytes()
    raw = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-5])
    with pytest.raises(ad.io.CorruptContainerError):
        ad.load_tensors(tmp_path / "bad.bin")


def test_csv_round_trip(tmp_path):
    a = np.random.default_rng(0).normal(size=(4, 3))
    ad.save_csv(tmp_path / "a.csv", a)
    np.testing.assert_array_equal(ad.load_csv(tmp_path / "a.csv"), a)
