from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dasp import losses as L
from dasp.autodiff import Adam, Tensor, check_grad, grad
from dasp.layers import DenseLayer, Sequential

rng0 = np.random.default_rng(0)


def _probs(rng, shape):
    return rng.uniform(0.05, 0.95, size=shape)


# regression ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["mse", "l1", "huber"])
def test_regression_zero_at_match(kind):
    y = rng0.normal(size=(3, 4))
    assert L.regression_loss(kind, y, y).item() == 0.0


def test_regression_values():
    y, yh = np.array([[1.0, 2.0]]), np.array([[0.0, 4.0]])
    assert L.mse(y, yh).item() == 5.0
    assert L.l1(y, yh).item() == 3.0
    d = 0.7
    assert np.isclose(L.huber([2 * d], [0.0], delta=d).item(), 1.5 * d * d)
    assert np.isclose(L.huber([0.5 * d], [0.0], delta=d).item(), 0.125 * d * d)


def test_huber_c1_at_switch():
    d = 1.3
    x1 = Tensor(np.array([d - 1e-9]), requires_grad=True)
    x2 = Tensor(np.array([d + 1e-9]), requires_grad=True)
    g1 = grad(L.huber(x1, np.zeros(1), d), [x1])[0]
    g2 = grad(L.huber(x2, np.zeros(1), d), [x2])[0]
    assert abs(g1[0] - g2[0]) < 1e-6


def test_l1_gradient_is_sign():
    rng = np.random.default_rng(1)
    y = rng.normal(size=6)
    yh = y + rng.choice([-1, 1], size=6) * rng.uniform(0.1, 1, size=6)
    t = Tensor(yh, requires_grad=True)
    (g,) = grad(L.l1(y, t), [t])
    np.testing.assert_array_equal(g, np.sign(yh - y))
    assert check_grad(lambda a: L.l1(y, a), [yh]) < 1e-6
    assert check_grad(lambda a: L.huber(y, a, 0.5), [yh]) < 1e-6


# classification -----------------------------------------------------------


def test_bce_value():
    assert np.isclose(L.bce([1.0], [0.5]).item(), np.log(2))


def test_ce_and_nll_agree():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(4), size=5)
    idx = rng.integers(0, 4, size=5)
    onehot = np.eye(4)[idx]
    assert np.isclose(L.cross_entropy(onehot, p).item(), L.nll(idx, p).item())
    assert np.isclose(L.nll(idx, p).item(), -np.log(p[np.arange(5), idx]).sum())


def test_dice_examples():
    assert np.isclose(L.dice([1.0, 0.0], [0.5, 0.5]).item(), 1 / 3)
    y = np.array([[1.0, 0.0, 1.0]])
    assert abs(L.dice(y, y).item()) < 1e-15


def test_dice_generalized_reduces():
    rng = np.random.default_rng(3)
    y = (rng.uniform(size=(4, 3)) > 0.5).astype(float)
    p = _probs(rng, (4, 3))
    plain = 1 - 2 * (y * p).sum() / ((y * y).sum() + (p * p).sum())
    assert np.isclose(L.dice(y, p, kappa0=0, alpha=0.5, eta=0).item(), plain)
    w = (1 - p) ** 2
    gen = 1 - (0.1 + (w * y * p).sum()) / (0.1 + 0.7 * (y * y).sum() + 0.3 * (w * p * p).sum())
    assert np.isclose(L.dice(y, p, kappa0=0.1, alpha=0.3, eta=2).item(), gen)


@settings(max_examples=50, deadline=None)
@given(
    arrays(float, (3, 4), elements=st.floats(0, 1)),
    arrays(float, (3, 4), elements=st.floats(0, 1)),
)
def test_dice_in_unit_interval(y, p):
    if (y * y).sum() + (p * p).sum() == 0:
        return
    v = L.dice(y, p).item()
    assert -1e-12 <= v <= 1 + 1e-12


def test_focal_eta_zero_is_bce():
    rng = np.random.default_rng(4)
    for _ in range(5):
        y = (rng.uniform(size=(6, 3)) > 0.5).astype(float)
        p = _probs(rng, (6, 3))
        assert abs(L.asymmetric_focal(y, p, eta=0).item() - L.bce(y, p).item()) < 1e-12


def test_weighted_bce_beta_one_is_bce():
    rng = np.random.default_rng(5)
    y = (rng.uniform(size=(6, 3)) > 0.5).astype(float)
    p = _probs(rng, (6, 3))
    assert abs(L.weighted_bce(y, p, beta=1.0).item() - L.bce(y, p).item()) < 1e-12
    manual = -(10 * y * np.log(p) + (1 - y) * np.log(1 - p)).sum()
    assert np.isclose(L.weighted_bce(y, p, beta=10).item(), manual)


def test_inverse_frequency_weights():
    y = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.0]])
    p = np.full((3, 2), 0.4)
    c0, eta = 2.0, 1.5
    w = (c0 / (np.array([3.0, 1.0]) + c0)) ** eta
    manual = -(w * y * np.log(p) + (1 - y) * np.log(1 - p)).sum()
    assert np.isclose(L.inverse_frequency_bce(y, p, c0, eta).item(), manual)


def test_focal_values_and_gradient():
    rng = np.random.default_rng(6)
    y = (rng.uniform(size=(4, 3)) > 0.5).astype(float)
    p = _probs(rng, (4, 3))
    manual = -((1 - p) ** 2 * y * np.log(p) + p**2 * (1 - y) * np.log(1 - p)).sum()
    assert np.isclose(L.asymmetric_focal(y, p, 2).item(), manual)
    for kind, kw in [("bce", {}), ("weighted_bce", {"beta": 3}), ("ifl", {"c0": 1, "eta": 1}),
                     ("focal_asym", {"eta": 2}), ("dice", {"kappa0": 0.1, "alpha": 0.4, "eta": 1}), ("ce", {})]:
        assert check_grad(lambda a: L.classification_loss(kind, y, a, **kw), [p]) < 1e-5, kind


def test_log_losses_finite_at_extremes():
    y = np.array([[1.0, 0.0]])
    p = np.array([[0.0, 1.0]])
    for kind in ("bce", "weighted_bce", "ifl", "focal_asym", "ce"):
        assert np.isfinite(L.classification_loss(kind, y, p).item())


def test_hinge_svm():
    y = np.array([1.0, -1.0, 1.0])
    s = np.array([2.0, -0.5, 0.2])
    w = np.array([1.0, 2.0])
    assert np.isclose(L.hinge_svm(y, s, w, lam=0.1).item(), 0 + 0.5 + 0.8 + 0.5)
    with pytest.raises(ValueError):
        L.hinge_svm([0.0], [1.0])


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        L.bce(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        L.classification_loss("nope", [1.0], [0.5])


# weak labels --------------------------------------------------------------


def test_clip_score_examples():
    np.testing.assert_allclose(L.clip_score([[1.0, 0.0], [0.5, 0.5], [0.0, 0.0]]).data, [1.0, 0.5, 0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(float, (7,), elements=st.floats(0, 1)))
def test_clip_score_bounded_by_frames(p):
    s = L.clip_score(p).item()
    if p.sum() == 0:
        assert s == 0
    else:
        assert p.min() - 1e-12 <= s <= p.max() + 1e-12


def test_super_resolution_sparsifies():
    # dh/dy_small < 0 only while y_small < (sqrt(2) - 1) y_large; start inside that region
    from dasp.autodiff import sigmoid

    p0 = np.array([0.7, 0.2])
    logits = Tensor(np.log(p0 / (1 - p0)).reshape(1, 1, 2), requires_grad=True)
    opt = Adam([logits], lr=0.05)
    for _ in range(200):
        loss = L.super_resolution_loss(sigmoid(logits), np.array([[1.0]]))
        opt.step(grad(loss, [logits]))
    p = sigmoid(logits).data[0, 0]
    assert np.ptp(p) > np.ptp(p0)
    assert p[0] > 0.95 and p[1] < 0.05


def test_super_resolution_near_equal_frames_rise_together():
    h = lambda a, b: (a * a + b * b) / (a + b)  # noqa: E731
    assert h(1, 0) == 1 and h(0.5, 0.5) == 0.5
    y = Tensor(np.array([0.525, 0.475]), requires_grad=True)
    (g,) = grad(L.clip_score(y), [y])
    assert np.all(g > 0)


# embeddings ---------------------------------------------------------------


def test_contrastive_cases():
    z = np.array([[1.0, 2.0]])
    assert L.contrastive(z, z, [1.0]).item() == 0.0
    assert L.contrastive([[0.0, 0.0]], [[2.0, 0.0]], [0.0], margin=3.0).item() == 0.0
    assert np.isclose(L.contrastive([[0.0, 0.0]], [[1.0, 0.0]], [0.0], margin=3.0).item(), 2.0)
    assert np.isclose(L.contrastive([[0.0, 0.0]], [[1.0, 1.0]], [1.0]).item(), 2.0)


def test_triplet_cases():
    a, p, n = np.zeros(2), np.array([1.0, 0.0]), np.array([4.0, 0.0])
    assert L.triplet(a, p, n, margin=2.0).item() == 0.0  # D- - D+ = 3 > 2
    assert np.isclose(L.triplet(a, p, n, margin=4.0).item(), 1.0)
    assert np.isclose(L.triplet(a, p, n, margin=4.0, squared=True).item(), 0.0)
    assert np.isclose(L.triplet(a, p, n, margin=16.0, squared=True).item(), 1.0)


def test_embedding_gradients():
    rng = np.random.default_rng(7)
    a, p, n = rng.normal(size=(3, 4, 3))
    assert check_grad(lambda x, y, z: L.triplet(x, y, z, margin=3.0), [a, p, n]) < 1e-5
    assert check_grad(lambda x, y: L.contrastive(x, y, [1, 0, 1, 0], margin=20.0), [a, p]) < 1e-5
    assert check_grad(lambda x, y: L.ntxent(x, y, tau=0.5, margin=0.2), [a, p]) < 1e-5
    assert check_grad(lambda x, y: L.moco(x, y, n, tau=0.5), [a, p]) < 1e-5


def test_ntxent_closed_form():
    z = np.eye(2)
    v = L.ntxent(z, z, tau=1.0, margin=0.0).item()
    assert np.isclose(v / 2, -np.log(np.e / (np.e + 1)), atol=1e-12)
    assert np.isclose(v / 2, 0.31326, atol=1e-5)


def test_ntxent_margin_form():
    rng = np.random.default_rng(8)
    z, zt = rng.normal(size=(2, 3, 4))
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    w = zt / np.linalg.norm(zt, axis=1, keepdims=True)
    S = u @ w.T
    a, m = 3.0, 0.3
    manual = 0.0
    for n in range(3):
        top = np.exp(a * (S[n, n] - m))
        manual -= np.log(top / (top + sum(np.exp(a * S[n, i]) for i in range(3) if i != n)))
    assert np.isclose(L.ntxent(z, zt, alpha=a, margin=m).item(), manual)


def test_ntxent_zero_norm_rejected():
    with pytest.raises(ValueError):
        L.ntxent(np.zeros((2, 3)), np.ones((2, 3)))


def test_moco_dictionary_and_loss():
    d = L.MocoDictionary(capacity=3, dim=2, momentum=0.999)
    d.enqueue(np.array([[2.0, 0.0], [0.0, 3.0]]))
    d.enqueue(np.array([[1.0, 1.0], [-1.0, 0.0]]))
    assert len(d) == 3
    np.testing.assert_allclose(np.linalg.norm(d.keys, axis=1), 1.0)
    np.testing.assert_allclose(d.keys[0], [-1.0, 0.0])  # oldest entry overwritten
    q, k = np.array([[1.0, 0.0]]), np.array([[1.0, 0.1]])
    S = lambda a, b: a @ b / np.linalg.norm(a) / np.linalg.norm(b)  # noqa: E731
    tau = 0.5
    pos = S(q[0], k[0]) / tau
    negs = [S(q[0], kk) / tau for kk in d.keys]
    with_pos = -(pos - np.log(np.exp(pos) + np.exp(negs).sum()))
    without = -(pos - np.log(np.exp(negs).sum()))
    assert np.isclose(L.moco(q, k, d, tau=tau).item(), with_pos)
    assert np.isclose(L.moco(q, k, d, tau=tau, include_positive=False).item(), without)


def test_ema_update():
    t, s = [Tensor(np.ones(2))], [Tensor(np.zeros(2))]
    L.ema_update(t, s, 0.999)
    np.testing.assert_allclose(t[0].data, 0.999)
    with pytest.raises(ValueError):
        L.ema_update(t, s, 1.0)


# estimation ---------------------------------------------------------------


def test_si_sdr_scale_invariance():
    rng = np.random.default_rng(9)
    s = rng.normal(size=64)
    sh = s + 0.3 * rng.normal(size=64)
    base = L.si_sdr(s, sh).item()
    for c in (0.1, -3.0):
        assert np.isclose(L.si_sdr(c * s, sh).item(), base, atol=1e-9)


def test_si_sdr_matches_correlation_form():
    rng = np.random.default_rng(10)
    s, sh = rng.normal(size=(2, 32))
    rho = sh @ s / np.linalg.norm(s) / np.linalg.norm(sh)
    assert np.isclose(L.si_sdr(s, sh, eps=0).item(), 10 * np.log10(rho**2 / (1 - rho**2)))


def test_si_sdr_extremes():
    s = np.array([1.0, 0.0, -1.0, 0.0])
    orth = np.array([0.0, 1.0, 0.0, -1.0])
    assert L.si_sdr(s, orth, eps=1e-12).item() <= -40
    assert L.si_sdr(s, s, eps=1e-12).item() >= 120
    with pytest.raises(ValueError):
        L.si_sdr(np.zeros(4), s)


def test_si_sdr_decreases_with_noise():
    rng = np.random.default_rng(11)
    s = rng.normal(size=256)
    n = rng.normal(size=256)
    vals = [L.si_sdr(s, s + sd * n).item() for sd in (0.01, 0.1, 0.5, 1.0, 3.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_si_sdr_gradient_and_batch():
    rng = np.random.default_rng(12)
    s, sh = rng.normal(size=(2, 3, 8))
    assert L.si_sdr(s, sh).shape == (3,)
    assert check_grad(lambda a: L.si_sdr_loss(s, a), [sh]) < 1e-5


def test_spectral_distance():
    rng = np.random.default_rng(13)
    X, S = np.abs(rng.normal(size=(2, 5, 4)))
    assert L.spectral_distance(np.ones_like(X), X, X).item() == 0
    assert np.isclose(L.spectral_distance(np.zeros_like(X), X, S).item(), (S**2).sum())
    assert check_grad(lambda m: L.spectral_distance(m, X, S), [rng.uniform(size=X.shape)]) < 1e-6


# separation ---------------------------------------------------------------


def test_pit_examples():
    c, p = L.pit_loss([[0, 5], [5, 0]])
    assert c.item() == 0 and p == (0, 1)
    c, p = L.pit_loss([[3, 1], [2, 4]])
    assert c.item() == 3 and p == (1, 0)


def _brute(d):
    J = len(d)
    best = None
    for perm in sorted(permutations(range(J))):
        cost = sum(d[j][perm[j]] for j in range(J))
        if best is None or cost < best[0]:
            best = (cost, perm)
    return best


@pytest.mark.parametrize("J", [1, 2, 3, 4])
def test_pit_matches_brute_force(J):
    rng = np.random.default_rng(J)
    for _ in range(10):
        d = rng.uniform(size=(J, J))
        c, p = L.pit_loss(d)
        bc, bp = _brute(d)
        assert np.isclose(c.item(), bc) and p == bp
        assert c.item() <= np.trace(d) + 1e-12


def test_pit_ties_and_limit():
    assert L.pit_loss(np.ones((3, 3)))[1] == (0, 1, 2)
    with pytest.raises(ValueError):
        L.pit_loss(np.zeros((5, 5)))


def test_pit_gradient_flows_through_best_assignment():
    a = Tensor(np.array(1.0), requires_grad=True)
    b = Tensor(np.array(2.0), requires_grad=True)
    c, p = L.pit_loss([[a * 5, a], [b, b * 5]])
    ga, gb = grad(c, [a, b])
    assert p == (1, 0) and ga == 1 and gb == 1


def test_deep_clustering():
    rng = np.random.default_rng(14)
    labels = rng.integers(0, 3, size=20)
    U = np.eye(3)[labels].T
    assert abs(L.deep_clustering_loss(U, U).item()) < 1e-10
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    assert abs(L.deep_clustering_loss(Q @ U, U).item()) < 1e-10
    V = rng.normal(size=(4, 20))
    full = np.linalg.norm(V.T @ V - U.T @ U) ** 2
    assert np.isclose(L.deep_clustering_loss(V, U).item(), full)
    Up = U[[2, 0, 1]]
    for variant in ("frobenius", "trace"):
        assert np.isclose(L.deep_clustering_loss(V, U, variant).item(), L.deep_clustering_loss(V, Up, variant).item())


def test_deep_clustering_trace_value_and_gradient():
    rng = np.random.default_rng(15)
    U = np.eye(2)[rng.integers(0, 2, size=12)].T
    V = rng.normal(size=(3, 12))
    manual = 3 - np.trace(np.linalg.inv(V @ V.T) @ V @ U.T @ np.linalg.inv(U @ U.T) @ U @ V.T)
    assert np.isclose(L.deep_clustering_loss(V, U, "trace").item(), manual, atol=1e-6)
    assert check_grad(lambda v: L.deep_clustering_loss(v, U, "trace"), [V]) < 1e-5
    assert check_grad(lambda v: L.deep_clustering_loss(v, U), [V]) < 1e-5


def test_feature_constraint():
    rng = np.random.default_rng(16)
    y, yh = rng.normal(size=(2, 3))
    net = Sequential([DenseLayer(3, 4, "tanh", rng=rng), DenseLayer(4, 2, "identity", rng=rng)])
    assert L.feature_constraint_loss(net.outputs, y, y).item() == 0
    assert np.isclose(L.feature_constraint_loss([lambda t: t], y, yh).item(), L.mse(y, yh).item())
    assert check_grad(lambda a: L.feature_constraint_loss(net.outputs, y, a, weights=[1.0, 0.5]), [yh]) < 1e-5


# ranking ------------------------------------------------------------------


def _auc(pos, neg):
    return np.mean(pos[:, None] >= neg[None, :])


def test_auc_surrogate_separated():
    assert L.auc_surrogate([0.9, 0.8], [0.1, 0.2]).item() == 0.0
    with pytest.raises(ValueError):
        L.auc_surrogate([], [0.1])


def test_auc_surrogate_upper_bound():
    rng = np.random.default_rng(17)
    for _ in range(50):
        pos = rng.uniform(size=rng.integers(1, 10))
        neg = rng.uniform(size=rng.integers(1, 10))
        assert L.auc_surrogate(pos, neg).item() >= 1 - _auc(pos, neg) - 1e-12


def test_auc_surrogate_gradient_with_frozen_weights():
    rng = np.random.default_rng(18)
    pos, neg = rng.uniform(size=5), rng.uniform(size=6)
    # weights are step functions of the ordering, constant under small perturbations
    assert check_grad(lambda a, b: L.auc_surrogate(a, b), [pos, neg]) < 1e-5
