import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fimce.channel import PilotSet
from fimce.geometry import DeformationShape
from fimce.interp import (
    KnnConfig,
    SingularKernelError,
    knn_estimate,
    knn_weights,
    krr_estimate,
    krr_fit,
    linear_interp_1d,
    median_heuristic_gamma,
    nearest_neighbor_estimate,
    rbf_gram,
    rbf_kernel,
)

N = 12


def _pilots(Z, rng=None, H=None):
    rng = rng or np.random.default_rng(0)
    Z = np.asarray(Z, dtype=float)
    if H is None:
        H = rng.standard_normal((len(Z), Z.shape[1])) + 1j * rng.standard_normal((len(Z), Z.shape[1]))
    bound = max(1.0, np.max(np.abs(Z)))
    return PilotSet([DeformationShape(z, bound) for z in Z], H, 0.0)


def _random_pilots(M, seed=0):
    rng = np.random.default_rng(seed)
    return _pilots(rng.uniform(-1, 1, (M, N)), rng)


def test_nn_exact_hit_and_tie_rule():
    p = _random_pilots(6)
    np.testing.assert_array_equal(nearest_neighbor_estimate(p, p.shapes[3]), p.measurements[3])
    q = _pilots([np.full(N, -0.5), np.full(N, 0.5)])
    np.testing.assert_array_equal(nearest_neighbor_estimate(q, np.zeros(N)), q.measurements[0])


def test_nn_matches_brute_force():
    p = _random_pilots(10, seed=4)
    rng = np.random.default_rng(5)
    for _ in range(20):
        t = rng.uniform(-1, 1, N)
        best = min(range(10), key=lambda m: (sum((p.shapes[m].zeta[i] - t[i]) ** 2 for i in range(N)), m))
        np.testing.assert_array_equal(nearest_neighbor_estimate(p, t), p.measurements[best])


def test_linear_interp_1d():
    ha, hb = np.array([1 + 1j, 2]), np.array([3 - 1j, 0])
    np.testing.assert_allclose(linear_interp_1d(0.1, ha, 0.5, hb, 0.1), ha)
    np.testing.assert_allclose(linear_interp_1d(0.1, ha, 0.5, hb, 0.3), (ha + hb) / 2)
    np.testing.assert_allclose(linear_interp_1d(0.0, ha, 1.0, hb, 0.25), 0.75 * ha + 0.25 * hb)
    with pytest.raises(ValueError):
        linear_interp_1d(0.2, ha, 0.2, hb, 0.3)


def test_knn_scalar_weight():
    Z = np.random.default_rng(1).uniform(-1, 1, (3, N))
    idx, w = knn_weights(Z, 0.5 * Z[0], KnnConfig(1, 0.0))
    assert idx.tolist() == [0]
    assert w[0] == pytest.approx(0.5)


def test_knn_identity_case():
    p = _random_pilots(7, seed=2)
    idx, w = knn_weights(p, p.shapes[4], KnnConfig(5, 0.0))
    assert idx[0] == 4
    np.testing.assert_allclose(w, np.eye(5)[0], atol=1e-9)
    np.testing.assert_allclose(knn_estimate(p, p.shapes[4], KnnConfig(5, 0.0)), p.measurements[4], atol=1e-9)


def test_knn_matches_lstsq():
    rng = np.random.default_rng(3)
    Z = rng.uniform(-1, 1, (9, N))
    t = rng.uniform(-1, 1, N)
    idx, w = knn_weights(Z, t, KnnConfig(5, 0.0))
    ref = np.linalg.lstsq(Z[idx].T, t, rcond=None)[0]
    np.testing.assert_allclose(w, ref, atol=1e-9)
    # normal equations
    Zb = Z[idx].T
    assert np.linalg.norm(Zb.T @ (t - Zb @ w)) < 1e-9 * np.linalg.norm(Zb.T @ t)


def test_knn_midpoint_averages():
    e = np.zeros(N)
    e[0] = 1.0
    a = np.full(N, 0.2) + 0.1 * e
    b = np.full(N, 0.2) - 0.1 * e
    far = [np.full(N, -0.9), np.linspace(-1, 1, N)]
    p = _pilots([a, b] + far)
    # the midpoint of a and b is reconstructed by equal weights
    est = knn_estimate(p, (a + b) / 2, KnnConfig(2, 0.0))
    np.testing.assert_allclose(est, (p.measurements[0] + p.measurements[1]) / 2, atol=1e-12)


def test_knn_collinear_neighbors_do_not_fail():
    z = np.linspace(-1, 1, N)
    p = _pilots([z, z, 0.5 * z, -z, 0.2 * z])
    est = knn_estimate(p, 0.3 * z, KnnConfig(5, 1e-8))
    assert np.all(np.isfinite(est))


def test_knn_needs_enough_pilots():
    with pytest.raises(ValueError):
        knn_weights(np.zeros((3, N)), np.zeros(N), KnnConfig(5))


def test_rbf_kernel_examples():
    a = np.array([0.3, -0.2, 0.1])
    b = a + np.array([1.0, 0, 0])
    assert rbf_kernel(a, a, 2.0) == 1.0
    assert rbf_kernel(a, b, 1.0) == pytest.approx(0.367879441, rel=1e-9)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y = rng.standard_normal((2, 5))
        assert rbf_kernel(x, y, 0.7) == rbf_kernel(y, x, 0.7)
    with pytest.raises(ValueError):
        rbf_kernel(a, b, 0.0)


def test_kernel_matrix_psd():
    Z = np.random.default_rng(1).uniform(-1, 1, (16, N))
    K = rbf_gram(Z, Z, median_heuristic_gamma(Z))
    np.testing.assert_allclose(K, K.T, atol=1e-15)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.trace(K) / 16


def test_krr_single_pilot():
    p = _random_pilots(1)
    m = krr_fit(p, gamma=1.0, lam=0.25)
    np.testing.assert_allclose(m.coefficients, p.measurements / 1.25)


def test_krr_interpolates_at_lambda_zero():
    p = _random_pilots(10, seed=6)
    m = krr_fit(p, lam=0.0)
    for k in range(10):
        assert np.max(np.abs(krr_estimate(m, p.shapes[k]) - p.measurements[k])) <= 1e-8


def test_krr_residual_identity():
    p = _random_pilots(10, seed=7)
    m = krr_fit(p, lam=0.05)
    R = (m.kernel_matrix + 0.05 * np.eye(10)) @ m.coefficients - p.measurements
    assert np.linalg.norm(R) < 1e-9 * np.linalg.norm(p.measurements)


def test_krr_heavy_regularization_shrinks():
    p = _random_pilots(8, seed=8)
    m = krr_fit(p, lam=1e6)
    assert np.linalg.norm(m.coefficients) <= np.linalg.norm(p.measurements) / 1e6 * 1.01
    assert np.linalg.norm(krr_estimate(m, p.shapes[0])) < 1e-5


def test_krr_far_target_vanishes():
    p = _random_pilots(5)
    m = krr_fit(p, gamma=1.0, lam=1e-2)
    assert np.max(np.abs(krr_estimate(m, np.full(N, 40.0)))) < 1e-12


def test_krr_matches_direct_loop():
    p = _random_pilots(6, seed=9)
    m = krr_fit(p, gamma=0.4, lam=0.1)
    t = np.random.default_rng(10).uniform(-1, 1, N)
    K = np.array([[np.exp(-0.4 * np.sum((a.zeta - b.zeta) ** 2)) for b in p.shapes] for a in p.shapes])
    C = np.linalg.solve(K + 0.1 * np.eye(6), p.measurements)
    k = np.array([np.exp(-0.4 * np.sum((s.zeta - t) ** 2)) for s in p.shapes])
    np.testing.assert_allclose(krr_estimate(m, t), k @ C, atol=1e-10)


def test_krr_duplicate_shapes_singular():
    z = np.linspace(-1, 1, N)
    p = _pilots([z, z, -z])
    with pytest.raises(SingularKernelError):
        krr_fit(p, lam=0.0)
    assert np.all(np.isfinite(krr_fit(p, lam=1e-2).coefficients))


def test_median_heuristic_single_shape():
    assert median_heuristic_gamma(np.zeros((1, 4))) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.complex_numbers(max_magnitude=100, allow_nan=False, allow_infinity=False), st.integers(0, 10_000))
def test_estimators_linear_in_measurements(c, seed):
    p = _random_pilots(8, seed)
    t = np.random.default_rng(seed + 1).uniform(-1, 1, N)
    q = PilotSet(p.shapes, c * p.measurements, 0.0)
    tol = 1e-9 * (1 + abs(c)) * np.max(np.abs(p.measurements))
    assert np.max(np.abs(nearest_neighbor_estimate(q, t) - c * nearest_neighbor_estimate(p, t))) <= tol
    assert np.max(np.abs(knn_estimate(q, t) - c * knn_estimate(p, t))) <= tol * 100
    assert np.max(np.abs(krr_estimate(krr_fit(q), t) - c * krr_estimate(krr_fit(p), t))) <= tol * 100
