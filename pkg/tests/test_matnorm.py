import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from mvcwm.errors import CholeskyFailure, DegenerateData, DegenerateScale
from mvcwm.matnorm import (
    LOG_2PI, MatNormParams, chol_inv_logdet, log_density, normalize_identifiability, sample,
    spd_repair, weighted_flipflop_mle,
)


def vec_oracle(Y, params):
    """Density of vec(Y) ~ N(vec(M), kron(Psi, Phi)) with column-major vec."""
    return multivariate_normal(params.M.ravel(order="F"),
                               np.kron(params.Psi, params.Phi)).logpdf(Y.ravel(order="F"))


def test_standard_normal_at_mode():
    params = MatNormParams([[0.0]], [[1.0]], [[1.0]])
    assert log_density([[0.0]], params) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)
    assert -0.5 * LOG_2PI == pytest.approx(-0.918939, abs=1e-6)


def test_matches_kronecker_oracle(matnorm_params, rng):
    for _ in range(20):
        Y = matnorm_params.M + rng.standard_normal(matnorm_params.shape)
        assert log_density(Y, matnorm_params) == pytest.approx(
            vec_oracle(Y, matnorm_params), abs=1e-10)


def test_scale_invariance(matnorm_params, rng):
    Y = rng.standard_normal(matnorm_params.shape)
    rescaled = MatNormParams(matnorm_params.M, 2.0 * matnorm_params.Phi, 0.5 * matnorm_params.Psi)
    assert log_density(Y, rescaled) == pytest.approx(log_density(Y, matnorm_params), abs=1e-12)


def test_shape_validation():
    with pytest.raises(ValueError):
        MatNormParams(np.zeros((2, 3)), np.eye(3), np.eye(3))
    with pytest.raises(ValueError):
        log_density(np.zeros((3, 2)), MatNormParams(np.zeros((2, 3)), np.eye(2), np.eye(3)))


def test_log_density_rejects_non_pd():
    with pytest.raises(CholeskyFailure):
        log_density(np.zeros((2, 2)), MatNormParams(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2)))


def test_chol_inv_logdet_raises():
    with pytest.raises(CholeskyFailure):
        chol_inv_logdet(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sample_is_deterministic(matnorm_params):
    a = sample(matnorm_params, 5, seed=3)
    b = sample(matnorm_params, 5, seed=3)
    assert a.shape == (5, 2, 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample(matnorm_params, 5, seed=4))


def test_sample_mean_clt():
    params = MatNormParams(np.zeros((2, 2)), np.eye(2), np.eye(2))
    Y = sample(params, 100_000, seed=1)
    # 3 sigma / sqrt(n) with sigma = 1 is about 0.0095
    assert np.abs(Y.mean(axis=0)).max() < 0.02


def test_sample_vec_covariance_is_kronecker(matnorm_params):
    Y = sample(matnorm_params, 100_000, seed=2)
    V = Y.transpose(0, 2, 1).reshape(len(Y), -1)  # column-major vec of each sample
    C = np.cov(V, rowvar=False)
    K = np.kron(matnorm_params.Psi, matnorm_params.Phi)
    assert np.linalg.norm(C - K) / np.linalg.norm(K) < 0.05


def test_normalize_examples():
    Phi, Psi = normalize_identifiability(np.diag([4.0, 1.0]), np.eye(2))
    np.testing.assert_array_equal(Phi, np.diag([1.0, 0.25]))
    np.testing.assert_array_equal(Psi, 4 * np.eye(2))
    Phi2, Psi2 = normalize_identifiability(Phi, Psi)
    np.testing.assert_array_equal(Phi2, Phi)
    np.testing.assert_array_equal(Psi2, Psi)


def test_normalize_rejects_tiny_scale():
    with pytest.raises(DegenerateScale):
        normalize_identifiability(np.diag([1e-13, 1.0]), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_normalize_preserves_kronecker(p, r, seed):
    gen = np.random.default_rng(seed)
    A = gen.standard_normal((p, p))
    B = gen.standard_normal((r, r))
    Phi = A @ A.T + 0.1 * np.eye(p)
    Psi = B @ B.T + 0.1 * np.eye(r)
    Phi_n, Psi_n = normalize_identifiability(Phi, Psi)
    assert Phi_n[0, 0] == 1.0
    K = np.kron(Psi, Phi)
    np.testing.assert_allclose(np.kron(Psi_n, Phi_n), K, rtol=0, atol=1e-12 * np.abs(K).max())


def test_spd_repair_ridges_once():
    S = np.array([[1.0, 1.0], [1.0, 1.0]])
    S2, inv, logdet, repaired = spd_repair(S)
    assert repaired
    assert np.all(np.linalg.eigvalsh(S2) > 0)
    with pytest.raises(DegenerateData):
        spd_repair(np.zeros((2, 2)))


def test_flipflop_recovers_kronecker(matnorm_params):
    Y = sample(matnorm_params, 2000, seed=5)
    est = weighted_flipflop_mle(Y)
    assert est.normalized and est.Phi[0, 0] == 1.0
    K = np.kron(matnorm_params.Psi, matnorm_params.Phi)
    assert np.linalg.norm(np.kron(est.Psi, est.Phi) - K) / np.linalg.norm(K) < 0.10
    np.testing.assert_allclose(est.M, Y.mean(axis=0))


def test_flipflop_trace_non_decreasing(matnorm_params):
    Y = sample(matnorm_params, 300, seed=6)
    w = np.random.default_rng(0).uniform(size=300)
    _, trace = weighted_flipflop_mle(Y, w, tol=1e-14, max_iter=60, return_trace=True)
    drops = np.diff(trace)
    assert np.all(drops >= -1e-9 * (1 + np.abs(np.asarray(trace[:-1]))))


def test_flipflop_trace_matches_density(matnorm_params):
    """The reported weighted log-likelihood is the sum of log-densities at the estimate."""
    Y = sample(matnorm_params, 200, seed=8)
    w = np.random.default_rng(1).uniform(size=200)
    est, trace = weighted_flipflop_mle(Y, w, tol=1e-14, max_iter=200, return_trace=True)
    direct = sum(wi * log_density(y, est) for wi, y in zip(w, Y))
    assert trace[-1] == pytest.approx(direct, rel=1e-9)


def test_flipflop_scalar_columns_is_weighted_covariance(rng):
    """With r = 1 the row covariance times Psi is the weighted covariance."""
    Y = rng.standard_normal((50, 3, 1)) @ np.ones((1, 1))
    w = rng.uniform(size=50)
    est = weighted_flipflop_mle(Y, w)
    m = (w @ Y[:, :, 0]) / w.sum()
    D = Y[:, :, 0] - m
    S = (w[:, None] * D).T @ D / w.sum()
    np.testing.assert_allclose(est.Phi * est.Psi[0, 0], S, rtol=1e-10)


def test_flipflop_degenerate_repeated_sample():
    Y = np.repeat(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 10, axis=0)
    with pytest.raises(DegenerateData):
        weighted_flipflop_mle(Y)


def test_flipflop_weight_validation(matnorm_params):
    Y = sample(matnorm_params, 5, seed=1)
    with pytest.raises(ValueError):
        weighted_flipflop_mle(Y, -np.ones(5))
    with pytest.raises(ValueError):
        weighted_flipflop_mle(Y, np.array([1.0, 0, 0, 0, 0]))
