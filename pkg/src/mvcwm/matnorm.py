"""The matrix normal distribution.

A ``p x r`` random matrix ``Y`` is matrix normal with mean ``M``, row
covariance ``Phi`` (``p x p``) and column covariance ``Psi`` (``r x r``) when
``vec(Y) ~ N(vec(M), kron(Psi, Phi))`` with column-major ``vec``.  The pair
``(Phi, Psi)`` is only identified up to ``(a Phi, Psi / a)``; see
:func:`normalize_identifiability`.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CholeskyFailure, DegenerateData, DegenerateScale

LOG_2PI = float(np.log(2.0 * np.pi))
RIDGE_EPS = 1e-8
SCALE_TOL = 1e-12


@dataclass(frozen=True)
class MatNormParams:
    """Mean matrix with row and column covariances.

    Parameters
    ----------
    M : ndarray, shape (p, r)
    Phi : ndarray, shape (p, p)
        Row covariance.
    Psi : ndarray, shape (r, r)
        Column covariance.
    normalized : bool
        Whether ``Phi[0, 0] == 1`` is asserted.
    """

    M: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        p, r = M.shape
        if Phi.shape != (p, p) or Psi.shape != (r, r):
            raise ValueError(
                f"inconsistent shapes M{M.shape}, Phi{Phi.shape}, Psi{Psi.shape}"
            )
        if not np.all(np.isfinite(M)):
            raise ValueError("mean matrix has non-finite entries")
        if self.normalized and Phi[0, 0] != 1.0:
            raise ValueError("normalized parameters need Phi[0, 0] == 1")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Psi", Psi)

    @property
    def shape(self):
        return self.M.shape


def chol_inv_logdet(S):
    """Inverse and log-determinant through a Cholesky factorization.

    Raises
    ------
    CholeskyFailure
        If ``S`` is not numerically positive definite.
    """
    out = kernels.chol_inv_logdet(np.ascontiguousarray(S, dtype=float))
    if out is None:
        raise CholeskyFailure("matrix is not positive definite")
    return out


def spd_repair(S):
    """Symmetrize a covariance estimate and factor it, ridging once if needed.

    On a failed factorization ``RIDGE_EPS * trace(S) / dim`` is added to the
    diagonal and the factorization retried.

    Returns
    -------
    S, inverse, logdet, repaired
    """
    S = 0.5 * (S + S.T)
    out = kernels.chol_inv_logdet(S)
    if out is not None:
        return S, out[0], out[1], False
    dim = S.shape[0]
    ridge = RIDGE_EPS * np.trace(S) / dim
    if np.isfinite(ridge) and ridge > 0.0:
        S = S + ridge * np.eye(dim)
        out = kernels.chol_inv_logdet(S)
        if out is not None:
            return S, out[0], out[1], True
    raise DegenerateData(f"{dim}x{dim} covariance estimate is singular after ridge repair")


def batch_log_density(Y, M, Phi_inv, Phi_logdet, Psi_inv, Psi_logdet):
    """Log-densities of a batch ``Y`` of shape ``(n, p, r)``.

    ``M`` is either one ``(p, r)`` mean or a batch of means, one per matrix.
    """
    n, p, r = Y.shape
    R = np.ascontiguousarray(Y - M)
    quad = kernels.quad_trace(R, Phi_inv, Psi_inv)
    return -0.5 * (p * r * LOG_2PI + r * Phi_logdet + p * Psi_logdet + quad)


def log_density(Y, params):
    """Log of the matrix normal density at ``Y``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape != params.M.shape:
        raise ValueError(f"Y has shape {Y.shape}, mean has {params.M.shape}")
    Phi_inv, Phi_logdet = chol_inv_logdet(params.Phi)
    Psi_inv, Psi_logdet = chol_inv_logdet(params.Psi)
    return float(
        batch_log_density(Y[None], params.M, Phi_inv, Phi_logdet, Psi_inv, Psi_logdet)[0]
    )


def _cholesky(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure(str(exc)) from exc


def sample(params, n, seed=None):
    """Draw ``n`` matrices as ``M + L_Phi Z L_Psi^T`` with standard normal ``Z``.

    Returns an array of shape ``(n, p, r)``; the draw is a deterministic
    function of ``seed``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    L_phi = _cholesky(params.Phi)
    L_psi = _cholesky(params.Psi)
    p, r = params.shape
    Z = rng.standard_normal((n, p, r))
    return params.M + L_phi @ Z @ L_psi.T


def normalize_identifiability(Phi, Psi):
    """Rescale ``(Phi, Psi)`` to ``(Phi / a, a Psi)`` with ``a = Phi[0, 0]``.

    The Kronecker product ``kron(Psi, Phi)`` is unchanged.
    """
    Phi = np.asarray(Phi, dtype=float)
    Psi = np.asarray(Psi, dtype=float)
    a = Phi[0, 0]
    if not a > SCALE_TOL:
        raise DegenerateScale(f"leading row-covariance element {a!r} is not positive")
    Phi_n = Phi / a
    Phi_n[0, 0] = 1.0
    return Phi_n, Psi * a


def weighted_flipflop_mle(samples, weights=None, Psi0=None, tol=1e-8, max_iter=100,
                          return_trace=False):
    """Weighted maximum likelihood fit of a matrix normal by alternating updates.

    The mean is the weighted average; the row and column covariances are
    updated in turn, each one conditionally optimal given the other, until
    the relative change in weighted log-likelihood drops below ``tol`` or
    ``max_iter`` sweeps have run.

    Parameters
    ----------
    samples : array_like, shape (n, p, r)
    weights : array_like, shape (n,), optional
        Non-negative observation weights; uniform when omitted.
    Psi0 : ndarray, shape (r, r), optional
        Starting column covariance (identity by default).
    return_trace : bool
        Also return the per-sweep weighted log-likelihoods.

    Returns
    -------
    MatNormParams
        Normalized so that ``Phi[0, 0] == 1``.
    """
    Y = np.ascontiguousarray(samples, dtype=float)
    if Y.ndim == 2:
        Y = Y[:, :, None]
    n, p, r = Y.shape
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be a non-negative vector matching the samples")
    W = w.sum()
    if not W > 0:
        raise ValueError("total weight must be positive")
    if np.count_nonzero(w) < 2:
        raise ValueError("need at least two samples with positive weight")

    M = np.tensordot(w, Y, axes=1) / W
    R = np.ascontiguousarray(Y - M)
    Psi = np.eye(r) if Psi0 is None else np.asarray(Psi0, dtype=float)
    Psi, Psi_inv, Psi_logdet, _ = spd_repair(Psi)

    trace = []
    for _ in range(max_iter):
        Phi = kernels.row_scatter(w, R, Psi_inv) / (r * W)
        Phi, Phi_inv, Phi_logdet, _ = spd_repair(Phi)
        Psi = kernels.col_scatter(w, R, Phi_inv) / (p * W)
        Psi, Psi_inv, Psi_logdet, ridged = spd_repair(Psi)
        if ridged:
            quad = w @ kernels.quad_trace(R, Phi_inv, Psi_inv)
        else:
            # after the Psi update the weighted quadratic term is exactly p*r*W
            quad = p * r * W
        ll = -0.5 * (W * (p * r * LOG_2PI + r * Phi_logdet + p * Psi_logdet) + quad)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * (1.0 + abs(trace[-1])):
            break

    Phi, Psi = normalize_identifiability(Phi, Psi)
    out = MatNormParams(M, Phi, Psi, normalized=True)
    return (out, trace) if return_trace else out
