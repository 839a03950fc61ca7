"""Pure-numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and semantics; :mod:`mvcwm.kernels` picks one at import time.

Array conventions: a batch of matrices is a C-contiguous float64 array of
shape ``(n, a, b)``; weights are shape ``(n,)``.  Symmetric arguments are
assumed symmetric and are not checked.
"""
import numpy as np

BACKEND = "python"


def chol_inv_logdet(S, rtol=1e-14):
    """Inverse and log-determinant of a symmetric positive definite matrix.

    Returns ``None`` instead of raising when a Cholesky pivot is not larger
    than ``rtol * max(diag(S))``; callers decide how to report the failure.
    """
    S = np.asarray(S, dtype=float)
    scale = np.max(np.diag(S)) if S.size else 0.0
    if not np.isfinite(scale) or scale <= 0.0:
        return None
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(L)
    if not np.all(np.isfinite(L)) or np.min(d * d) <= rtol * scale:
        return None
    Linv = np.linalg.inv(L)
    inv = Linv.T @ Linv
    return 0.5 * (inv + inv.T), 2.0 * float(np.sum(np.log(d)))


def quad_trace(R, A, B):
    """``tr(A R_i B R_i^T)`` for every matrix ``R_i`` in the batch."""
    return np.einsum("iab,iab->i", A @ R, R @ B)


def row_scatter(w, R, B):
    """``sum_i w_i R_i B R_i^T``."""
    T = R @ B
    S = np.tensordot(w[:, None, None] * T, R, axes=([0, 2], [0, 2]))
    return 0.5 * (S + S.T)


def col_scatter(w, R, A):
    """``sum_i w_i R_i^T A R_i``."""
    T = A @ R
    S = np.tensordot(w[:, None, None] * R, T, axes=([0, 1], [0, 1]))
    return 0.5 * (S + S.T)


def cross_moments(w, Y, Xs, P):
    """Weighted GLS moments ``sum_i w_i Y_i P Xs_i^T`` and ``sum_i w_i Xs_i P Xs_i^T``."""
    T = Xs @ P
    wT = w[:, None, None] * T
    num = np.tensordot(Y, wT, axes=([0, 2], [0, 2]))
    gram = np.tensordot(Xs, wT, axes=([0, 2], [0, 2]))
    return num, 0.5 * (gram + gram.T)
