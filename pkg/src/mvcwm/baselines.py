"""Comparison estimators: the matrix-normal FMR and the vectorized MMN-CWM.

The MN-FMR keeps only the regression block of the MN-CWM: responsibilities
come from ``pi_g phi(Y | X*)`` and the covariates never enter except through
``Bstar_g X*_i``.  The MMN-CWM vectorizes every matrix (column-major) and
fits a CWM with unstructured multivariate normal components by plain EM.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .cwm import (
    CwmParams,
    ECMConfig,
    FittedModel,
    ModelKind,
    _TraceGuard,
    _check_mass,
    _stack,
    bic,
    check_collapse,
    check_responsibilities,
    count_free_params,
    fit_ecm,
    gls_coefficients,
    min_cluster_mass,
    normalize_log_weights,
    regression_log_densities,
    regression_step1,
    regression_step2,
)
from .matnorm import LOG_2PI, chol_inv_logdet, normalize_identifiability, spd_repair


# ---------------------------------------------------------------------------
# MN-FMR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FmrParams:
    pi: np.ndarray
    Bstar: np.ndarray
    PhiY: np.ndarray
    PsiY: np.ndarray

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        Bstar, PhiY, PsiY = (_stack(a, 3) for a in (self.Bstar, self.PhiY, self.PsiY))
        G, p = pi.shape[0], PhiY.shape[1]
        r = PsiY.shape[1]
        if Bstar.shape[:2] != (G, p) or PhiY.shape != (G, p, p) or PsiY.shape != (G, r, r):
            raise ValueError("inconsistent FMR parameter shapes")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixing weights must be positive and sum to 1, got {pi}")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "Bstar", Bstar)
        object.__setattr__(self, "PhiY", PhiY)
        object.__setattr__(self, "PsiY", PsiY)

    @property
    def G(self):
        return self.pi.shape[0]

    @property
    def dims(self):
        return self.PhiY.shape[1], self.Bstar.shape[2] - 1, self.PsiY.shape[1]

    def normalized(self):
        PhiY, PsiY = self.PhiY.copy(), self.PsiY.copy()
        for g in range(self.G):
            PhiY[g], PsiY[g] = normalize_identifiability(PhiY[g], PsiY[g])
        return FmrParams(self.pi, self.Bstar, PhiY, PsiY)

    def permuted(self, order):
        order = list(order)
        return FmrParams(self.pi[order], self.Bstar[order], self.PhiY[order], self.PsiY[order])


def fmr_log_weights(data, params):
    return np.log(params.pi) + regression_log_densities(
        data.Y, data.Xstar, params.Bstar, params.PhiY, params.PsiY)


def fmr_loglik(data, params):
    """Conditional log-likelihood ``sum_i log sum_g pi_g phi(Y_i | X*_i)``."""
    return float(normalize_log_weights(fmr_log_weights(data, params))[1].sum())


def fit_fmr(data, G, z0, PsiY0, config=ECMConfig()):
    """Fit a G-component MN-FMR by ECM.

    Same loop as :func:`mvcwm.cwm.fit_ecm` restricted to the regression block;
    the recorded trace is the conditional log-likelihood of ``Y`` given ``X``.
    """
    if G < 1 or data.n <= G:
        raise ValueError(f"need G >= 1 and n > G (got G={G}, n={data.n})")
    z = check_responsibilities(z0, data.n, G)
    PsiY = _stack(PsiY0, 3).copy()
    min_mass = config.min_mass if config.min_mass is not None else min_cluster_mass(data.p, data.q)
    guard = _TraceGuard(config)
    repairs = 0
    converged = False
    for _ in range(config.max_iter):
        mass = _check_mass(z, min_mass)
        Bstar, PhiY, rep1 = regression_step1(data, z, PsiY)
        PsiY, rep2 = regression_step2(data, z, Bstar, PhiY)
        params = FmrParams(mass / data.n, Bstar, PhiY, PsiY)
        check_collapse(config.collapse_ratio, PhiY=PhiY, PsiY=PsiY)
        z, ll_i = normalize_log_weights(fmr_log_weights(data, params))
        repairs += rep1 + rep2
        if guard.push(ll_i.sum(), repaired=rep1 + rep2 > 0):
            converged = True
            break
    k = count_free_params(data.p, data.q, data.r, G, ModelKind.MN_FMR)
    return FittedModel(
        params=params.normalized(),
        z=z,
        labels=np.argmax(z, axis=1) + 1,
        loglik_trace=tuple(guard.trace),
        bic=bic(guard.trace[-1], k, data.n),
        n_params=k,
        converged=converged,
        iterations=len(guard.trace),
        model_kind=ModelKind.MN_FMR,
        n=data.n,
        n_repairs=repairs,
    )


# ---------------------------------------------------------------------------
# Vectorization and MMN-CWM
# ---------------------------------------------------------------------------

def vec(A):
    """Column-major vectorization of a matrix or of each matrix in a stack."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        return A.T.reshape(-1)
    return np.ascontiguousarray(A.transpose(0, 2, 1).reshape(A.shape[0], -1))


def unvec(v, rows, cols):
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return v.reshape(cols, rows).T
    return v.reshape(v.shape[0], cols, rows).transpose(0, 2, 1)


@dataclass(frozen=True)
class VectorDataset:
    """Vectorized covariates ``x (n, qr)`` and responses ``y (n, pr)``.

    ``p, q, r`` record the original matrix dimensions.
    """

    x: np.ndarray
    y: np.ndarray
    p: int
    q: int
    r: int
    labels: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def xstar(self):
        return np.hstack([np.ones((self.n, 1)), self.x])


def vectorize_dataset(data):
    return VectorDataset(vec(data.X), vec(data.Y), data.p, data.q, data.r, data.labels)


@dataclass(frozen=True)
class MmnCwmParams:
    """Shapes: ``pi (G,)``, ``mu (G, qr)``, ``SigmaX (G, qr, qr)``,
    ``C (G, pr, 1+qr)``, ``SigmaY (G, pr, pr)``."""

    pi: np.ndarray
    mu: np.ndarray
    SigmaX: np.ndarray
    C: np.ndarray
    SigmaY: np.ndarray

    @property
    def G(self):
        return len(self.pi)

    def permuted(self, order):
        order = list(order)
        return MmnCwmParams(*(np.asarray(getattr(self, f))[order]
                              for f in ("pi", "mu", "SigmaX", "C", "SigmaY")))


def to_vectorized_params(params):
    """The MMN-CWM parameters equivalent to MN-CWM parameters.

    ``vec(Bstar X*) = (1_r kron beta) + (I_r kron B) vec(X)`` and the
    covariances become ``kron(Psi, Phi)``.
    """
    p, q, r = params.dims
    G = params.G
    C = np.empty((G, p * r, 1 + q * r))
    for g in range(G):
        beta, B = params.Bstar[g][:, :1], params.Bstar[g][:, 1:]
        C[g, :, :1] = np.kron(np.ones((r, 1)), beta)
        C[g, :, 1:] = np.kron(np.eye(r), B)
    return MmnCwmParams(
        pi=params.pi.copy(),
        mu=vec(params.M),
        SigmaX=np.stack([np.kron(params.PsiX[g], params.PhiX[g]) for g in range(G)]),
        C=C,
        SigmaY=np.stack([np.kron(params.PsiY[g], params.PhiY[g]) for g in range(G)]),
    )


_ONE = np.ones((1, 1))


def _mvn_log_density(R, Sigma_inv, logdet):
    d = R.shape[1]
    quad = kernels.quad_trace(np.ascontiguousarray(R[:, :, None]), Sigma_inv, _ONE)
    return -0.5 * (d * LOG_2PI + logdet + quad)


def mmn_log_weights(vdata, params):
    out = np.empty((vdata.n, params.G))
    xstar = vdata.xstar
    for g in range(params.G):
        Sx_inv, Sx_ld = chol_inv_logdet(params.SigmaX[g])
        Sy_inv, Sy_ld = chol_inv_logdet(params.SigmaY[g])
        out[:, g] = (
            np.log(params.pi[g])
            + _mvn_log_density(vdata.x - params.mu[g], Sx_inv, Sx_ld)
            + _mvn_log_density(vdata.y - xstar @ params.C[g].T, Sy_inv, Sy_ld)
        )
    return out


def mmn_loglik(vdata, params):
    return float(normalize_log_weights(mmn_log_weights(vdata, params))[1].sum())


def mmn_min_mass(vdata):
    """Smallest column mass accepted by the MMN-CWM M-step."""
    return max(vdata.q * vdata.r, vdata.p * vdata.r) + 1


def mmn_m_step(vdata, z, min_mass=None):
    """Closed-form M-step: weighted means, weighted OLS, weighted scatters."""
    if min_mass is None:
        min_mass = mmn_min_mass(vdata)
    mass = _check_mass(z, min_mass)
    G = z.shape[1]
    x, y = vdata.x, vdata.y
    xstar = vdata.xstar
    dx, dy = x.shape[1], y.shape[1]
    mu = (z.T @ x) / mass[:, None]
    SigmaX = np.empty((G, dx, dx))
    C = np.empty((G, dy, 1 + dx))
    SigmaY = np.empty((G, dy, dy))
    repairs = 0
    ys = np.ascontiguousarray(y[:, :, None])
    xs = np.ascontiguousarray(xstar[:, :, None])
    for g in range(G):
        w = np.ascontiguousarray(z[:, g])
        D = np.ascontiguousarray((x - mu[g])[:, :, None])
        SigmaX[g], _, _, rx = spd_repair(kernels.row_scatter(w, D, _ONE) / mass[g])
        C[g] = gls_coefficients(ys, xs, w, _ONE)
        E = np.ascontiguousarray((y - xstar @ C[g].T)[:, :, None])
        SigmaY[g], _, _, ry = spd_repair(kernels.row_scatter(w, E, _ONE) / mass[g])
        repairs += rx + ry
    return MmnCwmParams(mass / vdata.n, mu, SigmaX, C, SigmaY), repairs


def fit_mmn_cwm(data, G, z0, config=ECMConfig()):
    """Fit a G-component MMN-CWM by EM on vectorized data.

    ``data`` may be a :class:`VectorDataset` or a matrix :class:`Dataset`
    (vectorized on entry).
    """
    vdata = data if isinstance(data, VectorDataset) else vectorize_dataset(data)
    if G < 1 or vdata.n <= G:
        raise ValueError(f"need G >= 1 and n > G (got G={G}, n={vdata.n})")
    z = check_responsibilities(z0, vdata.n, G)
    guard = _TraceGuard(config)
    repairs = 0
    converged = False
    for _ in range(config.max_iter):
        params, rep = mmn_m_step(vdata, z, config.min_mass)
        check_collapse(config.collapse_ratio, SigmaX=params.SigmaX, SigmaY=params.SigmaY)
        z, ll_i = normalize_log_weights(mmn_log_weights(vdata, params))
        repairs += rep
        if guard.push(ll_i.sum(), repaired=rep > 0):
            converged = True
            break
    k = count_free_params(vdata.p, vdata.q, vdata.r, G, ModelKind.MMN_CWM)
    return FittedModel(
        params=params,
        z=z,
        labels=np.argmax(z, axis=1) + 1,
        loglik_trace=tuple(guard.trace),
        bic=bic(guard.trace[-1], k, vdata.n),
        n_params=k,
        converged=converged,
        iterations=len(guard.trace),
        model_kind=ModelKind.MMN_CWM,
        n=vdata.n,
        n_repairs=repairs,
        extra={"dims": (vdata.p, vdata.q, vdata.r)},
    )


def fit_model(data, G, model_kind, z0, PsiX0=None, PsiY0=None, config=ECMConfig()):
    """Dispatch to the estimator for ``model_kind``.

    ``PsiX0``/``PsiY0`` are the initial column covariances (ignored where the
    model has none).
    """
    kind = ModelKind(model_kind)
    if kind is ModelKind.MN_CWM:
        return fit_ecm(data, G, z0, PsiX0, PsiY0, config)
    if kind is ModelKind.MN_FMR:
        return fit_fmr(data, G, z0, PsiY0, config)
    return fit_mmn_cwm(data, G, z0, config)


def loglik_at(data, params):
    """Log-likelihood of ``data`` at any of the three parameter types."""
    if isinstance(params, CwmParams):
        from .cwm import observed_loglik
        return observed_loglik(data, params)
    if isinstance(params, FmrParams):
        return fmr_loglik(data, params)
    vdata = data if isinstance(data, VectorDataset) else vectorize_dataset(data)
    return mmn_loglik(vdata, params)
