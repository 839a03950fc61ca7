"""Matrix-normal cluster-weighted model (MN-CWM) and its ECM fit.

Each component ``g`` has a weight ``pi_g``, a matrix normal marginal for the
``q x r`` covariates ``X`` (mean ``M_g``, covariances ``PhiX_g``, ``PsiX_g``)
and a matrix normal regression of the ``p x r`` responses ``Y`` on the
augmented design ``X* = [1; X]`` (coefficients ``Bstar_g``, covariances
``PhiY_g``, ``PsiY_g``).

ECM update order
----------------
One iteration, given responsibilities ``z`` and the previous column
covariances ``PsiX``, ``PsiY``:

1. CM-step 1: weights, covariate means, GLS coefficients (weighted by the
   previous ``PsiY``), then the row covariances ``PhiX``/``PhiY`` from the
   *new* mean/coefficients and the *previous* column covariances.
2. CM-step 2: the column covariances from the new row covariances.
3. E-step at the new parameters; its log-normalizer is the observed-data
   log-likelihood recorded in the trace.

This ordering is fixed; both CM-steps are exact conditional maximizers, so
the trace is non-decreasing.
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import AllZeroRow, DegenerateData, EmptyCluster, NonMonotone, SingularGram
from .matnorm import LOG_2PI, chol_inv_logdet, normalize_identifiability, spd_repair


class ModelKind(str, Enum):
    MN_CWM = "cwm"
    MN_FMR = "fmr"
    MMN_CWM = "mmn"

    @property
    def joint(self):
        """Whether the likelihood covers ``(X, Y)`` jointly (vs. ``Y | X``)."""
        return self is not ModelKind.MN_FMR


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """``n`` pairs of covariate matrices ``X_i`` (q x r) and responses ``Y_i`` (p x r).

    Parameters
    ----------
    X : array_like, shape (n, q, r)
    Y : array_like, shape (n, p, r)
    labels : array_like of int, shape (n,), optional
        True component labels, 1-based.
    """

    X: np.ndarray
    Y: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 3 or Y.ndim != 3:
            raise ValueError("X and Y must be stacks of matrices, shape (n, rows, cols)")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"{X.shape[0]} covariate matrices but {Y.shape[0]} responses")
        if X.shape[2] != Y.shape[2]:
            raise ValueError("X and Y must have the same number of columns r")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "Y", _readonly(Y))
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(int)
            if labels.shape != (X.shape[0],):
                raise ValueError("labels must have one entry per unit")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.Y.shape[1]

    @property
    def q(self):
        return self.X.shape[1]

    @property
    def r(self):
        return self.X.shape[2]

    @cached_property
    def Xstar(self):
        """Augmented designs, shape (n, 1+q, r)."""
        return _readonly(augment_design(self.X))


def augment_design(X):
    """Prepend a row of ones to a ``q x r`` matrix (or to each of a stack)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        return np.vstack([np.ones((1, X.shape[1])), X])
    ones = np.ones((X.shape[0], 1, X.shape[2]))
    return np.concatenate([ones, X], axis=1)


def check_responsibilities(z, n=None, G=None, atol=1e-12):
    """Validate an ``n x G`` responsibility matrix and return it as float array."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("responsibilities must be a 2-d array")
    if n is not None and z.shape[0] != n or G is not None and z.shape[1] != G:
        raise ValueError(f"responsibilities have shape {z.shape}, expected ({n}, {G})")
    if np.any(z < 0) or np.any(z > 1 + atol):
        raise ValueError("responsibilities must lie in [0, 1]")
    if np.any(np.abs(z.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("responsibility rows must sum to one")
    return z


@dataclass(frozen=True)
class ComponentParams:
    pi: float
    M: np.ndarray
    PhiX: np.ndarray
    PsiX: np.ndarray
    Bstar: np.ndarray
    PhiY: np.ndarray
    PsiY: np.ndarray


def _stack(a, ndim):
    a = np.asarray(a, dtype=float)
    while a.ndim < ndim:
        a = a[None]
    return np.ascontiguousarray(a)


@dataclass(frozen=True)
class CwmParams:
    """Parameters of a G-component MN-CWM, stored as stacked arrays.

    Array shapes: ``pi (G,)``, ``M (G, q, r)``, ``PhiX (G, q, q)``,
    ``PsiX (G, r, r)``, ``Bstar (G, p, 1+q)``, ``PhiY (G, p, p)``,
    ``PsiY (G, r, r)``.  ``Bstar[:, :, 0]`` holds the intercepts.
    """

    pi: np.ndarray
    M: np.ndarray
    PhiX: np.ndarray
    PsiX: np.ndarray
    Bstar: np.ndarray
    PhiY: np.ndarray
    PsiY: np.ndarray

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        arrays = {name: _stack(getattr(self, name), 3)
                  for name in ("M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY")}
        G = pi.shape[0]
        _, q, r = arrays["M"].shape
        p = arrays["PhiY"].shape[1]
        expected = {
            "M": (G, q, r), "PhiX": (G, q, q), "PsiX": (G, r, r),
            "Bstar": (G, p, 1 + q), "PhiY": (G, p, p), "PsiY": (G, r, r),
        }
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ValueError(f"{name} has shape {arrays[name].shape}, expected {shape}")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixing weights must be positive and sum to 1, got {pi}")
        object.__setattr__(self, "pi", pi)
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @property
    def G(self):
        return self.pi.shape[0]

    @property
    def dims(self):
        """``(p, q, r)``."""
        return self.PhiY.shape[1], self.M.shape[1], self.M.shape[2]

    @property
    def components(self):
        return [
            ComponentParams(float(self.pi[g]), self.M[g], self.PhiX[g], self.PsiX[g],
                            self.Bstar[g], self.PhiY[g], self.PsiY[g])
            for g in range(self.G)
        ]

    @classmethod
    def from_components(cls, components):
        return cls(
            pi=[c.pi for c in components],
            **{name: np.stack([getattr(c, name) for c in components])
               for name in ("M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY")},
        )

    def normalized(self):
        """Copy with every ``(Phi, Psi)`` pair rescaled so that ``Phi[0, 0] == 1``."""
        PhiX, PsiX, PhiY, PsiY = (a.copy() for a in (self.PhiX, self.PsiX, self.PhiY, self.PsiY))
        for g in range(self.G):
            PhiX[g], PsiX[g] = normalize_identifiability(PhiX[g], PsiX[g])
            PhiY[g], PsiY[g] = normalize_identifiability(PhiY[g], PsiY[g])
        return CwmParams(self.pi, self.M, PhiX, PsiX, self.Bstar, PhiY, PsiY)

    def permuted(self, order):
        """Components reordered so that new component ``k`` is old ``order[k]``."""
        order = list(order)
        return CwmParams(*(getattr(self, f)[order] for f in
                           ("pi", "M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY")))


def _factor_stack(S):
    invs = np.empty_like(S)
    logdets = np.empty(S.shape[0])
    for g in range(S.shape[0]):
        invs[g], logdets[g] = chol_inv_logdet(S[g])
    return invs, logdets


def regression_log_densities(Y, Xstar, Bstar, PhiY, PsiY):
    """``log phi(Y_i | X*_i; Bstar_g X*_i, PhiY_g, PsiY_g)`` as an (n, G) array."""
    n, p, r = Y.shape
    G = Bstar.shape[0]
    out = np.empty((n, G))
    Phi_inv, Phi_ld = _factor_stack(PhiY)
    Psi_inv, Psi_ld = _factor_stack(PsiY)
    const = p * r * LOG_2PI
    for g in range(G):
        R = np.ascontiguousarray(Y - Bstar[g] @ Xstar)
        quad = kernels.quad_trace(R, Phi_inv[g], Psi_inv[g])
        out[:, g] = -0.5 * (const + r * Phi_ld[g] + p * Psi_ld[g] + quad)
    return out


def marginal_log_densities(X, M, PhiX, PsiX):
    """``log phi(X_i; M_g, PhiX_g, PsiX_g)`` as an (n, G) array."""
    n, q, r = X.shape
    G = M.shape[0]
    out = np.empty((n, G))
    Phi_inv, Phi_ld = _factor_stack(PhiX)
    Psi_inv, Psi_ld = _factor_stack(PsiX)
    const = q * r * LOG_2PI
    for g in range(G):
        D = np.ascontiguousarray(X - M[g])
        quad = kernels.quad_trace(D, Phi_inv[g], Psi_inv[g])
        out[:, g] = -0.5 * (const + r * Phi_ld[g] + q * Psi_ld[g] + quad)
    return out


def component_log_weights(data, params):
    """``log pi_g + log phi(Y|X*) + log phi(X)`` for every unit and component."""
    return (
        np.log(params.pi)
        + regression_log_densities(data.Y, data.Xstar, params.Bstar, params.PhiY, params.PsiY)
        + marginal_log_densities(data.X, params.M, params.PhiX, params.PsiX)
    )


def normalize_log_weights(logw):
    """Row-normalize log weights; returns ``(z, per-unit log-likelihood)``."""
    ll_i = logsumexp(logw, axis=1)
    if not np.all(np.isfinite(ll_i)):
        bad = int(np.flatnonzero(~np.isfinite(ll_i))[0])
        raise AllZeroRow(f"all component densities vanish for unit {bad}")
    z = np.exp(logw - ll_i[:, None])
    z /= z.sum(axis=1, keepdims=True)
    return z, ll_i


def joint_log_density(X, Y, params):
    """Log of the mixture density ``p(X, Y)`` at a single pair."""
    data = Dataset(np.asarray(X, dtype=float)[None], np.asarray(Y, dtype=float)[None])
    return float(logsumexp(component_log_weights(data, params)[0]))


def e_step(data, params):
    """Posterior membership probabilities, shape (n, G)."""
    return normalize_log_weights(component_log_weights(data, params))[0]


def observed_loglik(data, params):
    """Observed-data log-likelihood ``sum_i log p(X_i, Y_i)``."""
    return float(logsumexp(component_log_weights(data, params), axis=1).sum())


def min_cluster_mass(p, q):
    """Smallest column mass of ``z`` accepted by the CM-steps."""
    return max(p, q) + 1


def _check_mass(z, threshold):
    mass = z.sum(axis=0)
    for g, m in enumerate(mass):
        if m < threshold:
            raise EmptyCluster(g, float(m), threshold)
    return mass


class CM1Result(NamedTuple):
    pi: np.ndarray
    M: np.ndarray
    Bstar: np.ndarray
    PhiX: np.ndarray
    PhiY: np.ndarray
    n_repairs: int = 0


class CM2Result(NamedTuple):
    PsiX: np.ndarray
    PsiY: np.ndarray
    n_repairs: int = 0


def gls_coefficients(Y, Xstar, w, PsiY_inv):
    """Weighted GLS coefficients ``[sum w Y P X*^T][sum w X* P X*^T]^{-1}``."""
    num, gram = kernels.cross_moments(w, Y, Xstar, PsiY_inv)
    out = kernels.chol_inv_logdet(gram, 1e-12)
    if out is None:
        raise SingularGram(f"{gram.shape[0]}x{gram.shape[0]} weighted design Gram is singular")
    return num @ out[0]


def regression_step1(data, z, PsiY_prev):
    """Coefficient and response row-covariance updates shared by CWM and FMR."""
    n, p, r = data.Y.shape
    G = z.shape[1]
    mass = z.sum(axis=0)
    Bstar = np.empty((G, p, 1 + data.q))
    PhiY = np.empty((G, p, p))
    repairs = 0
    for g in range(G):
        w = np.ascontiguousarray(z[:, g])
        Psi_inv, _ = chol_inv_logdet(PsiY_prev[g])
        Bstar[g] = gls_coefficients(data.Y, data.Xstar, w, Psi_inv)
        R = np.ascontiguousarray(data.Y - Bstar[g] @ data.Xstar)
        S = kernels.row_scatter(w, R, Psi_inv) / (r * mass[g])
        PhiY[g], _, _, ridged = spd_repair(S)
        repairs += ridged
    return Bstar, PhiY, repairs


def regression_step2(data, z, Bstar, PhiY):
    """Response column-covariance update shared by CWM and FMR."""
    n, p, r = data.Y.shape
    G = z.shape[1]
    mass = z.sum(axis=0)
    PsiY = np.empty((G, r, r))
    repairs = 0
    for g in range(G):
        w = np.ascontiguousarray(z[:, g])
        Phi_inv, _ = chol_inv_logdet(PhiY[g])
        R = np.ascontiguousarray(data.Y - Bstar[g] @ data.Xstar)
        S = kernels.col_scatter(w, R, Phi_inv) / (p * mass[g])
        PsiY[g], _, _, ridged = spd_repair(S)
        repairs += ridged
    return PsiY, repairs


def cm_step1(data, z, PsiX_prev, PsiY_prev, min_mass=None):
    """First conditional maximization: everything except the column covariances.

    Parameters
    ----------
    data : Dataset
    z : ndarray, shape (n, G)
    PsiX_prev, PsiY_prev : ndarray, shape (G, r, r)
        Column covariances from the previous iteration (held fixed).
    min_mass : float, optional
        Minimum column mass of ``z``; defaults to ``max(p, q) + 1``.

    Raises
    ------
    EmptyCluster, SingularGram, DegenerateData
    """
    n, q, r = data.X.shape
    if min_mass is None:
        min_mass = min_cluster_mass(data.p, q)
    mass = _check_mass(z, min_mass)
    G = z.shape[1]
    pi = mass / n
    M = np.einsum("ig,iqr->gqr", z, data.X) / mass[:, None, None]
    PhiX = np.empty((G, q, q))
    repairs = 0
    for g in range(G):
        w = np.ascontiguousarray(z[:, g])
        Psi_inv, _ = chol_inv_logdet(PsiX_prev[g])
        D = np.ascontiguousarray(data.X - M[g])
        S = kernels.row_scatter(w, D, Psi_inv) / (r * mass[g])
        PhiX[g], _, _, ridged = spd_repair(S)
        repairs += ridged
    Bstar, PhiY, reg_repairs = regression_step1(data, z, PsiY_prev)
    return CM1Result(pi, M, Bstar, PhiX, PhiY, repairs + reg_repairs)


def cm_step2(data, z, M, Bstar, PhiX, PhiY):
    """Second conditional maximization: the column covariances.

    Raises
    ------
    DegenerateData
        If an update is singular even after ridge repair.
    """
    n, q, r = data.X.shape
    G = z.shape[1]
    mass = z.sum(axis=0)
    PsiX = np.empty((G, r, r))
    repairs = 0
    for g in range(G):
        w = np.ascontiguousarray(z[:, g])
        Phi_inv, _ = chol_inv_logdet(PhiX[g])
        D = np.ascontiguousarray(data.X - M[g])
        S = kernels.col_scatter(w, D, Phi_inv) / (q * mass[g])
        PsiX[g], _, _, ridged = spd_repair(S)
        repairs += ridged
    PsiY, reg_repairs = regression_step2(data, z, Bstar, PhiY)
    return CM2Result(PsiX, PsiY, repairs + reg_repairs)


@dataclass(frozen=True)
class ECMConfig:
    """Stopping rule and safeguards for the (EC)M loops.

    Iteration stops when ``|l_t - l_{t-1}| / (1 + |l_t|) < tol`` or after
    ``max_iter`` iterations.  A decrease larger than
    ``monotone_tol * (1 + |l_{t-1}|)`` raises :class:`NonMonotone`; in an
    iteration where a covariance needed ridge repair, any decrease beyond
    ``1e-8 * (1 + |l_{t-1}|)`` raises :class:`DegenerateData` instead.  A covariance whose
    eigenvalue ratio falls below ``collapse_ratio`` aborts the run with
    :class:`DegenerateData`: the component is collapsing onto a few units,
    the likelihood is unbounded along that path and double precision can no
    longer resolve the density.
    """

    tol: float = 1e-8
    max_iter: int = 1000
    min_mass: Optional[float] = None
    monotone_tol: float = 1e-6
    collapse_ratio: float = 1e-10


# callables invoked with every FittedModel on construction (used for auditing)
FIT_OBSERVERS = []


@dataclass(frozen=True)
class FittedModel:
    """Result of one fit.

    ``labels`` are 1-based MAP assignments; ``z`` are the responsibilities at
    the final parameters.
    """

    params: object
    z: np.ndarray
    labels: np.ndarray
    loglik_trace: tuple
    bic: float
    n_params: int
    converged: bool
    iterations: int
    model_kind: ModelKind
    n: int
    n_repairs: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.loglik_trace:
            raise ValueError("empty log-likelihood trace")
        if self.z.shape[0] != self.n or self.labels.shape != (self.n,):
            raise ValueError("responsibilities and labels must cover all n units")
        for observer in FIT_OBSERVERS:
            observer(self)

    @property
    def loglik(self):
        return self.loglik_trace[-1]

    @property
    def G(self):
        return self.z.shape[1]

    def monotonicity_violations(self, rel=1e-8):
        """Indices ``t`` where the trace dropped by more than ``rel * (1 + |l_t|)``."""
        tr = np.asarray(self.loglik_trace)
        drops = tr[:-1] - tr[1:]
        return np.flatnonzero(drops > rel * (1.0 + np.abs(tr[:-1]))) + 1


def check_collapse(ratio, **stacks):
    """Raise :class:`DegenerateData` if any covariance is near-singular."""
    for name, stack in stacks.items():
        lam = np.linalg.eigvalsh(stack)
        rel = lam[:, 0] / lam[:, -1]
        bad = np.flatnonzero(~(rel >= ratio))
        if bad.size:
            g = int(bad[0])
            raise DegenerateData(
                f"component {g} is collapsing: {name} eigenvalue ratio {rel[g]:.3g} < {ratio:g}"
            )


class _TraceGuard:
    """Records the log-likelihood trace and applies the stopping rule.

    A ridge-repaired step is not an exact conditional maximizer.  It is
    accepted as long as the likelihood does not fall by more than
    ``repair_tol * (1 + |l|)``; otherwise the run is degenerate and aborted.
    """

    repair_tol = 1e-8

    def __init__(self, config):
        self.config = config
        self.trace = []

    def push(self, ll, repaired=False):
        tr = self.trace
        tr.append(float(ll))
        if len(tr) < 2:
            return False
        prev = tr[-2]
        delta = tr[-1] - prev
        scale = 1.0 + abs(prev)
        if repaired and delta < -self.repair_tol * scale:
            raise DegenerateData(
                f"ridge-repaired step lowered the log-likelihood from {prev:.10g} "
                f"to {tr[-1]:.10g} at iteration {len(tr)}"
            )
        if delta < -self.config.monotone_tol * scale:
            raise NonMonotone(
                f"log-likelihood fell from {prev:.10g} to {tr[-1]:.10g} at iteration {len(tr)}"
            )
        return abs(delta) < self.config.tol * (1.0 + abs(tr[-1]))


def fit_ecm(data, G, z0, PsiX0, PsiY0, config=ECMConfig()):
    """Fit a G-component MN-CWM by ECM from initial responsibilities.

    Parameters
    ----------
    data : Dataset
    G : int
    z0 : ndarray, shape (n, G)
        Initial responsibilities used by the first CM-step.
    PsiX0, PsiY0 : ndarray, shape (G, r, r)
        Initial column covariances used by the first CM-step.
    config : ECMConfig

    Returns
    -------
    FittedModel
        Reported parameters are identifiability-normalized.
    """
    if G < 1 or data.n <= G:
        raise ValueError(f"need G >= 1 and n > G (got G={G}, n={data.n})")
    z = check_responsibilities(z0, data.n, G)
    PsiX = _stack(PsiX0, 3).copy()
    PsiY = _stack(PsiY0, 3).copy()
    guard = _TraceGuard(config)
    repairs = 0
    converged = False
    params = None
    for _ in range(config.max_iter):
        c1 = cm_step1(data, z, PsiX, PsiY, config.min_mass)
        c2 = cm_step2(data, z, c1.M, c1.Bstar, c1.PhiX, c1.PhiY)
        PsiX, PsiY = c2.PsiX, c2.PsiY
        params = CwmParams(c1.pi, c1.M, c1.PhiX, PsiX, c1.Bstar, c1.PhiY, PsiY)
        check_collapse(config.collapse_ratio, PhiX=c1.PhiX, PsiX=PsiX, PhiY=c1.PhiY, PsiY=PsiY)
        z, ll_i = normalize_log_weights(component_log_weights(data, params))
        step_repairs = c1.n_repairs + c2.n_repairs
        repairs += step_repairs
        if guard.push(ll_i.sum(), repaired=step_repairs > 0):
            converged = True
            break
    loglik = guard.trace[-1]
    k = count_free_params(data.p, data.q, data.r, G, ModelKind.MN_CWM)
    return FittedModel(
        params=params.normalized(),
        z=z,
        labels=np.argmax(z, axis=1) + 1,
        loglik_trace=tuple(guard.trace),
        bic=bic(loglik, k, data.n),
        n_params=k,
        converged=converged,
        iterations=len(guard.trace),
        model_kind=ModelKind.MN_CWM,
        n=data.n,
        n_repairs=repairs,
    )


def covariance_dof(rows, cols, kronecker=True):
    """Free entries of the covariance of a ``rows x cols`` random matrix.

    ``Psi (x) Phi`` has ``rows(rows+1)/2 + cols(cols+1)/2 - 1`` (one scale is
    shared by the pair); an unstructured covariance of the vectorized matrix
    has ``d(d+1)/2`` with ``d = rows * cols``.
    """
    if kronecker:
        return rows * (rows + 1) // 2 + cols * (cols + 1) // 2 - 1
    d = rows * cols
    return d * (d + 1) // 2


def count_free_params(p, q, r, G, model_kind):
    """Number of free parameters, with one scale fixed per (Phi, Psi) pair."""
    kind = ModelKind(model_kind)
    weights = G - 1
    if kind is ModelKind.MN_CWM:
        per = q * r + covariance_dof(q, r) + p * (q + 1) + covariance_dof(p, r)
    elif kind is ModelKind.MN_FMR:
        per = p * (q + 1) + covariance_dof(p, r)
    else:
        qr, pr = q * r, p * r
        per = (qr + covariance_dof(q, r, kronecker=False) + pr * (1 + qr)
               + covariance_dof(p, r, kronecker=False))
    return weights + G * per


def bic(loglik, n_params, N):
    """``2 loglik - n_params log N``; larger is better."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return 2.0 * loglik - n_params * np.log(N)
