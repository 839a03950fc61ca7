"""Starting values for the (EC)M fits.

A start consists of initial responsibilities plus, for the matrix-normal
models, initial column covariances ``PsiX``/``PsiY`` for the first CM-step.
Three strategies produce responsibilities; :func:`best_initialization` runs a
full fit from each and keeps the one with the highest log-likelihood.  The
random column covariances are drawn once and shared by all strategies.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from ._random import int_seed, rng
from .baselines import fit_model, vec
from .cwm import ECMConfig, ModelKind
from .errors import AllStrategiesFailed, DegenerateClustering, NonMonotone, NumericalError
from .matnorm import batch_log_density, chol_inv_logdet, weighted_flipflop_mle

SPD_EIGEN_RANGE = (1.0, 10.0)


class Strategy(str, Enum):
    SOFT_RANDOM = "soft_random"
    KMEANS = "kmeans"
    MATNORM_MIXTURE = "matnorm_mixture"


STRATEGY_ORDER = (Strategy.SOFT_RANDOM, Strategy.KMEANS, Strategy.MATNORM_MIXTURE)
_STRATEGY_ID = {s: i for i, s in enumerate(STRATEGY_ORDER)}
_PSI_STREAM = 99


@dataclass(frozen=True)
class InitSpec:
    strategy: Strategy
    n_soft_repeats: int = 15
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.n_soft_repeats < 1:
            raise ValueError("n_soft_repeats must be at least 1")


def random_spd(dim, seed=None):
    """Random SPD matrix ``Q diag(lam) Q^T`` with ``lam ~ U[1, 10]``.

    ``Q`` is the Haar-distributed orthogonal factor of the QR decomposition
    of a standard Gaussian matrix.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    gen = np.random.default_rng(seed)
    Q, R = np.linalg.qr(gen.standard_normal((dim, dim)))
    Q = Q * np.sign(np.diag(R))
    lam = gen.uniform(*SPD_EIGEN_RANGE, size=dim)
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


def init_soft_random(n, G, seed=None):
    """Uniform random responsibilities, row-normalized."""
    u = np.random.default_rng(seed).uniform(size=(n, G))
    return u / u.sum(axis=1, keepdims=True)


def one_hot(labels, G):
    z = np.zeros((len(labels), G))
    z[np.arange(len(labels)), labels] = 1.0
    return z


def merged_vectors(data):
    """``[vec(X_i), vec(Y_i)]`` for every unit, shape (n, qr + pr)."""
    return np.hstack([vec(data.X), vec(data.Y)])


def init_kmeans(data, G, seed=None):
    """Hard responsibilities from k-means on the merged vectorized data.

    k-means++ seeding, 10 restarts, at most 300 Lloyd iterations.
    """
    if G == 1:
        return np.ones((data.n, 1))
    if data.n <= G:
        raise ValueError("k-means initialization needs n > G")
    km = KMeans(n_clusters=G, init="k-means++", n_init=10, max_iter=300,
                random_state=int_seed(seed))
    labels = km.fit_predict(merged_vectors(data))
    if len(np.unique(labels)) < G:
        raise DegenerateClustering(f"k-means produced fewer than {G} clusters")
    return one_hot(labels, G)


def init_matnorm_mixture(data, G, seed=None, n_restarts=3, tol=1e-6, max_iter=200):
    """Hard responsibilities from a G-component mixture of matrix normals.

    Each unit becomes the ``(q + p) x r`` matrix with ``X_i`` stacked over
    ``Y_i``.  The mixture is fitted by EM from ``n_restarts`` soft random
    starts (M-step: weighted flip-flop per component, warm-started from the
    previous column covariance) and the best run is hardened by MAP.
    """
    if G == 1:
        return np.ones((data.n, 1))
    W = np.ascontiguousarray(np.concatenate([data.X, data.Y], axis=1))
    best_ll, best_z = -np.inf, None
    last_error = None
    for k in range(n_restarts):
        try:
            ll, z = _matnorm_mixture_em(W, G, rng(seed, k), tol, max_iter)
        except (NumericalError, ValueError) as exc:
            last_error = exc
            continue
        if ll > best_ll:
            best_ll, best_z = ll, z
    if best_z is None:
        raise DegenerateClustering(f"every mixture restart failed: {last_error}")
    return one_hot(np.argmax(best_z, axis=1), G)


def _matnorm_mixture_em(W, G, gen, tol, max_iter):
    n, d, r = W.shape
    z = init_soft_random(n, G, gen)
    Psis = [None] * G
    prev = -np.inf
    for _ in range(max_iter):
        mass = z.sum(axis=0)
        if np.any(mass < 2.0):
            raise DegenerateClustering("mixture component emptied")
        logw = np.empty((n, G))
        for g in range(G):
            est = weighted_flipflop_mle(W, z[:, g], Psi0=Psis[g])
            Psis[g] = est.Psi
            Phi_inv, Phi_ld = chol_inv_logdet(est.Phi)
            Psi_inv, Psi_ld = chol_inv_logdet(est.Psi)
            logw[:, g] = np.log(mass[g] / n) + batch_log_density(
                W, est.M, Phi_inv, Phi_ld, Psi_inv, Psi_ld)
        ll_i = logsumexp(logw, axis=1)
        ll = float(ll_i.sum())
        z = np.exp(logw - ll_i[:, None])
        if abs(ll - prev) < tol * (1.0 + abs(ll)):
            break
        prev = ll
    return ll, z


def responsibilities(spec, data, G):
    """Responsibilities from one :class:`InitSpec` (first soft repeat for SOFT_RANDOM)."""
    sid = _STRATEGY_ID[spec.strategy]
    if spec.strategy is Strategy.SOFT_RANDOM:
        return init_soft_random(data.n, G, rng(spec.seed, sid, 0))
    if spec.strategy is Strategy.KMEANS:
        return init_kmeans(data, G, rng(spec.seed, sid))
    return init_matnorm_mixture(data, G, rng(spec.seed, sid))


def shared_psi(r, G, seed):
    """The random initial ``PsiX`` and ``PsiY`` stacks shared by all strategies."""
    PsiX = np.stack([random_spd(r, rng(seed, _PSI_STREAM, 0, g)) for g in range(G)])
    PsiY = np.stack([random_spd(r, rng(seed, _PSI_STREAM, 1, g)) for g in range(G)])
    return PsiX, PsiY


@dataclass
class InitResult:
    """Winning start, its converged fit, and one report row per attempted start."""

    z0: np.ndarray
    PsiX0: np.ndarray
    PsiY0: np.ndarray
    strategy: Strategy
    fit: object
    report: list = field(default_factory=list)

    def strategy_best(self):
        """Best log-likelihood reached by each strategy (``None`` if all its runs failed)."""
        out = {}
        for row in self.report:
            s, ll = row["strategy"], row["loglik"]
            if ll is not None and (out.get(s) is None or ll > out[s]):
                out[s] = ll
            out.setdefault(s, None)
        return out


def best_initialization(data, G, model_kind, seed=None, strategies=STRATEGY_ORDER,
                        n_soft_repeats=15, config=ECMConfig(), screen=None):
    """Run every strategy to convergence and keep the best start.

    Parameters
    ----------
    data : Dataset
    G : int
    model_kind : ModelKind or str
    seed : int or SeedSequence
        Each strategy draws from its own stream keyed by (strategy, repeat).
    strategies : iterable of Strategy
        Enabled strategies; always evaluated in the fixed order
        SOFT_RANDOM, KMEANS, MATNORM_MIXTURE.
    screen : callable, optional
        ``screen(fit) -> bool`` marking spurious fits.  When given, the best
        non-spurious fit wins; spurious fits win only if nothing else is left.

    Returns
    -------
    InitResult

    Raises
    ------
    AllStrategiesFailed
        If no strategy produced a fit.
    """
    kind = ModelKind(model_kind)
    enabled = [s for s in STRATEGY_ORDER if s in {Strategy(x) for x in strategies}]
    if not enabled:
        raise ValueError("no initialization strategy enabled")
    PsiX0, PsiY0 = shared_psi(data.r, G, seed)

    if G == 1:
        # every strategy yields z = 1, so one fit stands for all of them
        z0 = np.ones((data.n, 1))
        try:
            fit = fit_model(data, 1, kind, z0, PsiX0, PsiY0, config)
        except NonMonotone:
            raise
        except (NumericalError, ValueError) as exc:
            raise AllStrategiesFailed(f"G=1 fit failed: {exc}") from exc
        report = [{"strategy": s.value, "repeat": 0, "loglik": fit.loglik, "status": "ok",
                   "spurious": bool(screen(fit)) if screen else False} for s in enabled]
        return InitResult(z0, PsiX0, PsiY0, enabled[0], fit, report)

    candidates = []
    report = []
    for s in enabled:
        sid = _STRATEGY_ID[s]
        repeats = n_soft_repeats if s is Strategy.SOFT_RANDOM else 1
        for k in range(repeats):
            row = {"strategy": s.value, "repeat": k, "loglik": None, "status": "ok",
                   "spurious": False}
            try:
                if s is Strategy.SOFT_RANDOM:
                    z0 = init_soft_random(data.n, G, rng(seed, sid, k))
                elif s is Strategy.KMEANS:
                    z0 = init_kmeans(data, G, rng(seed, sid))
                else:
                    z0 = init_matnorm_mixture(data, G, rng(seed, sid))
                fit = fit_model(data, G, kind, z0, PsiX0, PsiY0, config)
            except NonMonotone:
                raise
            except (NumericalError, ValueError) as exc:
                row["status"] = f"failed: {type(exc).__name__}: {exc}"
                report.append(row)
                continue
            row["loglik"] = fit.loglik
            row["spurious"] = bool(screen(fit)) if screen else False
            report.append(row)
            candidates.append((s, z0, fit, row["spurious"]))

    if not candidates:
        raise AllStrategiesFailed(f"all initialization strategies failed for G={G}")
    pool = [c for c in candidates if not c[3]] or candidates
    best = pool[0]
    for c in pool[1:]:
        if c[2].loglik > best[2].loglik:
            best = c
    return InitResult(best[1], PsiX0, PsiY0, best[0], best[2], report)
