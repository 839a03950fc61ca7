"""Model selection, spurious-solution screening and classification metrics."""
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cwm import ECMConfig, ModelKind
from .errors import AllStrategiesFailed, CrossFamilyComparison, GMismatch, MvcwmError
from .init import STRATEGY_ORDER, best_initialization

SPURIOUS_WEIGHT = 0.05
SPURIOUS_EIGEN_RATIO = 1e-8
SPURIOUS_MIN_POINTS = 5.0


def contingency(a, b):
    """Contingency table of two labelings (rows: labels of ``a``)."""
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _pairs(x):
    return x * (x - 1) // 2


def ari(a, b):
    """Adjusted Rand index (Hubert and Arabie).

    Two partitions that are both trivial in the same way (one block, or all
    singletons) have a zero denominator and get 1.0.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be 1-d and of equal length")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least two units")
    table = contingency(a, b)
    index = _pairs(table).sum()
    sum_a = _pairs(table.sum(axis=1)).sum()
    sum_b = _pairs(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _pairs(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def misclassification_rate(true_labels, pred_labels):
    """Percentage of units misclassified under the best matching of labels."""
    t, p = np.asarray(true_labels), np.asarray(pred_labels)
    if t.shape != p.shape:
        raise ValueError("labelings must have equal length")
    if t.size == 0:
        return 0.0
    table = contingency(t, p)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return 100.0 * (1.0 - table[rows, cols].sum() / t.size)


def covariance_matrices(params):
    """All covariance matrices of a fitted parameter object, by name."""
    names = ("PhiX", "PsiX", "PhiY", "PsiY", "SigmaX", "SigmaY")
    return {name: getattr(params, name) for name in names if hasattr(params, name)}


def detect_spurious(fit):
    """Flag a fit with a tiny component or a near-singular covariance.

    Any one trigger flags the fit: a weight ``<= 0.05``, a covariance with
    eigenvalue ratio ``min/max < 1e-8``, or a responsibility column mass
    below 5 units.

    Returns
    -------
    flag : bool
    reasons : list of str
    """
    reasons = []
    pi = np.asarray(fit.params.pi)
    for g in np.flatnonzero(pi <= SPURIOUS_WEIGHT):
        reasons.append(f"weight: pi[{g}] = {pi[g]:.4f} <= {SPURIOUS_WEIGHT}")
    for name, stack in covariance_matrices(fit.params).items():
        for g, S in enumerate(stack):
            lam = np.linalg.eigvalsh(S)
            if not lam[-1] > 0 or lam[0] / lam[-1] < SPURIOUS_EIGEN_RATIO:
                reasons.append(f"eigenvalue: {name}[{g}] min/max = {lam[0] / lam[-1]:.3g}")
    mass = fit.z.sum(axis=0)
    for g in np.flatnonzero(mass < SPURIOUS_MIN_POINTS):
        reasons.append(f"size: component {g} holds {mass[g]:.2f} < {SPURIOUS_MIN_POINTS:g} units")
    return bool(reasons), reasons


def is_spurious(fit):
    return detect_spurious(fit)[0]


@dataclass
class SelectionEntry:
    G: int
    bic: float = None
    loglik: float = None
    n_params: int = None
    spurious: bool = False
    reasons: list = field(default_factory=list)
    fit: object = None
    init: object = None
    error: str = None


@dataclass
class SelectionResult:
    """Per-G fits and the BIC-selected number of components.

    ``warning`` is set when every candidate was spurious and the least
    spurious one was returned.
    """

    best_G: int
    per_G: list
    model_kind: ModelKind
    warning: str = None

    def entry(self, G):
        for e in self.per_G:
            if e.G == G:
                return e
        return None

    @property
    def best_fit(self):
        return self.entry(self.best_G).fit


def select_model(data, G_range, model_kind=ModelKind.MN_CWM, config=ECMConfig(), seed=None,
                 n_soft_repeats=15, strategies=STRATEGY_ORDER):
    """Fit each ``G`` in ``G_range`` from its best start and select by BIC.

    Spurious fits are excluded; if nothing else is left the candidate with
    the fewest spurious triggers (then the highest BIC) is returned with a
    warning.
    """
    from ._random import derive

    G_range = sorted(set(int(G) for G in G_range))
    if not G_range:
        raise ValueError("G_range must not be empty")
    kind = ModelKind(model_kind)
    entries = []
    for G in G_range:
        entry = SelectionEntry(G)
        try:
            init = best_initialization(data, G, kind, seed=derive(seed, G),
                                       strategies=strategies,
                                       n_soft_repeats=n_soft_repeats, config=config,
                                       screen=is_spurious)
        except AllStrategiesFailed as exc:
            entry.error = str(exc)
            entries.append(entry)
            continue
        fit = init.fit
        entry.fit, entry.init = fit, init
        entry.bic, entry.loglik, entry.n_params = fit.bic, fit.loglik, fit.n_params
        entry.spurious, entry.reasons = detect_spurious(fit)
        entries.append(entry)

    fitted = [e for e in entries if e.fit is not None]
    if not fitted:
        raise AllStrategiesFailed(f"no G in {G_range} could be fitted")
    clean = [e for e in fitted if not e.spurious]
    warning = None
    if clean:
        best = max(clean, key=lambda e: e.bic)
    else:
        best = min(fitted, key=lambda e: (len(e.reasons), -e.bic))
        warning = "all candidate fits are spurious; returning the least spurious"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return SelectionResult(best.G, entries, kind, warning)


def compare_bic(fit_a, fit_b):
    """Difference ``BIC(a) - BIC(b)``; refuses joint-vs-conditional comparisons."""
    if ModelKind(fit_a.model_kind).joint != ModelKind(fit_b.model_kind).joint:
        raise CrossFamilyComparison(
            "BIC of a joint (CWM) and a conditional (FMR) likelihood are not comparable")
    if fit_a.n != fit_b.n:
        raise MvcwmError("fits were computed on different sample sizes")
    return fit_a.bic - fit_b.bic


def align_labels_to_truth(fit, generating_params):
    """Component order of ``fit`` that best matches the generating components.

    Returns ``order`` such that fitted component ``order[g]`` corresponds to
    true component ``g``, minimizing the summed Frobenius distances of the
    coefficient matrices and (when both have them) the covariate means.
    Exhaustive over permutations.
    """
    est = fit.params if hasattr(fit, "params") else fit
    G = len(generating_params.pi)
    if len(est.pi) != G:
        raise GMismatch(f"fitted G={len(est.pi)} differs from generating G={G}")
    if G > 8:
        raise ValueError("exhaustive alignment is limited to G <= 8")
    cost = np.zeros((G, G))
    for g in range(G):
        for h in range(G):
            c = np.linalg.norm(est.Bstar[h] - generating_params.Bstar[g])
            if hasattr(est, "M") and hasattr(generating_params, "M"):
                c += np.linalg.norm(est.M[h] - generating_params.M[g])
            cost[g, h] = c
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(G)):
        total = cost[np.arange(G), perm].sum()
        if total < best_cost:
            best, best_cost = perm, total
    return tuple(int(k) for k in best)


def bias_mse(estimates, truth):
    """Entrywise bias and MSE of aligned estimates over replications.

    Parameters
    ----------
    estimates : array_like, shape (R, ...)
    truth : array_like, shape (...)
    """
    est = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape[0] < 2 or est.shape[1:] != truth.shape:
        raise ValueError("need R >= 2 estimates with the shape of the truth")
    err = est - truth
    return err.mean(axis=0), (err ** 2).mean(axis=0)
