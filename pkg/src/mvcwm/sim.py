"""Simulation scenarios, dataset generation and replicated studies.

Catalog names
-------------
``A1``, ``B1``
    Four components, ``p = q = r = 3``.  ``B1`` is derived from ``A1``: the
    means of components 2-4 are shifted by -5, +5 and -10, every intercept
    is ``(7, 2, 5)`` and the slopes of components 2 and 4 change sign.
``A2``, ``B2``, ``C2``
    Two components, ``p = 2, q = 3, r = 4``.  ``B2`` shifts ``M_2`` by +5
    and sets ``Bstar_2 = Bstar_1``; ``C2`` is ``B2`` with intercepts
    ``(-3, -4)`` and ``(-7, -8)``.
``sim3-d{d}-g{G}``
    ``p = q = r = d`` in {2, 3, 4}, ``G`` in {2, 3, 4}, built from ``A1``.
    ``d = 2`` takes the upper-left block of every matrix; the first ``G``
    components are kept and their weights renormalized.

The ``d = 4`` matrices are not published with the original study; they are
produced here by a deterministic extension of the ``d = 3`` ones (see
:func:`extend_matrix`), so only qualitative comparisons make sense there.
"""
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._random import derive
from .cwm import CwmParams, Dataset, ECMConfig, ModelKind
from .errors import MvcwmError

# ---------------------------------------------------------------------------
# parameter tables
# ---------------------------------------------------------------------------

_A1 = dict(
    pi=[0.30, 0.30, 0.20, 0.20],
    M=[
        [[1, 2, 0], [-4, -3, -3], [1, 2, 1]],
        [[6, 8, 6], [2, 1, 3], [5, 6, 6]],
        [[-4, -3, -4], [-9, -9, -7], [-4, -3, -5]],
        [[12, 12, 11], [6, 7, 7], [10, 11, 11]],
    ],
    PhiX=[
        [[1.00, 0.50, 0.25], [0.50, 1.00, 0.50], [0.25, 0.50, 1.00]],
        [[2.00, 0.40, 0.08], [0.40, 0.20, 0.40], [0.08, 0.40, 2.00]],
        [[1.50, 0.75, 0.38], [0.75, 1.50, 0.75], [0.38, 0.75, 1.50]],
        [[1.20, 0.60, 0.30], [0.60, 1.20, 0.60], [0.30, 0.60, 1.20]],
    ],
    PsiX=[
        [[1.20, 0.60, 0.30], [0.60, 1.20, 0.60], [0.30, 0.60, 1.20]],
        [[1.40, 0.70, 0.35], [0.70, 1.40, 0.70], [0.35, 0.70, 1.40]],
        [[0.80, 0.40, 0.20], [0.40, 0.80, 0.40], [0.20, 0.40, 0.80]],
        [[1.60, 0.80, 0.40], [0.80, 1.60, 0.80], [0.40, 0.80, 1.60]],
    ],
    Bstar=[
        [[0, 1, 1, 1], [-2, 1, 1.5, 1], [1, 1.5, 1.5, 1]],
        [[6, -1, -1.5, -1], [4, -1, -1.5, -1], [8, -1.5, -1.5, -1]],
        [[-5, 1, 1, 1], [-3, 1.5, 1, 1], [-6, 1.5, 1.5, 1]],
        [[1, -1, -1, -1], [-5, -1, -1.5, -1.5], [0, -1.5, -1, -1.5]],
    ],
    PhiY=[
        [[1.40, 0.84, 0.50], [0.84, 1.40, 0.84], [0.50, 0.84, 1.40]],
        [[1.80, 1.26, 0.88], [1.26, 1.80, 1.26], [0.88, 1.26, 1.80]],
        [[1.20, 0.84, 0.59], [0.84, 1.20, 0.84], [0.59, 0.84, 1.20]],
        [[1.60, 0.96, 0.58], [0.96, 1.60, 0.96], [0.58, 0.96, 1.60]],
    ],
    PsiY=[
        # printed with 0.20 in the centre, which makes the matrix indefinite;
        # 2.00 completes the 2 * 0.3**|i-j| pattern of the other entries
        [[2.00, 0.60, 0.18], [0.60, 2.00, 0.60], [0.18, 0.60, 2.00]],
        [[1.10, 0.55, 0.28], [0.55, 1.10, 0.55], [0.28, 0.55, 1.10]],
        [[1.90, 1.71, 1.54], [1.71, 1.90, 1.71], [1.54, 1.71, 1.90]],
        [[1.40, 1.26, 1.13], [1.26, 1.40, 1.26], [1.13, 1.26, 1.40]],
    ],
)

_A2_M = [[1, 2, 2, 0], [-1, 1, 1, 2], [0, 2, 2, 1]]
_A2 = dict(
    pi=[0.50, 0.50],
    M=[_A2_M, _A2_M],
    PhiX=[
        [[1.00, 0.50, 0.25], [0.50, 1.00, 0.50], [0.25, 0.50, 1.00]],
        [[2.00, 0.40, 0.08], [0.40, 0.20, 0.40], [0.08, 0.40, 2.00]],
    ],
    PsiX=[
        [[1.70, 0.85, 0.42, 0.21], [0.85, 1.70, 0.85, 0.42],
         [0.42, 0.85, 1.70, 0.85], [0.21, 0.42, 0.85, 1.70]],
        [[1.00, 0.50, 0.25, 0.12], [0.50, 1.00, 0.50, 0.25],
         [0.25, 0.50, 1.00, 0.50], [0.12, 0.25, 0.50, 1.00]],
    ],
    Bstar=[
        [[2, 1, 1, -1], [3, 1, -1, 1]],
        [[-7, 1, 1, -1], [-8, 1, -1, 1]],
    ],
    PhiY=[
        [[1.00, 0.50], [0.50, 1.00]],
        [[2.00, 1.20], [1.20, 2.00]],
    ],
    PsiY=[
        [[2.00, 1.00, 0.50, 0.25], [1.00, 2.00, 1.00, 0.50],
         [0.50, 1.00, 2.00, 1.00], [0.25, 0.50, 1.00, 2.00]],
        # the published table has 0.39 below the diagonal at (4, 2) and 0.38
        # above it; the upper triangle is used
        [[1.70, 0.75, 0.38, 0.19], [0.75, 1.50, 0.75, 0.38],
         [0.38, 0.75, 1.50, 0.75], [0.19, 0.38, 0.75, 1.50]],
    ],
)

_FIELDS = ("M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY")
_COVARIANCES = ("PhiX", "PsiX", "PhiY", "PsiY")


def _params(table):
    return CwmParams(np.array(table["pi"], dtype=float),
                     *(np.array(table[f], dtype=float) for f in _FIELDS))


def _check_spd(params):
    for name in _COVARIANCES:
        for g, S in enumerate(getattr(params, name)):
            if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
                raise ValueError(f"{name}[{g}] is not symmetric")
            if np.linalg.eigvalsh(S).min() <= 0:
                raise ValueError(f"{name}[{g}] is not positive definite")


def params_A1():
    return _params(_A1)


def params_B1():
    a1 = params_A1()
    M = a1.M.copy()
    M[1] -= 5.0
    M[2] += 5.0
    M[3] -= 10.0
    Bstar = a1.Bstar.copy()
    Bstar[:, :, 0] = [7.0, 2.0, 5.0]
    Bstar[1, :, 1:] *= -1.0
    Bstar[3, :, 1:] *= -1.0
    return CwmParams(a1.pi, M, a1.PhiX, a1.PsiX, Bstar, a1.PhiY, a1.PsiY)


def params_A2():
    return _params(_A2)


def params_B2():
    a2 = params_A2()
    M = a2.M.copy()
    M[1] += 5.0
    Bstar = a2.Bstar.copy()
    Bstar[1] = Bstar[0]
    return CwmParams(a2.pi, M, a2.PhiX, a2.PsiX, Bstar, a2.PhiY, a2.PsiY)


def params_C2():
    b2 = params_B2()
    Bstar = b2.Bstar.copy()
    Bstar[0, :, 0] = [-3.0, -4.0]
    Bstar[1, :, 0] = [-7.0, -8.0]
    return CwmParams(b2.pi, b2.M, b2.PhiX, b2.PsiX, Bstar, b2.PhiY, b2.PsiY)


SPD_FLOOR = 0.1


def extend_matrix(A, spd=False):
    """Grow a matrix by one row and one column by replicating the last ones.

    The new corner entry copies the previous last diagonal entry.  For
    covariance matrices (``spd=True``) the result, which is singular, is
    projected onto the SPD cone by flooring its eigenvalues at ``0.1``.
    """
    A = np.asarray(A, dtype=float)
    out = np.vstack([A, A[-1:]])
    out = np.hstack([out, out[:, -1:]])
    if spd:
        lam, V = np.linalg.eigh(out)
        out = (V * np.maximum(lam, SPD_FLOOR)) @ V.T
        out = 0.5 * (out + out.T)
    return out


def _sim3_params(d, G):
    a1 = params_A1()
    keep = slice(0, G)
    pi = a1.pi[keep] / a1.pi[keep].sum()
    if d == 3:
        fields = {f: getattr(a1, f)[keep] for f in _FIELDS}
    elif d == 2:
        fields = {
            "M": a1.M[keep, :2, :2],
            "PhiX": a1.PhiX[keep, :2, :2],
            "PsiX": a1.PsiX[keep, :2, :2],
            "Bstar": a1.Bstar[keep, :2, :3],
            "PhiY": a1.PhiY[keep, :2, :2],
            "PsiY": a1.PsiY[keep, :2, :2],
        }
    elif d == 4:
        fields = {f: np.stack([extend_matrix(A, spd=f in _COVARIANCES)
                               for A in getattr(a1, f)[keep]])
                  for f in _FIELDS}
    else:
        raise ValueError(f"unsupported dimension d={d}")
    return CwmParams(pi, *(fields[f] for f in _FIELDS))


# ---------------------------------------------------------------------------
# scenario specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    """A named generating configuration."""

    name: str
    params: CwmParams
    N: int = 200
    seed: int = 0

    def __post_init__(self):
        _check_spd(self.params)
        if self.N < 0:
            raise ValueError("N must be non-negative")

    @property
    def G(self):
        return self.params.G

    @property
    def dims(self):
        return self.params.dims

    def with_(self, **changes):
        kw = dict(name=self.name, params=self.params, N=self.N, seed=self.seed)
        kw.update(changes)
        return ScenarioSpec(**kw)

    def to_dict(self):
        p, q, r = self.dims
        return {
            "name": self.name,
            "G": self.G,
            "p": p, "q": q, "r": r,
            "N": self.N,
            "seed": self.seed,
            "params": {
                "pi": self.params.pi.tolist(),
                **{f: getattr(self.params, f).tolist() for f in _FIELDS},
            },
        }

    @classmethod
    def from_dict(cls, doc):
        params = _params(doc["params"])
        if params.G != doc["G"] or params.dims != (doc["p"], doc["q"], doc["r"]):
            raise ValueError("scenario dimensions do not match its parameters")
        return cls(doc["name"], params, int(doc["N"]), int(doc["seed"]))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


_BUILDERS = {
    "A1": params_A1,
    "B1": params_B1,
    "A2": params_A2,
    "B2": params_B2,
    "C2": params_C2,
}
for _d in (2, 3, 4):
    for _g in (2, 3, 4):
        _BUILDERS[f"sim3-d{_d}-g{_g}"] = (lambda d=_d, g=_g: _sim3_params(d, g))


def scenario_catalog():
    """Mapping from scenario name to a builder ``(N=200, seed=0) -> ScenarioSpec``."""
    def make(name):
        def build(N=200, seed=0):
            return ScenarioSpec(name, _BUILDERS[name](), N, seed)
        return build
    return {name: make(name) for name in _BUILDERS}


def scenario(name, N=200, seed=0):
    try:
        return scenario_catalog()[name](N, seed)
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(_BUILDERS)}") from None


def generate_dataset(spec):
    """Draw ``spec.N`` units from the MN-CWM in ``spec`` (labels are 1-based)."""
    params = spec.params
    p, q, r = params.dims
    N = spec.N
    gen = np.random.default_rng(derive(spec.seed))
    labels = gen.choice(params.G, size=N, p=params.pi)
    ZX = gen.standard_normal((N, q, r))
    ZU = gen.standard_normal((N, p, r))
    X = np.empty((N, q, r))
    Y = np.empty((N, p, r))
    for g in range(params.G):
        idx = labels == g
        LX = np.linalg.cholesky(params.PhiX[g]), np.linalg.cholesky(params.PsiX[g])
        LY = np.linalg.cholesky(params.PhiY[g]), np.linalg.cholesky(params.PsiY[g])
        X[idx] = params.M[g] + LX[0] @ ZX[idx] @ LX[1].T
        Xs = np.concatenate([np.ones((idx.sum(), 1, r)), X[idx]], axis=1)
        Y[idx] = params.Bstar[g] @ Xs + LY[0] @ ZU[idx] @ LY[1].T
    return Dataset(X, Y, labels + 1)


# ---------------------------------------------------------------------------
# replicated studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitPlan:
    """How each replicate is fitted.

    ``G_range=None`` fits the generating ``G`` directly; otherwise the model
    is selected by BIC over ``G_range``.
    """

    model_kind: ModelKind = ModelKind.MN_CWM
    G_range: tuple = None
    n_soft_repeats: int = 15
    config: ECMConfig = ECMConfig()


@dataclass
class ReplicationSummary:
    scenario: str
    model_kind: str
    R: int
    N: int
    true_G: int
    mean_ari: float
    mean_eta: float
    true_G_hits: int
    n_failed: int
    bias: np.ndarray = None
    mse: np.ndarray = None
    strategy_wins: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def to_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k not in ("bias", "mse")}
        out["bias"] = None if self.bias is None else self.bias.tolist()
        out["mse"] = None if self.mse is None else self.mse.tolist()
        return out


def _run_replicate(spec, plan, seed, rep):
    from .evaluation import (
        align_labels_to_truth, ari, detect_spurious, misclassification_rate, select_model,
    )

    rep_seed = derive(seed, rep)
    data = generate_dataset(spec.with_(seed=int(rep_seed.generate_state(1)[0])))
    record = {"replicate": rep, "error": None}
    try:
        G_range = plan.G_range if plan.G_range is not None else (spec.G,)
        sel = select_model(data, G_range, plan.model_kind, plan.config,
                           seed=derive(seed, rep, 1), n_soft_repeats=plan.n_soft_repeats)
    except MvcwmError as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        return record
    chosen = sel.best_fit
    record.update(
        selected_G=sel.best_G,
        ari=ari(data.labels, chosen.labels),
        eta=misclassification_rate(data.labels, chosen.labels),
        bic={e.G: e.bic for e in sel.per_G},
    )
    true_entry = sel.entry(spec.G)
    if true_entry is not None and true_entry.fit is not None:
        fit = true_entry.fit
        record["ari_true_G"] = ari(data.labels, fit.labels)
        record["eta_true_G"] = misclassification_rate(data.labels, fit.labels)
        record["strategy_loglik"] = true_entry.init.strategy_best()
        record["spurious_true_G"] = detect_spurious(fit)[0]
        if hasattr(fit.params, "Bstar"):
            order = align_labels_to_truth(fit, spec.params)
            record["Bstar"] = fit.params.Bstar[list(order)]
    return record


def strategy_hits(strategy_loglik, rtol=1e-6):
    """Strategies whose best log-likelihood ties the overall best."""
    vals = [v for v in strategy_loglik.values() if v is not None]
    if not vals:
        return []
    best = max(vals)
    return [s for s, v in strategy_loglik.items()
            if v is not None and v >= best - rtol * (1.0 + abs(best))]


def replicate_study(spec, R, plan=FitPlan(), seed=0, jobs=1):
    """Generate ``R`` datasets from ``spec``, fit each per ``plan`` and aggregate.

    Replicate ``k`` uses streams derived from ``(seed, k)`` only, so results do
    not depend on ``jobs``.  Failed replicates are counted, not raised.
    """
    from .evaluation import bias_mse

    if R < 1:
        raise ValueError("R must be at least 1")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_replicate, [spec] * R, [plan] * R,
                                    [seed] * R, range(R)))
    else:
        records = [_run_replicate(spec, plan, seed, k) for k in range(R)]

    ok = [r for r in records if r["error"] is None]
    wins = {}
    for r in ok:
        for s in strategy_hits(r.get("strategy_loglik") or {}):
            wins[s] = wins.get(s, 0) + 1
    bias = mse = None
    coefs = [r["Bstar"] for r in ok if "Bstar" in r]
    if len(coefs) >= 2:
        bias, mse = bias_mse(np.stack(coefs), spec.params.Bstar)
    for r in records:
        r.pop("Bstar", None)
    return ReplicationSummary(
        scenario=spec.name,
        model_kind=ModelKind(plan.model_kind).value,
        R=R,
        N=spec.N,
        true_G=spec.G,
        mean_ari=float(np.mean([r["ari"] for r in ok])) if ok else float("nan"),
        mean_eta=float(np.mean([r["eta"] for r in ok])) if ok else float("nan"),
        true_G_hits=sum(r["selected_G"] == spec.G for r in ok),
        n_failed=len(records) - len(ok),
        bias=bias,
        mse=mse,
        strategy_wins=wins,
        records=records,
    )
