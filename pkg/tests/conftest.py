"""Shared fixtures, the log-likelihood audit and the acceptance summary.

Every FittedModel built during the session passes through ``_audit``; a
trace that drops by more than ``1e-8 * (1 + |l|)`` anywhere fails the run.
Tests may opt a hand-built model out with ``extra={"audit": False}``.
"""
import numpy as np
import pytest

from mvcwm import cwm
from mvcwm.cwm import Dataset
from mvcwm.matnorm import MatNormParams

AUDIT = {"fits": 0, "violations": []}
CRITERIA = {}

MONOTONE_REL = 1e-8


def _audit(fit):
    if fit.extra.get("audit", True) is False:
        return
    AUDIT["fits"] += 1
    bad = fit.monotonicity_violations(MONOTONE_REL)
    if bad.size:
        AUDIT["violations"].append((fit.model_kind, fit.G, bad.tolist()))


cwm.FIT_OBSERVERS.append(_audit)


def pytest_collection_modifyitems(session, config, items):
    # the whole-suite audit must run after every other test has produced its fits
    last = [it for it in items if it.get_closest_marker("run_last")]
    items[:] = [it for it in items if not it.get_closest_marker("run_last")] + last


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        state = CRITERIA.setdefault(number, {"text": text, "ok": True, "tests": 0})
        state["tests"] += 1
        state["ok"] = state["ok"] and rep.outcome == "passed"


def pytest_sessionfinish(session, exitstatus):
    if AUDIT["violations"]:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    tr = terminalreporter
    tr.section("log-likelihood audit")
    tr.write_line(f"fits audited: {AUDIT['fits']}; "
                  f"traces dropping by more than {MONOTONE_REL:g}*(1+|l|): "
                  f"{len(AUDIT['violations'])}")
    for kind, G, where in AUDIT["violations"][:20]:
        tr.write_line(f"  VIOLATION {kind} G={G} at iterations {where[:5]}")
    if CRITERIA:
        tr.section("acceptance criteria")
        for number in sorted(CRITERIA):
            state = CRITERIA[number]
            verdict = "PASS" if state["ok"] else "FAIL"
            tr.write_line(f"criterion {number:>2}: {verdict}  {state['text']}")


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

def random_spd_matrix(rng, d, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(0, np.log(cond), size=d))
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def spd():
    return random_spd_matrix


def make_two_group_data():
    """Two well separated matrix-variate regression groups (p=2, q=2, r=3)."""
    gen = np.random.default_rng(7)
    n_per = 60
    Xs, Ys, labels = [], [], []
    for g, (shift, slope) in enumerate(((0.0, 1.0), (8.0, -1.0))):
        X = shift + gen.standard_normal((n_per, 2, 3))
        Xstar = np.concatenate([np.ones((n_per, 1, 3)), X], axis=1)
        B = np.array([[shift, slope, 0.5], [1.0 - shift, 0.2, slope]])
        Y = B @ Xstar + 0.3 * gen.standard_normal((n_per, 2, 3))
        Xs.append(X)
        Ys.append(Y)
        labels += [g + 1] * n_per
    return Dataset(np.concatenate(Xs), np.concatenate(Ys), np.array(labels))


@pytest.fixture
def two_group_data():
    return make_two_group_data()


@pytest.fixture
def matnorm_params():
    return MatNormParams(
        M=np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]),
        Phi=np.array([[1.0, 0.3], [0.3, 2.0]]),
        Psi=np.array([[1.5, 0.4, 0.1], [0.4, 1.0, 0.2], [0.1, 0.2, 0.8]]),
    )
