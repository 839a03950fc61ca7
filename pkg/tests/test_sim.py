import numpy as np
import pytest
from scipy.stats import chisquare

from mvcwm.cwm import CwmParams, ECMConfig, ModelKind
from mvcwm.sim import (
    FitPlan, ScenarioSpec, extend_matrix, generate_dataset, params_A1, params_A2, params_B1,
    params_B2, params_C2, replicate_study, scenario, scenario_catalog, strategy_hits,
)


def test_catalog_names():
    names = set(scenario_catalog())
    assert {"A1", "B1", "A2", "B2", "C2"} <= names
    assert {f"sim3-d{d}-g{g}" for d in (2, 3, 4) for g in (2, 3, 4)} <= names
    with pytest.raises(KeyError):
        scenario("nope")


def test_A1_values():
    a1 = params_A1()
    np.testing.assert_array_equal(a1.pi, [0.3, 0.3, 0.2, 0.2])
    assert a1.dims == (3, 3, 3)
    np.testing.assert_array_equal(a1.M[0], [[1, 2, 0], [-4, -3, -3], [1, 2, 1]])


def test_B1_derived_from_A1():
    a1, b1 = params_A1(), params_B1()
    np.testing.assert_array_equal(b1.M[1], a1.M[1] - 5)
    np.testing.assert_array_equal(b1.M[2], a1.M[2] + 5)
    np.testing.assert_array_equal(b1.M[3], a1.M[3] - 10)
    np.testing.assert_array_equal(b1.Bstar[:, :, 0], np.tile([7.0, 2.0, 5.0], (4, 1)))
    np.testing.assert_array_equal(b1.Bstar[1, :, 1:], -a1.Bstar[1, :, 1:])
    np.testing.assert_array_equal(b1.Bstar[0, :, 1:], a1.Bstar[0, :, 1:])


def test_simulation2_scenarios():
    a2, b2, c2 = params_A2(), params_B2(), params_C2()
    assert a2.dims == (2, 3, 4)
    np.testing.assert_array_equal(b2.M[1], a2.M[1] + 5)
    np.testing.assert_array_equal(b2.Bstar[1], b2.Bstar[0])
    np.testing.assert_array_equal(c2.Bstar[:, :, 0], [[-3, -4], [-7, -8]])
    np.testing.assert_array_equal(c2.Bstar[:, :, 1:], b2.Bstar[:, :, 1:])


def test_sim3_cells():
    d2 = scenario("sim3-d2-g3").params
    np.testing.assert_array_equal(d2.M[0], [[1, 2], [-4, -3]])
    np.testing.assert_allclose(d2.pi, np.array([0.3, 0.3, 0.2]) / 0.8)
    d4 = scenario("sim3-d4-g4").params
    assert d4.dims == (4, 4, 4)
    np.testing.assert_array_equal(d4.M[:, :3, :3], params_A1().M)


def test_extend_matrix():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(extend_matrix(A), [[1, 2, 2], [3, 4, 4], [3, 4, 4]])
    S = extend_matrix(np.array([[2.0, 0.5], [0.5, 1.0]]), spd=True)
    assert np.linalg.eigvalsh(S).min() >= 0.1 - 1e-12


def test_spec_rejects_indefinite():
    a1 = params_A1()
    PsiY = a1.PsiY.copy()
    PsiY[0, 1, 1] = 0.2
    bad = CwmParams(a1.pi, a1.M, a1.PhiX, a1.PsiX, a1.Bstar, a1.PhiY, PsiY)
    with pytest.raises(ValueError, match="positive definite"):
        ScenarioSpec("bad", bad)
    with pytest.raises(ValueError):
        scenario("A1", N=-1)


def test_empty_dataset():
    data = generate_dataset(scenario("A1", N=0))
    assert data.X.shape == (0, 3, 3) and data.Y.shape == (0, 3, 3)


def test_generation_deterministic():
    a = generate_dataset(scenario("B2", 50, seed=3))
    b = generate_dataset(scenario("B2", 50, seed=3))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.X, generate_dataset(scenario("B2", 50, seed=4)).X)


def test_spec_json_roundtrip():
    spec = scenario("sim3-d4-g3", N=123, seed=9)
    back = ScenarioSpec.from_json(spec.to_json())
    assert (back.name, back.N, back.seed) == ("sim3-d4-g3", 123, 9)
    for f in ("pi", "M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY"):
        np.testing.assert_array_equal(getattr(back.params, f), getattr(spec.params, f))
    doc = spec.to_dict()
    doc["G"] = 2
    with pytest.raises(ValueError):
        ScenarioSpec.from_dict(doc)


@pytest.fixture(scope="module")
def big_A1():
    return generate_dataset(scenario("A1", N=100_000, seed=1))


def test_label_frequencies(big_A1):
    counts = np.bincount(big_A1.labels - 1, minlength=4)
    assert chisquare(counts, 100_000 * params_A1().pi).pvalue > 0.001


def test_component_moments(big_A1):
    """Covariate means and residual covariances per component match the truth."""
    a1 = params_A1()
    data = big_A1
    for g in range(4):
        idx = data.labels == g + 1
        X = data.X[idx]
        # standard error of a mean is at most sqrt(2 / 20000) ~ 0.01
        np.testing.assert_allclose(X.mean(axis=0), a1.M[g], atol=0.05)
        E = data.Y[idx] - a1.Bstar[g] @ data.Xstar[idx]
        V = E.transpose(0, 2, 1).reshape(len(E), -1)
        C = np.cov(V, rowvar=False)
        K = np.kron(a1.PsiY[g], a1.PhiY[g])
        assert np.linalg.norm(C - K) / np.linalg.norm(K) < 0.05


def test_strategy_hits():
    assert strategy_hits({"a": -10.0, "b": -10.0 - 1e-9, "c": -11.0}) == ["a", "b"]
    assert strategy_hits({"a": None}) == []


def test_replicate_study_single_separable():
    spec = scenario("A2", N=200)
    plan = FitPlan(ModelKind.MN_CWM, None, n_soft_repeats=2)
    res = replicate_study(spec, 1, plan, seed=0)
    assert res.n_failed == 0 and res.true_G_hits == 1
    assert res.mean_ari == 1.0 and res.mean_eta == 0.0
    assert res.bias is None


def test_replicate_study_deterministic():
    spec = scenario("A2", N=120)
    plan = FitPlan(ModelKind.MN_FMR, (1, 2), n_soft_repeats=2, config=ECMConfig(max_iter=200))
    a = replicate_study(spec, 2, plan, seed=5)
    b = replicate_study(spec, 2, plan, seed=5)
    assert a.to_dict() == b.to_dict()
    assert a.bias is not None and a.bias.shape == (2, 2, 4)
    with pytest.raises(ValueError):
        replicate_study(spec, 0, plan)
