import numpy as np
import pytest

from mvcwm._random import default_seed, derive, int_seed
from mvcwm.cwm import Dataset, ModelKind
from mvcwm.errors import AllStrategiesFailed, DegenerateClustering
from mvcwm.evaluation import ari
from mvcwm.init import (
    STRATEGY_ORDER, InitSpec, Strategy, best_initialization, init_kmeans, init_matnorm_mixture,
    init_soft_random, merged_vectors, one_hot, random_spd, responsibilities, shared_psi,
)


@pytest.mark.parametrize("dim", [1, 2, 3, 6])
def test_random_spd_spectrum(dim):
    for seed in range(20):
        S = random_spd(dim, seed)
        np.testing.assert_array_equal(S, S.T)
        lam = np.linalg.eigvalsh(S)
        assert lam.min() >= 1.0 - 1e-12 and lam.max() <= 10.0 + 1e-12


def test_random_spd_seeding():
    np.testing.assert_array_equal(random_spd(3, 1), random_spd(3, 1))
    assert not np.allclose(random_spd(3, 1), random_spd(3, 2))
    with pytest.raises(ValueError):
        random_spd(0)


def test_soft_random_rows():
    z = init_soft_random(50, 4, seed=3)
    assert z.shape == (50, 4)
    np.testing.assert_allclose(z.sum(axis=1), 1.0, rtol=0, atol=1e-14)
    assert np.all(z > 0)
    np.testing.assert_array_equal(z, init_soft_random(50, 4, seed=3))


def test_one_hot_and_merged(two_group_data):
    np.testing.assert_array_equal(one_hot(np.array([0, 2, 1]), 3), np.eye(3)[[0, 2, 1]])
    W = merged_vectors(two_group_data)
    assert W.shape == (two_group_data.n, 6 + 6)
    np.testing.assert_array_equal(W[0, :6], two_group_data.X[0].ravel(order="F"))


def test_kmeans_separated(two_group_data):
    z = init_kmeans(two_group_data, 2, seed=0)
    assert set(np.unique(z)) == {0.0, 1.0}
    assert ari(two_group_data.labels, z.argmax(axis=1)) == 1.0
    np.testing.assert_array_equal(init_kmeans(two_group_data, 1), 1.0)


def test_kmeans_keeps_duplicates_together(two_group_data):
    d = two_group_data
    doubled = Dataset(np.concatenate([d.X, d.X]), np.concatenate([d.Y, d.Y]))
    labels = init_kmeans(doubled, 3, seed=2).argmax(axis=1)
    np.testing.assert_array_equal(labels[:d.n], labels[d.n:])


@pytest.mark.filterwarnings("ignore::sklearn.exceptions.ConvergenceWarning")
def test_kmeans_duplicates_are_degenerate():
    X = np.ones((10, 1, 1))
    data = Dataset(X, X.copy())
    with pytest.raises(DegenerateClustering):
        init_kmeans(data, 2, seed=0)


def test_matnorm_mixture_separated(two_group_data):
    z = init_matnorm_mixture(two_group_data, 2, seed=0)
    assert set(np.unique(z)) == {0.0, 1.0}
    np.testing.assert_array_equal(z.sum(axis=1), 1.0)
    assert ari(two_group_data.labels, z.argmax(axis=1)) == 1.0


def test_shared_psi_reproducible():
    a = shared_psi(3, 2, seed=5)
    b = shared_psi(3, 2, seed=5)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    assert a[0].shape == (2, 3, 3)
    assert not np.allclose(a[0], a[1])


def test_responsibilities_per_spec(two_group_data):
    for s in STRATEGY_ORDER:
        z = responsibilities(InitSpec(s, seed=1), two_group_data, 2)
        np.testing.assert_allclose(z.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        InitSpec("soft_random", n_soft_repeats=0)


def test_best_initialization_takes_argmax(two_group_data):
    res = best_initialization(two_group_data, 2, ModelKind.MN_CWM, seed=4, n_soft_repeats=3)
    assert len(res.report) == 3 + 1 + 1
    best = max(row["loglik"] for row in res.report if row["loglik"] is not None)
    assert res.fit.loglik == best
    per = res.strategy_best()
    assert set(per) == {s.value for s in STRATEGY_ORDER}
    assert per[res.strategy.value] == best


def test_best_initialization_single_strategy(two_group_data):
    res = best_initialization(two_group_data, 2, "cwm", seed=4, strategies=[Strategy.KMEANS])
    assert res.strategy is Strategy.KMEANS
    assert [row["strategy"] for row in res.report] == ["kmeans"]
    with pytest.raises(ValueError):
        best_initialization(two_group_data, 2, "cwm", seed=4, strategies=[])


def test_best_initialization_single_group(two_group_data):
    res = best_initialization(two_group_data, 1, "fmr", seed=0)
    assert res.fit.G == 1
    assert len({row["loglik"] for row in res.report}) == 1


def test_best_initialization_deterministic(two_group_data):
    a = best_initialization(two_group_data, 2, "mmn", seed=9, n_soft_repeats=2)
    b = best_initialization(two_group_data, 2, "mmn", seed=9, n_soft_repeats=2)
    assert a.fit.loglik == b.fit.loglik
    np.testing.assert_array_equal(a.z0, b.z0)


def test_best_initialization_all_fail():
    gen = np.random.default_rng(0)
    data = Dataset(gen.standard_normal((6, 2, 2)), gen.standard_normal((6, 2, 2)))
    with pytest.raises(AllStrategiesFailed):
        best_initialization(data, 3, "cwm", seed=0, n_soft_repeats=2)


def test_seed_derivation(monkeypatch):
    assert derive(5, 1, 2).spawn_key == (1, 2)
    a = np.random.default_rng(derive(5, 1)).uniform()
    b = np.random.default_rng(derive(derive(5), 1)).uniform()
    assert a == b
    assert int_seed(5, 1) == int_seed(5, 1) < 2**31
    monkeypatch.setenv("MVCWM_SEED", "77")
    assert default_seed() == 77
    monkeypatch.delenv("MVCWM_SEED")
    assert default_seed() != 77
