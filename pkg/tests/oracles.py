"""Slow, independent reference implementations used by the tests."""
import itertools

import numpy as np


def ari_pair_count(a, b):
    """Adjusted Rand index from explicit pair counts.

    Classifies every pair of units by whether it is together in ``a`` and in
    ``b`` and applies ``2(n11 n00 - n10 n01) / ((n11+n10)(n10+n00) + (n11+n01)(n01+n00))``.
    """
    n11 = n10 = n01 = n00 = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        if sa and sb:
            n11 += 1
        elif sa:
            n10 += 1
        elif sb:
            n01 += 1
        else:
            n00 += 1
    den = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    if den == 0:
        return 1.0
    return 2.0 * (n11 * n00 - n10 * n01) / den


def eta_exhaustive(true, pred):
    """Misclassification percentage minimized over every injective relabeling."""
    true, pred = list(true), list(pred)
    tl, pl = sorted(set(true)), sorted(set(pred))
    k = max(len(tl), len(pl))
    tl = tl + [object() for _ in range(k - len(tl))]
    best = len(true)
    for perm in itertools.permutations(tl, k):
        mapping = dict(zip(pl, perm))
        wrong = sum(mapping[p] != t for t, p in zip(true, pred))
        best = min(best, wrong)
    return 100.0 * best / len(true)


def set_partitions(n, max_blocks):
    """Every partition of ``range(n)`` into at most ``max_blocks`` blocks, as label lists."""
    def rec(i, labels, used):
        if i == n:
            yield list(labels)
            return
        for b in range(min(used + 1, max_blocks)):
            labels.append(b)
            yield from rec(i + 1, labels, max(used, b + 1))
            labels.pop()
    yield from rec(0, [], 0)


def kron_logpdf(Y, M, Phi, Psi):
    """Matrix normal log-density through the ``kron(Psi, Phi)`` vector law."""
    from scipy.stats import multivariate_normal

    return multivariate_normal(np.ravel(M, order="F"), np.kron(Psi, Phi)).logpdf(
        np.ravel(Y, order="F"))


def co_membership(partitions):
    """Boolean matrix (K, n(n-1)/2): is pair (i, j) in the same block of partition k."""
    P = np.asarray(partitions)
    i, j = np.triu_indices(P.shape[1], k=1)
    return P[:, i] == P[:, j]


def ari_pair_count_table(Ca, Cb):
    """:func:`ari_pair_count` for every row of ``Ca`` against every row of ``Cb``."""
    Ca, Cb = Ca.astype(np.int64), Cb.astype(np.int64)
    N = Ca.shape[1]
    n11 = Ca @ Cb.T
    n10 = Ca.sum(axis=1)[:, None] - n11
    n01 = Cb.sum(axis=1)[None, :] - n11
    n00 = N - n11 - n10 - n01
    num = 2.0 * (n11 * n00 - n10 * n01)
    den = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den == 0, 1.0, num / np.where(den == 0, 1, den))
