"""Compiled versus numpy kernels.

Times every kernel on stacks shaped like one E-step or CM-step of an
``N = 200``, ``p = q = r = 3`` problem, then a complete G=4 ECM fit on a
Scenario A1 dataset under each backend.

    python3 benchmarks/bench_kernels.py [--n 200] [--d 3] [--repeat 5]
"""
import argparse
import contextlib
import statistics
import time

import numpy as np

from mvcwm import _pykernels, kernels

try:
    from mvcwm import _kernels
except ImportError:  # pragma: no cover - extension not built
    _kernels = None


@contextlib.contextmanager
def backend(mod):
    saved = {name: getattr(kernels, name) for name in kernels.__all__}
    try:
        for name in kernels.__all__:
            setattr(kernels, name, getattr(mod, name))
        yield
    finally:
        for name, value in saved.items():
            setattr(kernels, name, value)


def best_time(fn, repeat, number):
    """Median over ``repeat`` runs of the mean time of ``number`` calls, in microseconds."""
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        runs.append((time.perf_counter() - t0) / number)
    return 1e6 * statistics.median(runs)


def spd(gen, d):
    A = gen.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


def kernel_cases(n, d, gen):
    R = gen.standard_normal((n, d, d))
    Xs = gen.standard_normal((n, d + 1, d))
    w = gen.uniform(size=n)
    A, B, S = spd(gen, d), spd(gen, d), spd(gen, d)
    return {
        f"chol_inv_logdet ({d}x{d})": lambda m: m.chol_inv_logdet(S),
        f"quad_trace (n={n})": lambda m: m.quad_trace(R, A, B),
        f"row_scatter (n={n})": lambda m: m.row_scatter(w, R, B),
        f"col_scatter (n={n})": lambda m: m.col_scatter(w, R, A),
        f"cross_moments (n={n})": lambda m: m.cross_moments(w, R, Xs, B),
    }


def full_fit(n, seed):
    from mvcwm.cwm import fit_ecm
    from mvcwm.init import init_kmeans, shared_psi
    from mvcwm.sim import generate_dataset, scenario

    data = generate_dataset(scenario("A1", N=n, seed=seed))
    z0 = init_kmeans(data, 4, seed)
    PsiX0, PsiY0 = shared_psi(data.r, 4, seed)
    return lambda: fit_ecm(data, 4, z0, PsiX0, PsiY0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return 1

    gen = np.random.default_rng(args.seed)
    mods = (_pykernels, _kernels)
    print(f"{'kernel':<28}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for label, call in kernel_cases(args.n, args.d, gen).items():
        times = [best_time(lambda m=m: call(m), args.repeat, 200) for m in mods]
        print(f"{label:<28}{times[0]:>12.1f}{times[1]:>12.1f}{times[0] / times[1]:>9.1f}x")

    fit = full_fit(args.n, args.seed)
    times, iters = [], []
    for m in mods:
        with backend(m):
            iters.append(fit().iterations)
            times.append(best_time(fit, args.repeat, 1) / 1e3)
    print(f"{'ECM fit A1 G=4 (ms)':<28}{times[0]:>12.1f}{times[1]:>12.1f}"
          f"{times[0] / times[1]:>9.1f}x   iterations {iters[0]} / {iters[1]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
