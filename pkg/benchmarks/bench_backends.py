"""Timing comparison of the two expectation-kernel backends.

The jit and numpy implementations compute identical values (the test suite
asserts agreement to 1e-13); this script measures the speed difference on
the forward and backward sweeps at a few sizes.

Run from the repository root:  python3 benchmarks/bench_backends.py
"""

import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from cgpds.backend import _numpy

try:
    from cgpds.backend import _numba
    BACKENDS = [("numpy", _numpy), ("numba", _numba)]
except ImportError:
    BACKENDS = [("numpy", _numpy)]

SIZES = [(30, 10, 2), (100, 20, 3), (300, 30, 5)]      # (N, M, Q)
REPEATS = 5


def _instance(rng, n, m, q):
    sig2 = 1.3
    ell2 = rng.uniform(0.5, 2.0, size=q)
    Z = rng.normal(size=(m, q))
    mu = rng.normal(size=(n, q))
    s = rng.uniform(0.05, 0.5, size=(n, q))
    w = rng.uniform(0.5, 2.0, size=n)
    adj1 = rng.normal(size=(n, m))
    adjo = rng.normal(size=(m, m))
    return sig2, ell2, Z, mu, s, w, adj1, adjo


def _time(fn, *args):
    fn(*args)                       # warm-up (jit compilation, caches)
    best = np.inf
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    rng = np.random.default_rng(0)
    header = f"{'size':>14} {'kernel':>12}" + "".join(f"{name:>12}" for name, _ in BACKENDS)
    print(header)
    print("-" * len(header))
    for n, m, q in SIZES:
        sig2, ell2, Z, mu, s, w, adj1, adjo = _instance(rng, n, m, q)
        cases = [
            ("psi1_fwd", lambda b: b.psi1_fwd(sig2, ell2, Z, mu, s)),
            ("psi1_bwd", lambda b: b.psi1_bwd(adj1, sig2, ell2, Z, mu, s)),
            ("omega_fwd", lambda b: b.omega_fwd(sig2, ell2, Z, sig2, ell2, Z, mu, s, w)),
            ("omega_bwd", lambda b: b.omega_bwd(adjo, sig2, ell2, Z, sig2, ell2, Z, mu, s, w)),
        ]
        for label, call in cases:
            times = [_time(call, impl) for _, impl in BACKENDS]
            row = f"{f'N={n} M={m} Q={q}':>14} {label:>12}"
            for t in times:
                row += f"{t*1e3:>10.3f}ms"
            if len(times) == 2 and times[1] > 0:
                row += f"   x{times[0] / times[1]:.1f}"
            print(row)
    print()
    print("columns are best-of-%d wall times; the trailing factor is numpy/jit." % REPEATS)


if __name__ == "__main__":
    main()
