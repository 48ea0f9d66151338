"""Time the hot kernels under numba against the plain-Python fallback.

Run as ``python -m vlcrelay.benchmark [--n N] [--repeat R]``.  Also checks
that both paths produce identical outputs on the same inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._kernels import ge_chain_py, relay_scan_py


def _timed(fn, *args, repeat: int = 3) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _relay_args(n: int, rng: np.random.Generator):
    received = (rng.random(n) > 0.3).astype(np.uint8)
    period, pt, dead, l0 = 278.26e-6, 278.26e-6, 38.5e-6, 595.02e-6
    def make():
        return (received, period, pt, dead, l0,
                np.zeros(n, np.uint8), np.zeros(n, np.uint8), np.full(n, np.nan))
    return make


def _ge_args(n: int, rng: np.random.Generator):
    u = rng.random(2 * n)
    def make():
        return (u[0::2], u[1::2], 0.02, 0.1, 0.01, 0.5, np.zeros(n, np.uint8))
    return make


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1_000_000, help="packets per run")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    try:
        from numba import njit
    except ImportError:
        njit = None
        print("numba not importable; timing the python path only")

    rng = np.random.default_rng(0)
    cases = [
        ("relay_scan", relay_scan_py, _relay_args(args.n, rng)),
        ("ge_chain", ge_chain_py, _ge_args(args.n, rng)),
    ]
    print(f"{'kernel':<12} {'python [s]':>12} {'numba [s]':>12} {'speedup':>9}")
    for name, py_fn, make_args in cases:
        py_args = make_args()
        t_py = _timed(py_fn, *py_args, repeat=args.repeat)
        if njit is None:
            print(f"{name:<12} {t_py:12.4f} {'-':>12} {'-':>9}")
            continue
        jit_fn = njit(cache=True, nogil=True)(py_fn)
        warm = make_args()
        jit_fn(*warm)  # compile outside the timing loop
        jit_args = make_args()
        t_jit = _timed(jit_fn, *jit_args, repeat=args.repeat)
        check_py, check_jit = make_args(), make_args()
        py_fn(*check_py)
        jit_fn(*check_jit)
        same = all(np.array_equal(a, b, equal_nan=True)
                   for a, b in zip(check_py, check_jit)
                   if isinstance(a, np.ndarray))
        print(f"{name:<12} {t_py:12.4f} {t_jit:12.4f} {t_py / t_jit:9.1f}"
              + ("" if same else "  MISMATCH"))
        if not same:
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
