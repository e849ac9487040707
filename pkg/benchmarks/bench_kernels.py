"""Bloom kernel timings: numba loops vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trials 200000]

Both paths are checked for identical output before timing.
"""
import argparse
import time

import numpy as np

from rplauth import _kernels


def _best(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=200_000)
    ap.add_argument("--m", type=int, default=12)
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--k-hash", type=int, default=4)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    ins = rng.integers(0, 2**63, size=(args.trials, args.n), dtype=np.uint64)
    prb = rng.integers(0, 2**63, size=(args.trials, 1), dtype=np.uint64)
    nonces = ins.ravel()
    np_pos, _, np_query, np_hits = _kernels.NUMPY_KERNELS

    if _kernels.BACKEND != "numba":
        print("numba unavailable or disabled (RPLAUTH_KERNELS=numpy); nothing to compare")
        return

    # warm the JIT, and check agreement
    a = _kernels.positions(nonces, args.m, args.k_hash)
    assert np.array_equal(a, np_pos(nonces, args.m, args.k_hash))
    h1 = _kernels.fpr_hits(ins, prb, args.m, args.k_hash)
    h2 = np_hits(ins, prb, args.m, args.k_hash)
    assert h1 == h2, (h1, h2)
    bits = np.zeros(args.m, dtype=np.uint8)
    _kernels.insert(bits, nonces[:4], args.m, args.k_hash)
    assert np.array_equal(_kernels.query(bits, nonces, args.m, args.k_hash), np_query(bits, nonces, args.m, args.k_hash))

    rows = [
        ("positions", lambda: _kernels.positions(nonces, args.m, args.k_hash),
         lambda: np_pos(nonces, args.m, args.k_hash)),
        ("query", lambda: _kernels.query(bits, nonces, args.m, args.k_hash),
         lambda: np_query(bits, nonces, args.m, args.k_hash)),
        ("fpr_hits", lambda: _kernels.fpr_hits(ins, prb, args.m, args.k_hash),
         lambda: np_hits(ins, prb, args.m, args.k_hash)),
    ]
    print(f"{'kernel':<10} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, fast, slow in rows:
        tf, ts = _best(fast), _best(slow)
        print(f"{name:<10} {tf * 1e3:>10.2f} {ts * 1e3:>10.2f} {ts / tf:>8.1f}")
    print(f"fpr (m={args.m}, n={args.n}, k={args.k_hash}): {h1 / args.trials:.4f}")


if __name__ == "__main__":
    main()
