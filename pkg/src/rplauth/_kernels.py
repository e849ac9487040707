"""Bloom filter bit kernels.

Two interchangeable paths: numba ``@njit`` loops and vectorised numpy.  The
numba path is used when numba imports and ``RPLAUTH_KERNELS`` is not set to
``numpy``.  Both produce bit-identical results.

Bit positions for a 64-bit nonce are the first ``k`` outputs of a splitmix64
stream seeded with the nonce, reduced modulo ``m``.
"""
from __future__ import annotations

import os

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


# -- numpy path ----------------------------------------------------------------

def _np_positions(nonces, m, k):
    x = np.asarray(nonces, dtype=np.uint64)
    out = np.empty((x.shape[0], k), dtype=np.int64)
    state = x.copy()
    mm = np.uint64(m)
    with np.errstate(over="ignore"):
        for i in range(k):
            state = state + _GOLDEN
            z = state
            z = (z ^ (z >> _S30)) * _C1
            z = (z ^ (z >> _S27)) * _C2
            z = z ^ (z >> _S31)
            out[:, i] = (z % mm).astype(np.int64)
    return out


def _np_insert(bits, nonces, m, k):
    pos = _np_positions(nonces, m, k)
    bits[pos.ravel()] = 1


def _np_query(bits, nonces, m, k):
    pos = _np_positions(nonces, m, k)
    return bits[pos].astype(bool).all(axis=1)


def _np_fpr_hits(inserts, probes, m, k):
    trials, n = inserts.shape
    bits = np.zeros((trials, m), dtype=np.uint8)
    pos = _np_positions(inserts.ravel(), m, k).reshape(trials, n * k)
    rows = np.repeat(np.arange(trials), n * k)
    bits[rows, pos.ravel()] = 1
    p = probes.shape[1]
    ppos = _np_positions(probes.ravel(), m, k).reshape(trials, p, k)
    hit = bits[np.arange(trials)[:, None, None], ppos].all(axis=2)
    return int(hit.sum())


# -- numba path ----------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def _mix(state):
        z = state
        z = (z ^ (z >> _S30)) * _C1
        z = (z ^ (z >> _S27)) * _C2
        return z ^ (z >> _S31)

    @njit(cache=True)
    def positions(nonces, m, k):
        out = np.empty((nonces.shape[0], k), dtype=np.int64)
        mm = np.uint64(m)
        for r in range(nonces.shape[0]):
            state = nonces[r]
            for i in range(k):
                state = state + _GOLDEN
                out[r, i] = np.int64(_mix(state) % mm)
        return out

    @njit(cache=True)
    def insert(bits, nonces, m, k):
        mm = np.uint64(m)
        for r in range(nonces.shape[0]):
            state = nonces[r]
            for i in range(k):
                state = state + _GOLDEN
                bits[np.int64(_mix(state) % mm)] = 1

    @njit(cache=True)
    def query(bits, nonces, m, k):
        out = np.empty(nonces.shape[0], dtype=np.bool_)
        mm = np.uint64(m)
        for r in range(nonces.shape[0]):
            state = nonces[r]
            ok = True
            for i in range(k):
                state = state + _GOLDEN
                if bits[np.int64(_mix(state) % mm)] == 0:
                    ok = False
            out[r] = ok
        return out

    @njit(cache=True)
    def fpr_hits(inserts, probes, m, k):
        bits = np.zeros(m, dtype=np.uint8)
        mm = np.uint64(m)
        hits = 0
        for t in range(inserts.shape[0]):
            bits[:] = 0
            for r in range(inserts.shape[1]):
                state = inserts[t, r]
                for i in range(k):
                    state = state + _GOLDEN
                    bits[np.int64(_mix(state) % mm)] = 1
            for r in range(probes.shape[1]):
                state = probes[t, r]
                ok = True
                for i in range(k):
                    state = state + _GOLDEN
                    if bits[np.int64(_mix(state) % mm)] == 0:
                        ok = False
                if ok:
                    hits += 1
        return hits

    return positions, insert, query, fpr_hits


def _select():
    want = os.environ.get("RPLAUTH_KERNELS", "numba").lower()
    if want != "numpy":
        try:
            return "numba", _build_numba()
        except ImportError:
            pass
    return "numpy", (_np_positions, _np_insert, _np_query, _np_fpr_hits)


BACKEND, (_positions, _insert, _query, _fpr_hits) = _select()
NUMPY_KERNELS = (_np_positions, _np_insert, _np_query, _np_fpr_hits)


def _u64(nonces):
    return np.ascontiguousarray(nonces, dtype=np.uint64).reshape(-1)


def positions(nonces, m: int, k: int) -> np.ndarray:
    return _positions(_u64(nonces), m, k)


def insert(bits: np.ndarray, nonces, m: int, k: int) -> None:
    _insert(bits, _u64(nonces), m, k)


def query(bits: np.ndarray, nonces, m: int, k: int) -> np.ndarray:
    return _query(bits, _u64(nonces), m, k)


def fpr_hits(inserts: np.ndarray, probes: np.ndarray, m: int, k: int) -> int:
    """Count probe hits over independent trials (row t: fresh filter, ``inserts[t]`` then ``probes[t]``)."""
    ins = np.ascontiguousarray(inserts, dtype=np.uint64)
    prb = np.ascontiguousarray(probes, dtype=np.uint64)
    return int(_fpr_hits(ins, prb, m, k))
