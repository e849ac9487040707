import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rplauth import _kernels
from rplauth.bloom import (
    BloomFilter,
    MalformedElement,
    element_from_bits,
    element_query,
    element_to_bits,
    fpr_classic,
    fpr_exact,
    measure_fpr,
    pack_bits,
    unpack_bits,
)

nonces = st.integers(0, 2**63 - 1)


def brute_force_fpr(m, n, k):
    """Enumerate every placement of the n*k insert positions and the k probe positions."""
    t = n * k
    hits = total = 0
    for ins in itertools.product(range(m), repeat=t):
        s = set(ins)
        for probe in itertools.product(range(m), repeat=k):
            total += 1
            hits += all(p in s for p in probe)
    return hits / total


def test_insert_then_query():
    f = BloomFilter(12)
    f.insert(42)
    assert f.query(42)


def test_empty_filter_rejects_everything():
    f = BloomFilter(12)
    assert not f.query_many(np.arange(1000, dtype=np.uint64)).any()


@settings(max_examples=200, deadline=None)
@given(ins=st.lists(nonces, min_size=0, max_size=30), m=st.integers(4, 96), k=st.integers(1, 8))
def test_no_false_negatives(ins, m, k):
    f = BloomFilter.of(ins, m, k)
    assert all(f.query(x) for x in ins)


@settings(max_examples=100, deadline=None)
@given(a=st.lists(nonces, max_size=10), b=st.lists(nonces, max_size=10), probe=nonces)
def test_superset_monotonicity(a, b, probe):
    f1 = BloomFilter.of(a, 24)
    f2 = BloomFilter.of(a + b, 24)
    assert f2.covers(f1)
    if f1.query(probe):
        assert f2.query(probe)


@pytest.mark.parametrize("m,n,k", [(4, 1, 2), (5, 2, 2), (6, 1, 3), (4, 2, 3)])
def test_exact_formula_against_enumeration(m, n, k):
    assert fpr_exact(m, n, k) == pytest.approx(brute_force_fpr(m, n, k), rel=1e-12)


def test_fpr_example_m12():
    measured = measure_fpr(12, 2, 4, trials=100_000, rng=0)
    assert fpr_classic(12, 2, 4) == pytest.approx(0.063, abs=5e-4)
    assert abs(measured - fpr_classic(12, 2, 4)) <= 0.02


@pytest.mark.parametrize("k", [2, 4, 8])
def test_fpr_band(k):
    measured = measure_fpr(6 * k, k, 4, trials=100_000, rng=k)
    assert abs(measured - fpr_exact(6 * k, k, 4)) <= 0.02


def test_element_query_across_slices():
    el = (BloomFilter.of([1], 12), BloomFilter.of([2], 12), BloomFilter.of([3], 12))
    assert element_query(el, 2)
    # a probe absent from every slice: pick one that no slice reports
    absent = next(x for x in range(10, 10_000) if not any(f.query(x) for f in el))
    assert not element_query(el, absent)


def test_concatenation_preserves_membership():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a = [int(x) for x in rng.integers(0, 2**62, size=int(rng.integers(1, 4)))]
        b = [int(x) for x in rng.integers(0, 2**62, size=int(rng.integers(1, 4)))]
        fa, fb = BloomFilter.of(a, 12), BloomFilter.of(b, 12)
        el = element_from_bits(np.concatenate([fa.bits, fb.bits]), 12)
        assert all(element_query(el, x) for x in a + b)


def test_element_bits_roundtrip_and_malformed():
    el = (BloomFilter.of([5], 12), BloomFilter.of([6], 12))
    bits = element_to_bits(el)
    back = element_from_bits(unpack_bits(pack_bits(bits), len(bits)), 12)
    assert all(x.same_bits(y) for x, y in zip(el, back))
    with pytest.raises(MalformedElement):
        element_from_bits(np.zeros(13, dtype=np.uint8), 12)


@pytest.mark.skipif(_kernels.BACKEND != "numba", reason="numba backend not active")
def test_numba_kernels_match_numpy():
    np_pos, np_ins, np_query, np_hits = _kernels.NUMPY_KERNELS
    rng = np.random.default_rng(8)
    xs = rng.integers(0, 2**63, size=5000, dtype=np.uint64)
    for m, k in [(12, 4), (48, 4), (7, 1), (256, 8)]:
        assert np.array_equal(_kernels.positions(xs, m, k), np_pos(xs, m, k))
        b1 = np.zeros(m, dtype=np.uint8)
        b2 = np.zeros(m, dtype=np.uint8)
        _kernels.insert(b1, xs[:5], m, k)
        np_ins(b2, xs[:5], m, k)
        assert np.array_equal(b1, b2)
        assert np.array_equal(_kernels.query(b1, xs, m, k), np_query(b2, xs, m, k))
        ins = xs[:4000].reshape(2000, 2)
        prb = xs[4000:].reshape(1000, 1)
        assert _kernels.fpr_hits(ins[:1000], prb, m, k) == np_hits(ins[:1000], prb, m, k)


def test_env_var_selects_numpy_backend():
    env = dict(os.environ, RPLAUTH_KERNELS="numpy")
    out = subprocess.run([sys.executable, "-c", "from rplauth import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
