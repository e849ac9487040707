"""Tiny Bloom filters and the concatenated slices used in attestation arrays."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, exp, factorial

import numpy as np

from . import _kernels

K_HASH = 4
BITS_PER_CHILD = 6


class MalformedElement(ValueError):
    pass


def default_m(fanout: int) -> int:
    return BITS_PER_CHILD * max(1, fanout)


@dataclass
class BloomFilter:
    m: int
    k_hash: int = K_HASH
    bits: np.ndarray = None
    # bookkeeping only, never serialised: the nonces actually inserted
    members: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        if self.bits is None:
            self.bits = np.zeros(self.m, dtype=np.uint8)
        elif len(self.bits) != self.m:
            raise ValueError("bit vector length differs from m")

    @classmethod
    def of(cls, nonces, m: int, k_hash: int = K_HASH) -> "BloomFilter":
        f = cls(m, k_hash)
        for x in nonces:
            f.insert(x)
        return f

    @property
    def inserted(self) -> int:
        return len(self.members)

    def insert(self, nonce: int) -> None:
        _kernels.insert(self.bits, [nonce], self.m, self.k_hash)
        self.members.add(int(nonce))

    def query(self, nonce: int) -> bool:
        return bool(_kernels.query(self.bits, [nonce], self.m, self.k_hash)[0])

    def query_many(self, nonces) -> np.ndarray:
        return _kernels.query(self.bits, nonces, self.m, self.k_hash)

    def copy(self) -> "BloomFilter":
        return BloomFilter(self.m, self.k_hash, self.bits.copy(), set(self.members))

    def covers(self, other: "BloomFilter") -> bool:
        """Positional bit superset."""
        return self.m == other.m and bool(np.all(self.bits >= other.bits))

    def same_bits(self, other: "BloomFilter") -> bool:
        return self.m == other.m and bool(np.array_equal(self.bits, other.bits))

    def popcount(self) -> int:
        return int(self.bits.sum())


# An attestation array element is an ordered tuple of equal-width slices.
Element = tuple


def element_bits(element: Element) -> int:
    return sum(f.m for f in element)


def element_query(element: Element, nonce: int) -> bool:
    """True iff any slice of the element reports membership."""
    return any(f.query(nonce) for f in element)


def element_truly_contains(element: Element, nonce: int) -> bool:
    """Ground truth from bookkeeping; used only to label Bloom false alarms."""
    return any(int(nonce) in f.members for f in element)


def element_from_bits(bits, m: int, k_hash: int = K_HASH) -> Element:
    bits = np.asarray(bits, dtype=np.uint8)
    if m <= 0 or len(bits) % m:
        raise MalformedElement(f"element of {len(bits)} bits is not a multiple of m={m}")
    return tuple(BloomFilter(m, k_hash, bits[i:i + m].copy()) for i in range(0, len(bits), m))


def element_to_bits(element: Element) -> np.ndarray:
    if not element:
        return np.zeros(0, dtype=np.uint8)
    return np.concatenate([f.bits for f in element])


def pack_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, nbits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:nbits]


# -- false-positive analysis -----------------------------------------------------

def fpr_classic(m: int, n: int, k_hash: int = K_HASH) -> float:
    """The textbook approximation ``(1 - (1 - 1/m)^(k n))^k``."""
    return (1.0 - (1.0 - 1.0 / m) ** (k_hash * n)) ** k_hash


def fpr_exact(m: int, n: int, k_hash: int = K_HASH) -> float:
    """Exact rate for k_hash independent uniform positions per element.

    Sums over the number of set bits ``i`` after ``t = k n`` throws:
    ``P(i) = C(m, i) i! S(t, i) / m^t`` and a probe hits with ``(i/m)^k``.
    """
    t = k_hash * n
    # Stirling numbers of the second kind S(t, i) by the usual recurrence.
    S = [[0] * (t + 1) for _ in range(t + 1)]
    S[0][0] = 1
    for a in range(1, t + 1):
        for b in range(1, a + 1):
            S[a][b] = b * S[a - 1][b] + S[a - 1][b - 1]
    total = 0.0
    for i in range(1, min(m, t) + 1):
        p_i = comb(m, i) * factorial(i) * S[t][i] / m**t
        total += p_i * (i / m) ** k_hash
    return total


def fpr_optimal_plain(bits_per_element: float) -> float:
    """Best plain-filter rate at a given bits/element (k chosen optimally, continuous)."""
    return exp(-bits_per_element * np.log(2) ** 2)


def measure_fpr(m: int, n: int, k_hash: int = K_HASH, trials: int = 100_000, probes: int = 1, rng=None) -> float:
    """Monte Carlo false-positive rate: fresh random filter per trial, random probes."""
    rng = np.random.default_rng(rng)
    ins = rng.integers(0, 2**63, size=(trials, n), dtype=np.uint64)
    prb = rng.integers(0, 2**63, size=(trials, probes), dtype=np.uint64)
    return _kernels.fpr_hits(ins, prb, m, k_hash) / (trials * probes)
