"""Version hash chain, per-version rank hash chains and the nested encryption chain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .primitives import PrimitiveSuite

MAX_RANK_INDEX = 2**16 - 1
DEFAULT_L = 64


def hash_forward(suite: PrimitiveSuite, e: bytes, t: int) -> bytes:
    """Apply the suite's hash ``t`` times."""
    return suite.hash_forward(e, t)


def build_version_chain(suite: PrimitiveSuite, seed: bytes, n: int) -> list[bytes]:
    """Return ``V_0..V_n`` with ``V_i = h^(n+1-i)(seed)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    out = [suite.h(seed)]  # V_n
    for _ in range(n):
        out.append(suite.h(out[-1]))
    out.reverse()
    return out


def build_rank_chain(suite: PrimitiveSuite, seed: bytes, l: int) -> list[bytes]:
    """Return ``R_0..R_l`` with ``R_j = h^(j+1)(seed)``; rank j is cheaper to go up than down."""
    if l < 0:
        raise ValueError("l must be >= 0")
    out = [suite.h(seed)]
    for _ in range(l):
        out.append(suite.h(out[-1]))
    return out


def build_encryption_chain(suite: PrimitiveSuite, tails: list[bytes]) -> list[bytes]:
    """Nest the rank-chain tails: ``c_n = R_{n,l}``, ``c_i = enc_{c_{i+1}}(R_{i,l})``.

    ``tails[0]`` is ``R_{1,l}``; the result is ``[c_1, ..., c_n]``.
    """
    if not tails:
        raise ValueError("need at least one rank-chain tail")
    out = [tails[-1]]
    for tail in reversed(tails[:-1]):
        out.append(suite.enc(out[-1], tail))
    out.reverse()
    return out


@dataclass(frozen=True)
class ChainSet:
    suite: PrimitiveSuite
    n: int
    l: int
    version_chain: tuple[bytes, ...]  # V_0..V_n
    rank_seeds: tuple[bytes, ...]  # x_1..x_n
    rank_tails: tuple[bytes, ...]  # R_{1,l}..R_{n,l}
    enc_chain: tuple[bytes, ...]  # c_1..c_n

    @classmethod
    def build(cls, suite: PrimitiveSuite, r: bytes, seeds: list[bytes], l: int = DEFAULT_L) -> "ChainSet":
        if not 0 <= l <= MAX_RANK_INDEX:
            raise ValueError(f"l must be in [0, {MAX_RANK_INDEX}]")
        n = len(seeds)
        tails = [suite.hash_forward(x, l + 1) for x in seeds]
        return cls(
            suite=suite,
            n=n,
            l=l,
            version_chain=tuple(build_version_chain(suite, r, n)),
            rank_seeds=tuple(seeds),
            rank_tails=tuple(tails),
            enc_chain=tuple(build_encryption_chain(suite, tails)) if n else (),
        )

    @classmethod
    def generate(cls, suite: PrimitiveSuite, n: int, l: int = DEFAULT_L, rng=None) -> "ChainSet":
        rng = np.random.default_rng(rng)
        r = suite.random_element(rng)
        seeds = [suite.random_element(rng) for _ in range(n)]
        return cls.build(suite, r, seeds, l)

    def V(self, i: int) -> bytes:
        return self.version_chain[i]

    def x(self, i: int) -> bytes:
        return self.rank_seeds[i - 1]

    def tail(self, i: int) -> bytes:
        return self.rank_tails[i - 1]

    def c(self, i: int) -> bytes:
        return self.enc_chain[i - 1]

    def rank_element(self, i: int, j: int) -> bytes:
        """``R_{i,j} = h^(j+1)(x_i)``."""
        return self.suite.hash_forward(self.x(i), j + 1)

    def check_invariants(self) -> dict[str, bool]:
        s = self.suite
        r_ok = all(self.V(i - 1) == s.h(self.V(i)) for i in range(1, self.n + 1))
        tails_ok = all(self.tail(i) == s.hash_forward(self.x(i), self.l + 1) for i in range(1, self.n + 1))
        enc_ok = self.n == 0 or (
            self.c(self.n) == self.tail(self.n)
            and all(self.c(i) == s.enc(self.c(i + 1), self.tail(i)) for i in range(1, self.n))
        )
        return {"version_chain": r_ok, "rank_tails": tails_ok, "encryption_chain": enc_ok}


def selftest(suite: PrimitiveSuite, n: int = 8, l: int = DEFAULT_L, seed: int = 0) -> dict[str, bool]:
    return ChainSet.generate(suite, n, l, rng=seed).check_invariants()
