"""Topology-aware rank validation.

Single path: a parent scribes its rank into a test message, every hop on the
way to the root checks the scribed rank against its own, the root signs it and
the reply travels back the same way.

Convergecast: every node contributes a nonce; arrays of tiny Bloom filters are
merged level by level, the root signs the full array and floods it, and every
node checks that its nonce sits at exactly the index of its rank and that the
array it sent up survived unchanged.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .bloom import K_HASH, BloomFilter, MalformedElement, element_bits, element_truly_contains, pack_bits, unpack_bits
from .dodag import HOP_LIMIT, NodeConfig, RplNode
from .simnet import Message, Network

MAX_ELEMENTS = 255
MAX_SLICES = 2**16 - 1


class TrailVerdict(str, enum.Enum):
    VERIFIED = "Verified"
    NONCE_MISSING = "NonceMissing"
    NONCE_DUPLICATED = "NonceDuplicated"
    ARRAY_SHRUNK = "ArrayShrunk"
    SIGNATURE_INVALID = "SignatureInvalid"
    VERSION_MISMATCH = "VersionMismatch"
    RANK_VIOLATION = "RankViolation"
    TIMEOUT = "Timeout"

    @property
    def ok(self) -> bool:
        return self is TrailVerdict.VERIFIED


class SizeOverflow(OverflowError):
    pass


# -- single path ---------------------------------------------------------------

def hop_check(own_rank: int, scribed: int, sender_rank: int) -> bool:
    """Forwarding check on the way up.

    The scribed rank must exceed the forwarder's own rank, and the previous hop's
    rank must lie above the forwarder's and not above the scribed value.
    """
    return scribed > own_rank and own_rank < sender_rank <= scribed


@dataclass(frozen=True)
class PathResult:
    verdict: TrailVerdict
    node: int | None = None


def single_path_validate(path, ranks, advertised=None) -> PathResult:
    """Walk one test from ``path[0]`` up to the root ``path[-1]`` and back.

    ``ranks`` are the nodes' own ranks; ``advertised`` (default ``ranks``) is
    what each node scribes or sends as its sender rank.
    """
    advertised = advertised or ranks
    if len(path) < 2:
        raise ValueError("path needs an initiator and at least its parent")
    scribed = advertised[path[1]]
    sender = advertised[path[1]]
    for u in path[2:]:
        if not hop_check(ranks[u], scribed, sender):
            return PathResult(TrailVerdict.RANK_VIOLATION, u)
        sender = advertised[u]
    # the scribing parent is exempt on the way back: it wrote its own rank
    for u in reversed(path[2:-1]):
        if not scribed > ranks[u]:
            return PathResult(TrailVerdict.RANK_VIOLATION, u)
    return PathResult(TrailVerdict.VERIFIED)


@dataclass(frozen=True)
class TrailTest:
    nonce: int
    initiator: int
    scribed: int | None
    sender_rank: int | None
    hop_limit: int = HOP_LIMIT


@dataclass(frozen=True)
class TrailReply:
    nonce: int
    scribed: int
    version: int
    signature: bytes

    def signed_bytes(self) -> bytes:
        return reply_bytes(self.nonce, self.scribed, self.version)


def reply_bytes(nonce: int, scribed: int, version: int) -> bytes:
    return b"TRAIL-REPLY" + struct.pack(">QHI", nonce, scribed, version)


# -- convergecast arrays ---------------------------------------------------------

def merge_arrays(children_nonces, child_arrays, m: int, k_hash: int = K_HASH) -> list:
    """Build a node's array from its children.

    Element 1 is one filter over the children's nonces; element ``t+1`` is the
    concatenation of the children's element ``t``, children in ascending id.
    ``child_arrays`` maps child id to that child's array; a leaf's array is empty.
    """
    if not child_arrays and not children_nonces:
        return []
    out = [(BloomFilter.of(children_nonces, m, k_hash),)]
    depth = max((len(a) for a in child_arrays.values()), default=0)
    for t in range(depth):
        slices = []
        for c in sorted(child_arrays):
            a = child_arrays[c]
            if t < len(a):
                slices.extend(a[t])
        out.append(tuple(slices))
    return out


def array_bits(array) -> int:
    return sum(element_bits(e) for e in array)


def encode_array(version: int, array, m: int) -> bytes:
    """version (4 B) | element count (1 B) | per element: slice count (2 B), packed slice bits."""
    if len(array) > MAX_ELEMENTS:
        raise SizeOverflow(f"{len(array)} elements do not fit the count field")
    parts = [struct.pack(">IB", version, len(array))]
    for e in array:
        if len(e) > MAX_SLICES:
            raise SizeOverflow(f"{len(e)} slices do not fit the count field")
        if any(f.m != m for f in e):
            raise MalformedElement("slice width differs from m")
        parts.append(struct.pack(">H", len(e)))
        parts.append(pack_bits(np.concatenate([f.bits for f in e])) if e else b"")
    return b"".join(parts)


def decode_array(data: bytes, m: int, k_hash: int = K_HASH):
    """Inverse of :func:`encode_array`; returns ``(version, array)``."""
    try:
        version, count = struct.unpack_from(">IB", data, 0)
        pos = 5
        array = []
        for _ in range(count):
            (s,) = struct.unpack_from(">H", data, pos)
            pos += 2
            nbits = s * m
            nbytes = (nbits + 7) // 8
            if pos + nbytes > len(data):
                raise MalformedElement("truncated element")
            bits = unpack_bits(data[pos:pos + nbytes], nbits)
            pos += nbytes
            array.append(tuple(BloomFilter(m, k_hash, bits[i * m:(i + 1) * m].copy()) for i in range(s)))
    except struct.error as e:
        raise MalformedElement(str(e)) from None
    if pos != len(data):
        raise MalformedElement("trailing bytes after the last element")
    return version, array


def _stack(element, m: int) -> np.ndarray:
    if not element:
        return np.zeros((0, m), dtype=np.uint8)
    return np.stack([f.bits for f in element])


@dataclass(frozen=True)
class SignedAttestation:
    version: int
    array: tuple
    m: int
    k_hash: int = K_HASH
    signature: bytes = b""

    @cached_property
    def wire(self) -> bytes:
        return encode_array(self.version, self.array, self.m)

    @cached_property
    def stacks(self) -> list:
        return [_stack(e, self.m) for e in self.array]

    @property
    def bits(self) -> int:
        return array_bits(self.array)


def sign_attestation(signer, version: int, array, m: int, k_hash: int = K_HASH) -> SignedAttestation:
    att = SignedAttestation(version, tuple(array), m, k_hash)
    return replace(att, signature=signer.sign(att.wire))


def _hits(att: SignedAttestation, nonce: int) -> list[bool]:
    pos = _kernels.positions([nonce], att.m, att.k_hash)[0]
    return [bool(s.shape[0]) and bool(s[:, pos].all(axis=1).any()) for s in att.stacks]


def _embedded(saved_element, signed_stack: np.ndarray, m: int) -> bool:
    s = len(saved_element)
    if s == 0:
        return True
    if signed_stack.shape[0] < s:
        return False
    mine = _stack(saved_element, m)
    win = sliding_window_view(signed_stack, (s, m))[:, 0]
    return bool(np.all(win == mine, axis=(1, 2)).any())


@dataclass(frozen=True)
class Failure:
    verdict: TrailVerdict
    false_alarm: bool = False
    index: int | None = None


def attestation_failures(rank: int, nonce: int, saved, att: SignedAttestation, version: int, verifier) -> list[Failure]:
    """Every failed check, in check order.

    A duplicate hit whose element does not truly hold the nonce (bookkeeping
    ground truth, never on the wire) is marked as a Bloom false alarm.
    """
    if not verifier.verify(att.wire, att.signature):
        return [Failure(TrailVerdict.SIGNATURE_INVALID)]
    if att.version != version:
        return [Failure(TrailVerdict.VERSION_MISMATCH)]
    out = []
    hits = _hits(att, nonce)
    if not (1 <= rank <= len(hits) and hits[rank - 1]):
        out.append(Failure(TrailVerdict.NONCE_MISSING, index=rank))
    for q, hit in enumerate(hits, start=1):
        if hit and q != rank:
            fa = not element_truly_contains(att.array[q - 1], nonce)
            out.append(Failure(TrailVerdict.NONCE_DUPLICATED, fa, q))
    for t, elem in enumerate(saved, start=1):
        idx = rank + t
        if idx > len(att.array) or not _embedded(elem, att.stacks[idx - 1], att.m):
            out.append(Failure(TrailVerdict.ARRAY_SHRUNK, index=idx))
            break
    return out


def verify_attestation(rank: int, nonce: int, saved, att: SignedAttestation, version: int, verifier) -> TrailVerdict:
    fails = attestation_failures(rank, nonce, saved, att, version, verifier)
    return fails[0].verdict if fails else TrailVerdict.VERIFIED


# -- size predictions ------------------------------------------------------------------

_EXACT = 2**53


def _guard(x: int, what: str) -> int:
    if x > _EXACT:
        raise SizeOverflow(f"{what} = {x} exceeds 2^53")
    return x


@dataclass(frozen=True)
class SizePrediction:
    k: int
    h: int
    m: int
    slice_bytes: float
    nodes: int
    max_bytes: float
    reference_avg: float

    def per_depth_up_bytes(self, d: int) -> float:
        """Bytes a node at depth d sends upward in a balanced tree."""
        if not 1 <= d <= self.h:
            raise ValueError("depth outside the tree")
        return self.slice_bytes * _geo(self.k, self.h - d)


def _geo(k: int, e: int) -> int:
    """``(k^e - 1) / (k - 1)``, i.e. ``1 + k + ... + k^(e-1)``."""
    return e if k == 1 else (k**e - 1) // (k - 1)


def predicted_sizes(k: int, h: int, m: int | None = None) -> SizePrediction:
    if k < 1 or h < 1:
        raise ValueError("need k >= 1 and h >= 1")
    m = 6 * k if m is None else m
    nodes = _guard(_geo(k, h + 1), "node count")
    slices = _guard(_geo(k, h), "slice count")
    slice_bytes = m / 8
    max_bytes = slice_bytes * slices
    return SizePrediction(k, h, m, slice_bytes, nodes, max_bytes, max_bytes / (k + 1))


# -- protocol node -------------------------------------------------------------------

@dataclass
class _Round:
    nonce: int
    expect: set
    got: dict = field(default_factory=dict)
    saved: list | None = None
    sent: bool = False
    relayed: bool = False
    verdict: str | None = None


class TrailNode(RplNode):
    """Plain RPL plus both TRAIL validation modes."""

    def __init__(self, node_id, neighbors, is_root=False, config: NodeConfig | None = None, *,
                 m: int, k_hash: int = K_HASH, signer=None, verifier=None):
        super().__init__(node_id, neighbors, is_root, config)
        self.m = m
        self.k_hash = k_hash
        self.signer = signer
        self.verifier = verifier
        self.round: _Round | None = None
        self.tests: dict[int, dict] = {}  # nonce -> {"from": child} or {"initiator": True}

    # -- convergecast --------------------------------------------------------------

    def own_nonce(self) -> int | None:
        return self.round.nonce

    def trail_start(self, net: Network) -> None:
        self.round = _Round(int(net.rng.integers(1, 2**63)), set(self.state.children))
        if self.is_root or self.state.joined:
            self._maybe_send(net)

    def _maybe_send(self, net: Network) -> None:
        r = self.round
        if r.sent or not r.expect <= set(r.got):
            return
        r.sent = True
        nonces = [n for n, _ in r.got.values() if n is not None]
        arrays = {c: a for c, (_, a) in r.got.items()}
        array = self.build_array(nonces, arrays, r.got)
        if self.is_root:
            att = sign_attestation(self.signer, self.state.version, array, self.m, self.k_hash)
            net.multicast(self.id, Message("ATTEST", att, att.bits, {"elements": len(att.array)}))
            return
        r.saved = array
        nxt = self.state.preferred_parent
        if nxt is None:
            return
        msg = Message("TRAIL_UP", (self.own_nonce(), array), array_bits(array), {"elements": len(array)})
        net.send(self.id, nxt, msg)

    def build_array(self, nonces, arrays, got) -> list:
        return merge_arrays(nonces, arrays, self.m, self.k_hash)

    def on_trail_up(self, net: Network, src: int, payload) -> None:
        r = self.round
        if r is None or src not in r.expect or src in r.got:
            return
        r.got[src] = payload
        self._maybe_send(net)

    def on_attest(self, net: Network, src: int, att: SignedAttestation) -> None:
        r = self.round
        if r is None or r.relayed or self.is_root:
            return
        r.relayed = True
        fails = []
        if r.sent and self.own_nonce() is not None:
            fails = attestation_failures(self.state.rank, self.own_nonce(), r.saved or [], att,
                                         self.state.version, self.verifier)
            r.verdict = fails[0].verdict.value if fails else TrailVerdict.VERIFIED.value
            net.note(self.id, "verdict", check="trail", result=r.verdict, rank=self.state.rank,
                     fails=[[f.verdict.value, f.false_alarm, f.index] for f in fails])
        # forged attestations are not passed on
        if self.state.children and not (fails and fails[0].verdict is TrailVerdict.SIGNATURE_INVALID):
            net.multicast(self.id, Message("ATTEST", att, att.bits, {"elements": len(att.array)}))

    def trail_finalize(self, net: Network) -> None:
        r = self.round
        if self.is_root or r is None or r.verdict is not None:
            return
        r.verdict = TrailVerdict.TIMEOUT.value
        net.note(self.id, "verdict", check="trail", result=r.verdict, rank=self.state.rank, fails=[["Timeout", False, None]])

    # -- single path ---------------------------------------------------------------------

    def scribe_rank(self) -> int | None:
        return self.advertised_rank()

    def single_start(self, net: Network) -> None:
        if self.is_root or self.state.preferred_parent is None:
            return
        nonce = int(net.rng.integers(1, 2**63))
        self.tests[nonce] = {"initiator": True, "done": False}
        t = TrailTest(nonce, self.id, None, self.advertised_rank())
        net.send(self.id, self.state.preferred_parent, Message("TRAIL_TEST", t, 8 * 12))

    def forward_check(self, t: TrailTest) -> bool:
        return hop_check(self.state.rank, t.scribed, t.sender_rank)

    def on_trail_test(self, net: Network, src: int, t: TrailTest) -> None:
        scriber = t.scribed is None
        if scriber:
            t = replace(t, scribed=self.scribe_rank())
        elif not self.forward_check(t):
            net.note(self.id, "verdict", check="trail-single", result=TrailVerdict.RANK_VIOLATION.value,
                     subject=src, initiator=t.initiator)
            return
        if self.is_root:
            sig = self.signer.sign(reply_bytes(t.nonce, t.scribed, self.state.version))
            reply = TrailReply(t.nonce, t.scribed, self.state.version, sig)
            net.send(self.id, src, Message("TRAIL_REPLY", reply, 8 * (14 + len(sig))))
            return
        nxt = self.state.preferred_parent
        if nxt is None or t.hop_limit <= 1:
            return
        self.tests[t.nonce] = {"from": src, "scriber": scriber}
        fwd = replace(t, sender_rank=self.advertised_rank(), hop_limit=t.hop_limit - 1)
        net.send(self.id, nxt, Message("TRAIL_TEST", fwd, 8 * 12))

    def reply_check(self, reply: TrailReply) -> bool:
        return reply.scribed > self.state.rank

    def on_trail_reply(self, net: Network, src: int, reply: TrailReply) -> None:
        entry = self.tests.get(reply.nonce)
        if entry is None:
            return
        if entry.get("initiator"):
            ok = self.verifier.verify(reply.signed_bytes(), reply.signature) and reply.version == self.state.version
            entry["done"] = True
            result = TrailVerdict.VERIFIED if ok else TrailVerdict.SIGNATURE_INVALID
            net.note(self.id, "verdict", check="trail-single", result=result.value, scribed=reply.scribed)
            return
        if not entry.get("scriber") and not self.reply_check(reply):
            net.note(self.id, "verdict", check="trail-single", result=TrailVerdict.RANK_VIOLATION.value, subject=src)
            return
        net.send(self.id, self.tests.pop(reply.nonce)["from"], Message("TRAIL_REPLY", reply, 8 * (14 + len(reply.signature))))

    def single_finalize(self, net: Network) -> None:
        for nonce, entry in self.tests.items():
            if entry.get("initiator") and not entry["done"]:
                entry["done"] = True
                net.note(self.id, "verdict", check="trail-single", result=TrailVerdict.TIMEOUT.value)
        self.tests = {}
