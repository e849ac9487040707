"""Version number and rank authentication with hash chains and per-version MAC anchors.

The root publishes one signed init message.  Every later DODAG update is
authenticated by hashing: the version element chains back to the signed
``V_0``, and a rank element ``R_{i,j}`` is checked by hashing it up to
``R_{i,l}`` and comparing the MAC keyed with ``V_i`` against the anchor that
arrived one version earlier.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .chains import ChainSet
from .dodag import NodeConfig, RplNode
from .primitives import PrimitiveSuite
from .simnet import Message, Network


class Verdict(str, enum.Enum):
    ACCEPT = "Accept"
    STALE_VERSION = "StaleVersion"
    CHAIN_MISMATCH = "ChainMismatch"
    RANK_MAC_MISMATCH = "RankMacMismatch"
    DECRYPT_ANCHOR = "DecryptAnchor"
    SIGNATURE_INVALID = "SignatureInvalid"
    RANK_OUT_OF_RANGE = "RankOutOfRange"

    @property
    def ok(self) -> bool:
        return self is Verdict.ACCEPT


class SignatureInvalid(ValueError):
    pass


class RankRegression(ValueError):
    pass


def _u32(x: int) -> bytes:
    return int(x).to_bytes(4, "big")


@dataclass(frozen=True)
class VeraInitMsg:
    V0: bytes
    vn0: int
    mac1: bytes
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        return b"VERA-INIT" + self.V0 + _u32(self.vn0) + self.mac1


@dataclass(frozen=True)
class VeraUpdateMsg:
    vn: int
    V: bytes
    mac_next: bytes
    rank_elem: bytes
    sender_rank: int | None

    # field names shared with the plain DIO
    @property
    def version(self) -> int:
        return self.vn

    @property
    def rank(self) -> int | None:
        return self.sender_rank


def update_bits(width: int) -> int:
    return 8 * (4 + 3 * width + 2)


@dataclass
class VeraStore:
    suite: PrimitiveSuite
    l: int
    vn0: int
    V0: bytes
    last_vn: int
    last_V: bytes
    # version -> MAC anchor for that version's rank chain tail
    macs: dict = field(default_factory=dict)

    @classmethod
    def from_init(cls, suite: PrimitiveSuite, l: int, init: VeraInitMsg, verifier) -> "VeraStore":
        if not verifier.verify(init.signed_bytes(), init.signature):
            raise SignatureInvalid("init signature does not verify")
        return cls(suite, l, init.vn0, init.V0, init.vn0, init.V0, {init.vn0 + 1: init.mac1})

    def V_of(self, vn: int) -> bytes | None:
        return self.last_V if vn == self.last_vn else None


def vera_verify_version(store: VeraStore, msg) -> Verdict:
    """Check a newer version element against the chain; updates ``store`` on accept."""
    if msg.vn <= store.last_vn:
        return Verdict.STALE_VERSION
    h = store.suite
    if msg.vn == store.last_vn + 1:
        ok = h.h(msg.V) == store.last_V
    else:
        # missed updates: go all the way back to the signed V_0
        ok = h.hash_forward(msg.V, msg.vn - store.vn0) == store.V0
    if not ok:
        return Verdict.CHAIN_MISMATCH
    store.last_vn, store.last_V = msg.vn, msg.V
    return Verdict.ACCEPT


def vera_verify_parent_rank(store: VeraStore, j: int, elem: bytes, version: int) -> Verdict:
    """``MAC_{V_i}(h^{l-j}(elem))`` must equal the anchor delivered with version i-1."""
    if j is None or not 0 <= j <= store.l:
        return Verdict.RANK_OUT_OF_RANGE
    anchor = store.macs.get(version)
    key = store.V_of(version)
    if anchor is None or key is None:
        return Verdict.RANK_MAC_MISMATCH
    s = store.suite
    if s.mac(key, s.hash_forward(elem, store.l - j)) != anchor:
        return Verdict.RANK_MAC_MISMATCH
    return Verdict.ACCEPT


def vera_derive_child_element(suite: PrimitiveSuite, parent_elem: bytes, j: int, tau: int) -> bytes:
    if tau < j:
        raise RankRegression(f"cannot derive rank {tau} from rank {j}")
    return suite.hash_forward(parent_elem, tau - j)


class VeraAuthority:
    """The root's secrets: chains and signing key."""

    def __init__(self, chains: ChainSet, signer, vn0: int = 0):
        self.chains = chains
        self.signer = signer
        self.vn0 = vn0

    @property
    def suite(self) -> PrimitiveSuite:
        return self.chains.suite

    def mac_anchor(self, i: int) -> bytes:
        """``MAC_{V_i}(R_{i,l})``; zero bytes past the last version."""
        c = self.chains
        if i > c.n:
            return bytes(c.suite.width)
        return c.suite.mac(c.V(i), c.tail(i))

    def init_message(self) -> VeraInitMsg:
        m = VeraInitMsg(self.chains.V(0), self.vn0, self.mac_anchor(1))
        return VeraInitMsg(m.V0, m.vn0, m.mac1, self.signer.sign(m.signed_bytes()))

    def update(self, i: int) -> VeraUpdateMsg:
        c = self.chains
        return VeraUpdateMsg(self.vn0 + i, c.V(i), self.mac_anchor(i + 1), c.rank_element(i, 0), 0)


class VeraNode(RplNode):
    """RPL node that authenticates versions and ranks with VeRA."""

    init_kind = "INIT"

    def __init__(self, node_id, neighbors, is_root=False, config: NodeConfig | None = None, *,
                 suite: PrimitiveSuite, l: int, verifier, authority: VeraAuthority | None = None):
        super().__init__(node_id, neighbors, is_root, config)
        self.suite = suite
        self.l = l
        self.verifier = verifier
        self.authority = authority
        self.store = None
        self.elems: dict[int, bytes] = {}

    # -- init --------------------------------------------------------------------

    def make_store(self, init):
        return VeraStore.from_init(self.suite, self.l, init, self.verifier)

    def bootstrap(self, net: Network) -> None:
        """Root only: flood the signed init message."""
        init = self.authority_init()
        self.store = self.make_store(init)
        net.multicast(self.id, Message(self.init_kind, init, 8 * (len(init.signed_bytes()) + len(init.signature))))

    def authority_init(self):
        return self.authority.init_message()

    def on_init(self, net: Network, src: int, init) -> None:
        if self.store is not None:
            return
        try:
            self.store = self.make_store(init)
        except SignatureInvalid:
            net.note(self.id, "verdict", check="init", subject=src, result=Verdict.SIGNATURE_INVALID.value)
            return
        net.multicast(self.id, Message(self.init_kind, init, 8 * (len(init.signed_bytes()) + len(init.signature))))

    # -- versions ------------------------------------------------------------------

    def start_version(self, net: Network, version: int) -> None:
        s = self.store
        s.last_vn, s.last_V = self.authority.vn0 + version, self.authority.chains.V(version)
        self.reset_for_version(s.last_vn)
        self.state.rank = 0
        self.advertise(net)

    def reset_for_version(self, version: int) -> None:
        super().reset_for_version(version)
        self.elems = {}

    def reject(self, net: Network, src: int, verdict: Verdict, dio) -> bool:
        net.note(self.id, "verdict", check="dio", subject=src, result=verdict.value, v=dio.vn, rank=dio.sender_rank)
        return False

    def accept_new_version_hook(self, net, src, dio) -> bool:
        if self.store is None:
            return False
        r = vera_verify_version(self.store, dio)
        return True if r.ok else self.reject(net, src, r, dio)

    def accept_same_version_hook(self, net, src, dio) -> bool:
        if self.store is None or self.is_root:
            return False
        if dio.V != self.store.last_V:
            return self.reject(net, src, Verdict.CHAIN_MISMATCH, dio)
        return True

    def verify_rank(self, dio) -> Verdict:
        return vera_verify_parent_rank(self.store, dio.sender_rank, dio.rank_elem, dio.vn)

    def accept_rank_hook(self, net, src, dio) -> bool:
        r = self.verify_rank(dio)
        if not r.ok:
            return self.reject(net, src, r, dio)
        self.remember_anchor(dio)
        self.elems[src] = dio.rank_elem
        return True

    def remember_anchor(self, dio) -> None:
        # the first verified update of a version fixes the next anchor
        self.store.macs.setdefault(dio.vn + 1, dio.mac_next)

    # -- advertisement ---------------------------------------------------------------

    def element_for(self, rank: int | None) -> bytes | None:
        """Best element this node can produce for ``rank`` from what it verified."""
        if rank is None:
            return None
        if self.is_root:
            return self.authority.chains.rank_element(self.store.last_vn - self.authority.vn0, rank)
        best = None
        for n, e in self.elems.items():
            r = self.neighbor_ranks.get(n)
            if r is not None and r <= rank and (best is None or r > best[0]):
                best = (r, e)
        if best is None:
            return None
        return self.suite.hash_forward(best[1], rank - best[0])

    def own_element(self) -> bytes | None:
        return self.element_for(self.state.rank)

    def advertised_element(self) -> bytes | None:
        return self.own_element()

    def next_anchor(self) -> bytes:
        if self.is_root:
            return self.authority.mac_anchor(self.store.last_vn - self.authority.vn0 + 1)
        return self.store.macs.get(self.store.last_vn + 1, bytes(self.suite.width))

    def make_dio(self) -> Message:
        s = self.store
        elem = self.advertised_element()
        rank = self.advertised_rank()
        if elem is None:
            elem, rank = bytes(self.suite.width), None
        upd = VeraUpdateMsg(s.last_vn, s.last_V, self.next_anchor(), elem, rank)
        return Message("DIO", upd, update_bits(self.suite.width), {"v": s.last_vn, "rank": rank})
