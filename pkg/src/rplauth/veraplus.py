"""Encryption-chain rank authentication, rank challenges, adjudication at the root
and the hop-limited legitimation flood that isolates an adjudged node.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

from .dodag import NodeConfig
from .primitives import PrimitiveSuite, pack_challenge
from .simnet import Message, Network
from .topology import Topology
from .vera import (
    SignatureInvalid,
    VeraAuthority,
    VeraNode,
    Verdict,
    _u32,
    update_bits,
)

ADJUDICATION_WINDOW = 32
CHALLENGE_TIMEOUT = 8
LEGIT_HOP_LIMIT = 2


# -- encryption-chain rank verification ---------------------------------------

@dataclass(frozen=True)
class VeraPPInitMsg:
    V0: bytes
    vn0: int
    n: int
    c1: bytes
    cn: bytes
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        return b"VERAPP-INIT" + self.V0 + _u32(self.vn0) + _u32(self.n) + self.c1 + self.cn


@dataclass(frozen=True)
class VeraPPUpdateMsg:
    vn: int
    V: bytes
    cipher: bytes  # c_{i+1}: the key that opens this version's anchor
    rank_elem: bytes
    sender_rank: int | None

    @property
    def version(self) -> int:
        return self.vn

    @property
    def rank(self) -> int | None:
        return self.sender_rank


@dataclass
class VeraPPStore:
    suite: PrimitiveSuite
    l: int
    vn0: int
    V0: bytes
    n: int
    cn: bytes
    last_vn: int
    last_V: bytes
    # version -> c_version, the anchor that the next key decrypts
    anchors: dict = field(default_factory=dict)

    @classmethod
    def from_init(cls, suite: PrimitiveSuite, l: int, init: VeraPPInitMsg, verifier) -> "VeraPPStore":
        if not verifier.verify(init.signed_bytes(), init.signature):
            raise SignatureInvalid("init signature does not verify")
        return cls(suite, l, init.vn0, init.V0, init.n, init.cn, init.vn0, init.V0, {init.vn0 + 1: init.c1})


def verapp_verify_parent_rank(store: VeraPPStore, j: int, elem: bytes, cipher: bytes, version: int) -> Verdict:
    """``h^{l-j}(elem)`` must equal ``dec_cipher(c_i)``; at the last version, the signed ``c_n``.

    On accept the delivered cipher becomes the anchor of the next version.
    """
    if j is None or not 0 <= j <= store.l:
        return Verdict.RANK_OUT_OF_RANGE
    if version != store.last_vn:
        return Verdict.DECRYPT_ANCHOR
    s = store.suite
    if version - store.vn0 >= store.n:
        target = store.cn
    else:
        anchor = store.anchors.get(version)
        if anchor is None:
            return Verdict.DECRYPT_ANCHOR
        target = s.dec(cipher, anchor)
    if s.hash_forward(elem, store.l - j) != target:
        return Verdict.DECRYPT_ANCHOR
    if version - store.vn0 < store.n:
        store.anchors.setdefault(version + 1, cipher)
    return Verdict.ACCEPT


class VeraPPAuthority(VeraAuthority):
    def init_message(self) -> VeraPPInitMsg:
        c = self.chains
        m = VeraPPInitMsg(c.V(0), self.vn0, c.n, c.c(1), c.c(c.n))
        return replace(m, signature=self.signer.sign(m.signed_bytes()))

    def cipher(self, i: int) -> bytes:
        c = self.chains
        return c.c(i + 1) if i < c.n else bytes(c.suite.width)

    def update(self, i: int) -> VeraPPUpdateMsg:
        c = self.chains
        return VeraPPUpdateMsg(self.vn0 + i, c.V(i), self.cipher(i), c.rank_element(i, 0), 0)


class VeraPPNode(VeraNode):
    def make_store(self, init):
        return VeraPPStore.from_init(self.suite, self.l, init, self.verifier)

    def verify_rank(self, dio) -> Verdict:
        return verapp_verify_parent_rank(self.store, dio.sender_rank, dio.rank_elem, dio.cipher, dio.vn)

    def remember_anchor(self, dio) -> None:
        pass  # committed inside verification

    def next_anchor(self) -> bytes:
        if self.is_root:
            return self.authority.cipher(self.store.last_vn - self.authority.vn0)
        return self.store.anchors.get(self.store.last_vn + 1, bytes(self.suite.width))

    def make_dio(self) -> Message:
        s = self.store
        elem = self.advertised_element()
        rank = self.advertised_rank()
        if elem is None:
            elem, rank = bytes(self.suite.width), None
        upd = VeraPPUpdateMsg(s.last_vn, s.last_V, self.next_anchor(), elem, rank)
        return Message("DIO", upd, update_bits(self.suite.width), {"v": s.last_vn, "rank": rank})


# -- challenge / response -------------------------------------------------------

@dataclass(frozen=True)
class Challenge:
    challenger: int
    target: int
    nonce: int
    rank: int  # the rank the target announced


@dataclass(frozen=True)
class ChallengeResponse:
    target: int
    nonce: int
    cipher: bytes


@dataclass(frozen=True)
class ValidationRequest:
    challenger: int
    subject: int
    nonce: int
    rank: int
    cipher: bytes


@dataclass(frozen=True)
class SolvedReport:
    subject: int
    challenger: int
    validator: int


@dataclass(frozen=True)
class FailureNotice:
    challenger: int
    challenger_rank: int
    suspect: int
    suspect_rank: int
    path: tuple = ()


def answer_challenge(suite: PrimitiveSuite, key: bytes, target: int, nonce: int) -> bytes:
    """``enc_{R_{i,j-1}}(ID || nonce)``."""
    return suite.enc(key, pack_challenge(suite, target, nonce))


def check_response(suite: PrimitiveSuite, key: bytes, target: int, nonce: int, cipher: bytes) -> bool:
    return suite.dec(key, cipher) == pack_challenge(suite, target, nonce)


@dataclass(frozen=True)
class Adjudication:
    outcome: str  # "malicious" or "inconclusive"
    node: int | None = None


def adjudicate(notices, reports) -> Adjudication:
    """Root decision for one accused node once the window has closed.

    A failure notice without a matching solved report condemns the suspect; a
    solved report despite the accusation condemns the challenger.
    """
    notices, reports = list(notices), list(reports)
    if notices and reports:
        return Adjudication("malicious", notices[0].challenger)
    if notices:
        return Adjudication("malicious", notices[0].suspect)
    return Adjudication("inconclusive")


# -- legitimation and scoped flood ------------------------------------------------

@dataclass(frozen=True)
class LegitimationMsg:
    r_c: int
    r_s: int
    id_s: int
    version: int
    signature: bytes = b""
    hop_limit: int = LEGIT_HOP_LIMIT  # mutable in flight, not signed

    def signed_bytes(self) -> bytes:
        return b"LEGIT" + self.r_c.to_bytes(2, "big") + self.r_s.to_bytes(2, "big") + _u32(self.id_s) + _u32(self.version)


@dataclass(frozen=True)
class LegitRoute:
    legit: LegitimationMsg
    route: tuple  # remaining hops; the last one starts the flood


def legit_bits(legit: LegitimationMsg) -> int:
    return 8 * (len(legit.signed_bytes()) + len(legit.signature) + 1)


def next_hop_limit(topology: Topology, node: int, anchor: int, hop_limit: int) -> int:
    """Forwarders adjacent to the anchor keep the limit; everyone else spends one."""
    return hop_limit if topology.adjacent(node, anchor) else hop_limit - 1


def scoped_flood(topology: Topology, start: int, anchor: int, hop_limit: int = LEGIT_HOP_LIMIT) -> set[int]:
    """Nodes reached by the legitimation flood that ``start`` multicasts with ``hop_limit``.

    A node re-multicasts whenever it learns a strictly larger remaining limit, so
    the reached set does not depend on delivery order.  The anchor never forwards.
    """
    best = {start: hop_limit}
    reached = set()
    q = deque([start])
    while q:
        u = q.popleft()
        h = best[u]
        for w in topology.adj[u]:
            reached.add(w)
            if w == anchor or w == start:
                continue
            h2 = next_hop_limit(topology, w, anchor, h)
            if h2 > 0 and h2 > best.get(w, 0):
                best[w] = h2
                q.append(w)
    reached.discard(anchor)
    return reached


class ChallengeResponseMixin:
    """Challenge a persistently inconsistent child; the root adjudicates and isolates."""

    def _cr_init(self):
        if not hasattr(self, "_challenges"):
            self._challenges = {}
            self._cases = {}
            self._legit_best = {}

    def on_persistent_inconsistency(self, net: Network, suspect: int) -> None:
        self._cr_init()
        if not self.config.challenge_response or suspect in self._challenges:
            return
        j = self.state.rank
        if self.state.announced_ranks.get(suspect) != j or suspect not in self.state.neighbors or not j:
            return
        key = self.element_for(j - 1)
        if key is None:
            return
        nonce = int(net.rng.integers(0, 2**63))
        self._challenges[suspect] = (nonce, key, j)
        ch = Challenge(self.id, suspect, nonce, j)
        net.send(self.id, suspect, Message("CHALLENGE", ch, 8 * (4 + 8 + 2), {"target": suspect}))
        net.set_timer(self.id, CHALLENGE_TIMEOUT, "challenge_timeout", suspect)

    def on_challenge(self, net: Network, src: int, ch: Challenge) -> None:
        if ch.target != self.id:
            return
        key = self.element_for(ch.rank - 1) if ch.rank >= 1 else None
        if key is None:
            # no rank-(j-1) element available: the best guess is random
            key = self.suite.random_element(net.rng)
        cipher = answer_challenge(self.suite, key, self.id, ch.nonce)
        net.send(self.id, src, Message("RESPONSE", ChallengeResponse(self.id, ch.nonce, cipher), 8 * (4 + self.suite.width)))
        others = sorted(n for n, r in self.neighbor_ranks.items()
                        if r == ch.rank - 1 and n != src and n not in self.excluded)
        if others:
            req = ValidationRequest(src, self.id, ch.nonce, ch.rank, cipher)
            net.send(self.id, others[0], Message("VALIDATE", req, 8 * (8 + 8 + 2 + self.suite.width)))

    def on_response(self, net: Network, src: int, resp: ChallengeResponse) -> None:
        self._cr_init()
        pending = self._challenges.pop(src, None)
        if pending is None:
            return
        nonce, key, j = pending
        ok = check_response(self.suite, key, src, nonce, resp.cipher)
        net.note(self.id, "verdict", check="challenge", subject=src, result="Pass" if ok else "Fail")
        if not ok:
            self._notify_failure(net, src, j)

    def timer_challenge_timeout(self, net: Network, suspect: int) -> None:
        self._cr_init()
        pending = self._challenges.pop(suspect, None)
        if pending is not None:
            net.note(self.id, "verdict", check="challenge", subject=suspect, result="Fail", why="timeout")
            self._notify_failure(net, suspect, pending[2])

    def _notify_failure(self, net: Network, suspect: int, j: int) -> None:
        notice = FailureNotice(self.id, j, suspect, j, (self.id,))
        self._route_up(net, "NOTICE", notice, 8 * (4 + 2 + 4 + 2))

    def _route_up(self, net: Network, kind: str, payload, bits: int) -> None:
        nxt = self.state.preferred_parent
        if nxt is None:
            net.note(self.id, "drop", reason="NoRoute", kind=kind)
            return
        net.send(self.id, nxt, Message(kind, payload, bits))

    def on_validate(self, net: Network, src: int, req: ValidationRequest) -> None:
        key = self.element_for(req.rank - 1)
        if key is None or not check_response(self.suite, key, req.subject, req.nonce, req.cipher):
            return
        rep = SolvedReport(req.subject, req.challenger, self.id)
        if self.is_root:
            self.on_solved(net, self.id, rep)
        else:
            self._route_up(net, "SOLVED", rep, 8 * 12)

    def on_solved(self, net: Network, src: int, rep: SolvedReport) -> None:
        self._cr_init()
        if not self.is_root:
            self._route_up(net, "SOLVED", rep, 8 * 12)
            return
        self._case(net, rep.subject)["reports"].append(rep)

    def on_notice(self, net: Network, src: int, notice: FailureNotice) -> None:
        self._cr_init()
        notice = replace(notice, path=notice.path + (self.id,))
        if not self.is_root:
            self._route_up(net, "NOTICE", notice, 8 * (12 + 2 * len(notice.path)))
            return
        self._case(net, notice.suspect)["notices"].append(notice)

    def _case(self, net: Network, suspect: int) -> dict:
        if suspect not in self._cases:
            self._cases[suspect] = {"notices": [], "reports": []}
            net.set_timer(self.id, ADJUDICATION_WINDOW, "adjudicate", suspect)
        return self._cases[suspect]

    def timer_adjudicate(self, net: Network, suspect: int) -> None:
        case = self._cases.pop(suspect)
        verdict = adjudicate(case["notices"], case["reports"])
        net.note(self.id, "adjudication", subject=suspect, outcome=verdict.outcome, accused=verdict.node)
        if verdict.outcome != "malicious" or not case["notices"]:
            return
        notice = case["notices"][0]
        legit = LegitimationMsg(notice.challenger_rank, notice.suspect_rank, verdict.node, self.state.version)
        legit = replace(legit, signature=self.authority.signer.sign(legit.signed_bytes()))
        # back down the recorded path to the challenger's parent
        route = tuple(reversed(notice.path[1:-1]))
        if not route:
            self.start_flood(net, legit)
        else:
            net.send(self.id, route[0], Message("LEGIT_ROUTE", LegitRoute(legit, route), legit_bits(legit)))

    def on_legit_route(self, net: Network, src: int, lr: LegitRoute) -> None:
        if len(lr.route) <= 1:
            self.start_flood(net, lr.legit)
            return
        rest = lr.route[1:]
        net.send(self.id, rest[0], Message("LEGIT_ROUTE", LegitRoute(lr.legit, rest), legit_bits(lr.legit)))

    def _accept_legit(self, net: Network, src: int, legit: LegitimationMsg) -> bool:
        if not self.verifier.verify(legit.signed_bytes(), legit.signature):
            net.note(self.id, "verdict", check="legitimation", subject=src, result=Verdict.SIGNATURE_INVALID.value)
            return False
        if legit.id_s != self.id:
            self.isolate(net, legit.id_s)
        return True

    def start_flood(self, net: Network, legit: LegitimationMsg) -> None:
        self._cr_init()
        if not self._accept_legit(net, self.id, legit):
            return
        self._legit_best[(legit.id_s, legit.signature)] = legit.hop_limit
        net.multicast(self.id, Message("LEGIT", legit, legit_bits(legit), {"id_s": legit.id_s, "hop": legit.hop_limit}))

    def on_legit(self, net: Network, src: int, legit: LegitimationMsg) -> None:
        self._cr_init()
        if legit.id_s == self.id:
            return
        key = (legit.id_s, legit.signature)
        first = key not in self._legit_best
        if first:
            if not self._accept_legit(net, src, legit):
                return
            self._legit_best[key] = 0
        h = next_hop_limit(net.topology, self.id, legit.id_s, legit.hop_limit)
        if h > 0 and h > self._legit_best[key]:
            self._legit_best[key] = h
            fwd = replace(legit, hop_limit=h)
            net.multicast(self.id, Message("LEGIT", fwd, legit_bits(fwd), {"id_s": fwd.id_s, "hop": h}))


class CRVeraNode(ChallengeResponseMixin, VeraNode):
    pass


class CRVeraPPNode(ChallengeResponseMixin, VeraPPNode):
    pass


def node_class(scheme: str, challenge_response: bool):
    table = {
        ("vera", False): VeraNode,
        ("vera", True): CRVeraNode,
        ("vera++", False): VeraPPNode,
        ("vera++", True): CRVeraPPNode,
    }
    return table[(scheme, challenge_response)]


def make_config(challenge_response: bool, l: int) -> NodeConfig:
    return NodeConfig(max_rank=l, extended_validation=challenge_response, challenge_response=challenge_response)
