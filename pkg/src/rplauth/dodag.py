"""Minimal RPL engine: DODAG formation (DIO/DAO), rank announcements (DIS),
rank-based data-path validation with the announced-rank extension, and local repair.

Ranks use unit increments, so an honest node's rank equals its hop distance to
the root.  Storing mode only; a DAO registers the sender as a child of its
preferred parent (one hop, no route aggregation).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .simnet import Message, Network
from .topology import Topology

UP = "up"
DOWN = "down"

DIO_BITS = 8 * (4 + 2)  # version + rank
DAO_BITS = 8 * 2
DIS_BITS = 8 * 4
ANN_BITS = 8 * 2
DATA_BITS = 8 * 16
HOP_LIMIT = 64


class UnknownNeighbor(ValueError):
    pass


class Validation(str, enum.Enum):
    CONSISTENT = "Consistent"
    ANNOUNCEMENT_MISMATCH = "AnnouncementMismatch"
    CHILD_RANK_VIOLATION = "ChildRankViolation"
    RANK_DIRECTION = "RankDirection"

    @property
    def ok(self) -> bool:
        return self is Validation.CONSISTENT


@dataclass
class NodeState:
    id: int
    rank: int | None = None
    parent_set: list = field(default_factory=list)
    preferred_parent: int | None = None
    children: set = field(default_factory=set)
    announced_ranks: dict = field(default_factory=dict)
    version: int = 0
    neighbors: set = field(default_factory=set)
    scheme_state: dict = field(default_factory=dict)

    @property
    def joined(self) -> bool:
        return self.rank is not None


@dataclass(frozen=True)
class Datagram:
    src: int
    dst: int
    direction: str
    sender_rank: int
    hop: int  # previous hop, rewritten when forwarding
    tag: str = ""
    hop_limit: int = HOP_LIMIT


@dataclass(frozen=True)
class DIO:
    version: int
    rank: int | None


@dataclass(frozen=True)
class DAO:
    no_path: bool = False


@dataclass(frozen=True)
class DIS:
    target: int


@dataclass(frozen=True)
class Announcement:
    rank: int | None
    version: int


def validate_datagram(receiver: NodeState, d: Datagram, extended: bool = True) -> Validation:
    """Rank-based data-path validation.

    With ``extended`` the receiver also compares the datagram's rank against the
    sender's multicast announcement, and treats an upward datagram from a
    registered child announcing a rank not below its own as a violation.
    """
    if d.hop not in receiver.neighbors:
        raise UnknownNeighbor(f"{d.hop} is not a neighbour of {receiver.id}")
    announced = receiver.announced_ranks.get(d.hop)
    if extended and announced is not None:
        if d.direction == UP and d.hop in receiver.children and announced <= receiver.rank:
            return Validation.CHILD_RANK_VIOLATION
        if announced != d.sender_rank:
            return Validation.ANNOUNCEMENT_MISMATCH
    if d.direction == UP:
        ok = d.sender_rank > receiver.rank
    else:
        ok = d.sender_rank < receiver.rank
    return Validation.CONSISTENT if ok else Validation.RANK_DIRECTION


@dataclass
class NodeConfig:
    max_rank: int = 64
    extended_validation: bool = False
    challenge_response: bool = False
    announce_timeout: int = 8
    recheck_delay: int = 8


class RplNode:
    """Honest RPL behaviour.  Scheme nodes override the ``*_hook`` methods."""

    malicious = False

    def __init__(self, node_id: int, neighbors, is_root: bool = False, config: NodeConfig | None = None):
        self.state = NodeState(id=node_id, neighbors=set(neighbors))
        self.is_root = is_root
        self.config = config or NodeConfig()
        self.neighbor_ranks: dict[int, int] = {}
        self.excluded: set[int] = set()
        self._announced = False
        self._waiting: dict[int, list[Datagram]] = {}
        self._repairing: set[int] = set()
        if is_root:
            self.state.rank = 0

    @property
    def id(self) -> int:
        return self.state.id

    # -- dispatch ----------------------------------------------------------------

    def receive(self, net: Network, src: int, msg: Message) -> None:
        if src in self.excluded:
            return
        handler = getattr(self, "on_" + msg.kind.lower(), None)
        if handler is not None:
            handler(net, src, msg.payload)

    def on_timer(self, net: Network, tag: str, data) -> None:
        getattr(self, "timer_" + tag)(net, data)

    # -- advertisement (overridden by schemes / attackers) -----------------------

    def advertised_rank(self) -> int | None:
        return self.state.rank

    def make_dio(self) -> Message:
        return Message("DIO", DIO(self.state.version, self.advertised_rank()), DIO_BITS,
                       {"v": self.state.version, "rank": self.advertised_rank()})

    def advertise(self, net: Network) -> None:
        net.multicast(self.id, self.make_dio())

    # -- version handling ----------------------------------------------------------

    def start_version(self, net: Network, version: int) -> None:
        """Root only: begin a new DODAG version (global repair)."""
        assert self.is_root
        self.reset_for_version(version)
        self.state.rank = 0
        self.advertise(net)

    def reset_for_version(self, version: int) -> None:
        s = self.state
        s.version = version
        s.rank = 0 if self.is_root else None
        s.parent_set = []
        s.preferred_parent = None
        s.children = set()
        s.announced_ranks = {}
        self.neighbor_ranks = {}
        self._announced = False
        self._waiting = {}
        self._repairing = set()

    def accept_new_version_hook(self, net: Network, src: int, dio) -> bool:
        return True

    def accept_same_version_hook(self, net: Network, src: int, dio) -> bool:
        return True

    def accept_rank_hook(self, net: Network, src: int, dio) -> bool:
        return True

    # -- DIO / DAO ---------------------------------------------------------------

    def on_dio(self, net: Network, src: int, dio) -> None:
        s = self.state
        if dio.version > s.version:
            if self.is_root:
                net.note(self.id, "ignore", reason="VersionFromNonRoot", src=src, v=dio.version)
                return
            if not self.accept_new_version_hook(net, src, dio):
                return
            old = s.version
            self.reset_for_version(dio.version)
            net.note(self.id, "repair", scope="global", old=old, v=dio.version, src=src)
        elif dio.version < s.version:
            return
        elif not self.accept_same_version_hook(net, src, dio):
            return
        if dio.rank is None:
            self.neighbor_ranks.pop(src, None)
        else:
            if not self.accept_rank_hook(net, src, dio):
                return
            self.neighbor_ranks[src] = dio.rank
        self.reselect(net)

    def candidate_parents(self) -> list[tuple[int, int]]:
        return sorted((r, n) for n, r in self.neighbor_ranks.items()
                      if n not in self.excluded and r is not None)

    def reselect(self, net: Network) -> None:
        """Recompute rank and parents from the recorded neighbour ranks."""
        if self.is_root:
            return
        s = self.state
        old_rank, old_parent = s.rank, s.preferred_parent
        cands = self.candidate_parents()
        if cands and cands[0][0] + 1 <= self.config.max_rank:
            best = cands[0][0]
            s.rank = best + 1
            s.parent_set = [n for r, n in cands if r < s.rank]
            s.preferred_parent = s.parent_set[0]
        else:
            s.rank, s.parent_set, s.preferred_parent = None, [], None
        self.on_parent_change_hook(net, old_parent)
        if s.preferred_parent != old_parent:
            if old_parent is not None and old_parent not in self.excluded:
                net.send(self.id, old_parent, Message("DAO", DAO(no_path=True), DAO_BITS))
            if s.preferred_parent is not None:
                net.send(self.id, s.preferred_parent, Message("DAO", DAO(), DAO_BITS))
        if s.rank != old_rank or self.rank_material_changed(old_parent):
            net.note(self.id, "rank", rank=s.rank, parent=s.preferred_parent, v=s.version)
            self.advertise(net)

    def on_parent_change_hook(self, net: Network, old_parent) -> None:
        pass

    def rank_material_changed(self, old_parent) -> bool:
        return False

    def on_dao(self, net: Network, src: int, dao: DAO) -> None:
        if dao.no_path:
            self.state.children.discard(src)
        else:
            self.state.children.add(src)

    # -- rank announcements -------------------------------------------------------

    def request_rank_announcement(self, net: Network, target: int) -> None:
        if target not in self.state.neighbors:
            raise UnknownNeighbor(f"{target} is not a neighbour of {self.id}")
        net.multicast(self.id, Message("DIS", DIS(target), DIS_BITS, {"target": target}))
        net.set_timer(self.id, self.config.announce_timeout, "announce_timeout", target)

    def announce_rank(self) -> int | None:
        return self.advertised_rank()

    def on_dis(self, net: Network, src: int, dis: DIS) -> None:
        if dis.target != self.id or self._announced:
            return
        # irrevocable for the rest of this version
        self._announced = True
        rank = self.announce_rank()
        net.multicast(self.id, Message("ANN", Announcement(rank, self.state.version), ANN_BITS, {"rank": rank}))

    def on_ann(self, net: Network, src: int, ann: Announcement) -> None:
        if ann.version != self.state.version or src not in self.state.neighbors:
            return
        self.state.announced_ranks.setdefault(src, ann.rank)
        for d in self._waiting.pop(src, []):
            self._send_datagram(net, src, d)

    def timer_announce_timeout(self, net: Network, target: int) -> None:
        if target in self._waiting and target not in self.state.announced_ranks:
            self._waiting.pop(target)
            net.note(self.id, "verdict", check="announce", subject=target, result="NoResponse")

    # -- data path -----------------------------------------------------------------

    def datagram_rank(self, direction: str) -> int | None:
        return self.state.rank

    def originate(self, net: Network, dst: int | None = None, tag: str = "data") -> None:
        s = self.state
        if self.is_root or not s.joined:
            return
        d = Datagram(self.id, 0 if dst is None else dst, UP, s.rank, self.id, tag)
        self.forward(net, d)

    def forward(self, net: Network, d: Datagram) -> None:
        nxt = self.state.preferred_parent
        if nxt is None:
            net.note(self.id, "drop", reason="NoRoute", src=d.src)
            return
        if self.config.extended_validation and nxt not in self.state.announced_ranks:
            first = nxt not in self._waiting
            self._waiting.setdefault(nxt, []).append(d)
            if first:
                self.request_rank_announcement(net, nxt)
            return
        self._send_datagram(net, nxt, d)

    def _send_datagram(self, net: Network, nxt: int, d: Datagram) -> None:
        if d.hop != self.id:
            if d.hop_limit <= 1:
                net.note(self.id, "drop", reason="HopLimit", src=d.src)
                return
            d = replace(d, hop_limit=d.hop_limit - 1)
        d = replace(d, sender_rank=self.datagram_rank(d.direction), hop=self.id)
        net.send(self.id, nxt, Message("DATA", d, DATA_BITS))

    def on_data(self, net: Network, src: int, d: Datagram) -> None:
        if not self.state.joined or d.sender_rank is None:
            net.note(self.id, "drop", reason="NoRoute", src=d.src)
            return
        verdict = validate_datagram(self.state, d, self.config.extended_validation)
        if not verdict.ok:
            net.note(self.id, "verdict", check="datapath", subject=src, result=verdict.value)
            self.handle_inconsistency(net, src, verdict)
            return
        if self.is_root or d.dst == self.id:
            net.note(self.id, "delivered", src=d.src)
            return
        self.forward(net, d)

    # -- error handling ------------------------------------------------------------

    def handle_inconsistency(self, net: Network, src: int, verdict: Validation) -> None:
        if src in self._repairing:
            return
        self._repairing.add(src)
        self.local_repair(net)
        net.set_timer(self.id, self.config.recheck_delay, "recheck", src)

    def local_repair(self, net: Network) -> None:
        """Re-multicast the own rank; equal-rank neighbours stop treating us as a parent."""
        net.note(self.id, "repair", scope="local", rank=self.state.rank)
        self.advertise(net)

    def still_inconsistent(self, suspect: int) -> bool:
        s = self.state
        ann = s.announced_ranks.get(suspect)
        return suspect in s.children and ann is not None and s.rank is not None and ann <= s.rank

    def timer_recheck(self, net: Network, suspect: int) -> None:
        self._repairing.discard(suspect)
        if self.still_inconsistent(suspect):
            net.note(self.id, "persistent", subject=suspect)
            self.on_persistent_inconsistency(net, suspect)

    def on_persistent_inconsistency(self, net: Network, suspect: int) -> None:
        pass

    # -- isolation -------------------------------------------------------------------

    def isolate(self, net: Network, node: int) -> None:
        """Cut the connection to ``node`` and drop it from the neighbour set."""
        if node in self.excluded:
            return
        s = self.state
        self.excluded.add(node)
        s.neighbors.discard(node)
        s.children.discard(node)
        s.announced_ranks.pop(node, None)
        self.neighbor_ranks.pop(node, None)
        net.note(self.id, "isolate", subject=node)
        if not self.is_root:
            self.reselect(net)

    def snapshot(self) -> dict:
        s = self.state
        return {"rank": s.rank, "parent": s.preferred_parent, "v": s.version,
                "children": sorted(s.children), "parents": list(s.parent_set)}


def attach_nodes(net: Network, factory) -> dict[int, RplNode]:
    nodes = {}
    topo = net.topology
    for v in topo.nodes:
        node = factory(v, topo.adj[v], v == topo.root)
        net.attach(v, node)
        nodes[v] = node
    return nodes


def build_dodag(topology: Topology, root: int | None = None, seed: int = 0,
                config: NodeConfig | None = None) -> dict[int, NodeState]:
    """Run DIO/DAO formation to quiescence and return every node's state.

    Nodes that cannot reach the root keep ``rank is None`` and carry
    ``scheme_state["flag"] == "UnreachableNode"``.
    """
    if root is not None and root != topology.root:
        topology = Topology(topology.nodes, topology.adj, root)
    net = Network(topology, seed=seed)
    nodes = attach_nodes(net, lambda v, nb, is_root: RplNode(v, nb, is_root, config))
    nodes[topology.root].start_version(net, 1)
    net.run_until_quiescent()
    out = {}
    for v, node in nodes.items():
        if not node.state.joined:
            node.state.scheme_state["flag"] = "UnreachableNode"
        out[v] = node.state
    return out
