"""Attack behaviours.

Each attack is a mixin placed in front of the scheme's node class, so an
attacker runs the honest protocol except where the attack says otherwise.
Attackers only ever use their own radio links (the fabric enforces this).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .bloom import BloomFilter
from .dodag import DIO, UP
from .simnet import Message, Network
from .trail import merge_arrays

ATTACK_KINDS = ("version_attack", "rank_spoof", "rank_replay", "chain_forgery", "trail_manipulation", "k_chain_replay")
TRAIL_VARIANTS = ("drop_children", "misplace", "rearrange", "withhold_own", "merge_on_behalf", "delete_nonces")


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    nodes: tuple
    at_version: int = 1
    delta: int | None = None  # rank_spoof / merge_on_behalf; None claims rank 0
    variant: str | None = None  # trail_manipulation
    jam: bool = True  # chain_forgery
    k: int | None = None  # k_chain_replay

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackConfigError(f"unknown attack kind {self.kind!r}")
        if not self.nodes:
            raise AttackConfigError("an attack needs at least one node")
        if self.kind == "trail_manipulation" and self.variant not in TRAIL_VARIANTS:
            raise AttackConfigError(f"unknown manipulation variant {self.variant!r}")
        if self.kind == "trail_manipulation" and self.variant == "merge_on_behalf" and len(self.nodes) != 2:
            raise AttackConfigError("merge_on_behalf needs [merger, colluder]")
        if self.kind == "k_chain_replay" and len(self.nodes) != (self.k or len(self.nodes)):
            raise AttackConfigError("k_chain_replay needs exactly k nodes")

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        allowed = {"kind", "nodes", "at_version", "delta", "variant", "jam", "k"}
        extra = set(d) - allowed
        if extra:
            raise AttackConfigError(f"unknown attack keys: {sorted(extra)}")
        if "kind" not in d or "nodes" not in d:
            raise AttackConfigError("attack needs 'kind' and 'nodes'")
        return cls(**{**d, "nodes": tuple(int(v) for v in d["nodes"])})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "nodes": list(self.nodes), "at_version": self.at_version, "delta": self.delta,
                "variant": self.variant, "jam": self.jam, "k": self.k}

    @property
    def label(self) -> str:
        if self.kind == "trail_manipulation":
            return self.variant
        if self.kind == "k_chain_replay":
            return f"k_chain_replay(k={len(self.nodes)})"
        return self.kind


class Attacker:
    malicious = True
    spec: AttackSpec
    depths: dict  # true hop distances, known to colluders in advance

    def active(self) -> bool:
        return self.state.version >= self.spec.at_version

    def on_data(self, net, src, d):
        # no validation; just keep traffic moving (or not)
        if self.is_root or d.dst == self.id:
            return
        self.forward(net, d)

    def on_legit(self, net, src, legit):
        pass

    def on_legit_route(self, net, src, lr):
        pass

    def prepare(self, net: Network, version: int) -> None:
        pass

    def trigger(self, net: Network, version: int) -> None:
        pass


class FrozenRankMixin(Attacker):
    """Keep the first parent of each version; the true rank never drifts with our own lies."""

    def reset_for_version(self, version):
        super().reset_for_version(version)
        self._frozen = False

    def reselect(self, net):
        if getattr(self, "_frozen", False):
            return
        super().reselect(net)
        if self.state.joined:
            self._frozen = True

    def lowest_element(self):
        elems = getattr(self, "elems", None)
        if not elems:
            return None
        n = min(elems, key=lambda v: (self.neighbor_ranks.get(v, 1 << 30), v))
        return elems[n]

    def advertised_element(self):
        rank = self.advertised_rank()
        e = self.element_for(rank)
        return e if e is not None else self.lowest_element()


class RankSpoofMixin(FrozenRankMixin):
    def claimed_rank(self) -> int:
        true = self.state.rank
        if self.spec.kind == "k_chain_replay":
            return self.depths[self.spec.nodes[0]]
        delta = self.spec.delta
        if self.spec.kind == "trail_manipulation":  # merge_on_behalf colluder
            delta = 1 if delta is None else delta
        return 0 if delta is None else max(0, true - delta)

    def advertised_rank(self):
        if self.state.rank is None or not self.active():
            return self.state.rank
        return self.claimed_rank()

    def advertised_element(self):
        # only material for the true rank; the parent's element verbatim would be a replay
        return self.own_element()

    def scribe_rank(self):
        return self.advertised_rank()

    def forward_check(self, t):
        return True

    def reply_check(self, reply):
        return True


class RankReplayMixin(FrozenRankMixin):
    def advertised_rank(self):
        if self.state.rank is None or not self.active():
            return self.state.rank
        return max(0, self.state.rank - 1)

    def datagram_rank(self, direction):
        if direction == UP or not self.active():
            return self.state.rank
        return self.advertised_rank()

    def forward_check(self, t):
        return True

    def reply_check(self, reply):
        return True


class VersionAttackMixin(Attacker):
    def trigger(self, net, version):
        if version != self.spec.at_version or not self.state.joined:
            return
        self._storm = True
        store = getattr(self, "store", None)
        if store is None:
            msg = Message("DIO", DIO(self.state.version + 1, self.state.rank), 48,
                          {"v": self.state.version + 1, "rank": self.state.rank})
        else:
            # no valid chain element for the next version exists; send a random one
            dio = self.make_dio()
            fake = replace(dio.payload, vn=store.last_vn + 1, V=self.suite.random_element(net.rng))
            msg = Message("DIO", fake, dio.bits, {"v": fake.vn, "rank": fake.sender_rank})
        net.note(self.id, "attack", attack="version_attack", v=msg.info["v"])
        net.multicast(self.id, msg)

    def on_dio(self, net, src, dio):
        if getattr(self, "_storm", False):
            return  # stay the source of the bogus version
        super().on_dio(net, src, dio)


class ChainForgeryMixin(FrozenRankMixin):
    """Withhold updates i and i+1 from the victims, then replay update i with a
    forged anchor and claim rank 0 in update i+1."""

    def _versions(self):
        vn0 = self.store.vn0
        return vn0 + self.spec.at_version, vn0 + self.spec.at_version + 1

    def prepare(self, net, version):
        if version != self.spec.at_version:
            return
        me = self.depths[self.id]
        self.victims = {v for v in self.state.neighbors if self.depths.get(v, -1) > me}
        self._held = False
        self._fired = False
        net.note(self.id, "attack", attack="chain_forgery", victims=sorted(self.victims), jam=self.spec.jam)
        if not self.spec.jam:
            return
        vi, vj = self._versions()
        ids = set(self.spec.nodes)

        def jam(src, dst, msg, victims=frozenset(self.victims)):
            return (msg.kind == "DIO" and dst in victims and src not in ids
                    and getattr(msg.payload, "vn", None) in (vi, vj))

        net.jammers.append(jam)

    def _window(self) -> bool:
        if not hasattr(self, "victims") or not self.spec.jam or self.store is None:
            return False
        return self.store.last_vn in self._versions()

    def advertise(self, net):
        if self._window():
            return  # keep the victims in the dark
        super().advertise(net)

    def accept_new_version_hook(self, net, src, dio):
        prev = None
        if hasattr(self, "victims") and not self._fired and dio.vn == self._versions()[1]:
            prev = (self.store.last_vn, self.store.last_V, self.own_element(), self.state.rank,
                    getattr(self.store, "anchors", {}).get(self.store.last_vn + 1))
        ok = super().accept_new_version_hook(net, src, dio)
        if ok and prev is not None:
            self._fired = True
            self._prev = prev
            net.set_timer(self.id, 1, "forge", None)
        return ok

    def timer_forge(self, net, _):
        s = self.suite
        vn_i, V_i, elem_i, rank_i, cipher_i = self._prev
        V_next = self.store.last_V
        x = s.random_element(net.rng)
        forged_tail = s.hash_forward(x, self.l + 1)
        forged_elem = s.h(x)  # R'_{i+1,0}
        dio = self.make_dio()
        if hasattr(dio.payload, "mac_next"):
            upd_i = replace(dio.payload, vn=vn_i, V=V_i, mac_next=s.mac(V_next, forged_tail),
                            rank_elem=elem_i, sender_rank=rank_i)
            upd_next = replace(dio.payload, mac_next=bytes(s.width), rank_elem=forged_elem, sender_rank=0)
        else:
            # the genuine key for version i+1 is all we can pass on; the next one is a guess
            upd_i = replace(dio.payload, vn=vn_i, V=V_i, cipher=cipher_i, rank_elem=elem_i, sender_rank=rank_i)
            upd_next = replace(dio.payload, cipher=s.random_element(net.rng), rank_elem=forged_elem, sender_rank=0)
        net.note(self.id, "attack", attack="chain_forgery", step="forge")
        net.multicast(self.id, Message("DIO", upd_i, dio.bits, {"v": vn_i, "rank": rank_i}))
        self._forged_next = upd_next
        net.set_timer(self.id, 1, "forge_next", None)

    def timer_forge_next(self, net, _):
        upd = self._forged_next
        net.multicast(self.id, Message("DIO", upd, self.make_dio().bits, {"v": upd.vn, "rank": 0}))


class TrailManipulationMixin(Attacker):
    def own_nonce(self):
        if self.spec.variant == "withhold_own" and self.active():
            return None
        return super().own_nonce()

    def build_array(self, nonces, arrays, got):
        array = super().build_array(nonces, arrays, got)
        if not self.active():
            return array
        v = self.spec.variant
        if v == "drop_children":
            return []
        if v == "misplace":
            moved = array[0] + (array[1] if len(array) > 1 else ())
            return [()] + [moved] + array[2:]
        if v == "rearrange":
            return list(reversed(array))
        if v == "delete_nonces" and len(array) > 1:
            array[1] = tuple(BloomFilter(f.m, f.k_hash) for f in array[1])
            return array
        if v == "merge_on_behalf":
            colluder = self.spec.nodes[1]
            delta = 1 if self.spec.delta is None else self.spec.delta
            t_true = self.depths[colluder] + 1 - self.depths[self.id]
            t_bel = t_true - delta
            if 1 <= t_bel and t_true <= len(array):
                array[t_bel - 1] = array[t_bel - 1] + tuple(f.copy() for f in array[t_true - 1])
            return array
        return array


class ChainColluderMixin(Attacker):
    """Upper end of a replay chain: fold colluders' arrays in at the same level."""

    def build_array(self, nonces, arrays, got):
        if not self.active():
            return super().build_array(nonces, arrays, got)
        mates = set(self.spec.nodes)
        honest = {c: a for c, a in arrays.items() if c not in mates}
        honest_nonces = [got[c][0] for c in honest if got[c][0] is not None]
        array = merge_arrays(honest_nonces, honest, self.m, self.k_hash)
        for c in sorted(set(arrays) & mates):
            for t, e in enumerate(arrays[c]):
                if t < len(array):
                    array[t] = array[t] + tuple(e)
                else:
                    array.append(tuple(e))
        return array

    def forward_check(self, t):
        return True

    def reply_check(self, reply):
        return True


def attacker_class(base, spec: AttackSpec, node_id: int):
    """Compose the behaviour of ``node_id`` under ``spec`` on top of ``base``."""
    mixins = []
    if spec.kind == "rank_spoof":
        mixins.append(RankSpoofMixin)
    elif spec.kind == "rank_replay":
        mixins.append(RankReplayMixin)
    elif spec.kind == "version_attack":
        mixins.append(VersionAttackMixin)
    elif spec.kind == "chain_forgery":
        if not hasattr(base, "make_store"):
            raise AttackConfigError("chain_forgery needs a hash-chain scheme")
        mixins.append(ChainForgeryMixin)
    elif spec.kind == "trail_manipulation":
        if spec.variant == "merge_on_behalf" and node_id == spec.nodes[1]:
            mixins.append(RankSpoofMixin)
        else:
            mixins.append(TrailManipulationMixin)
    elif spec.kind == "k_chain_replay":
        idx = spec.nodes.index(node_id)
        if idx < len(spec.nodes) - 1:
            mixins.append(ChainColluderMixin)
        if idx > 0:
            mixins.append(RankSpoofMixin)
    name = "".join(m.__name__.replace("Mixin", "") for m in mixins) + base.__name__
    return type(name, (*mixins, base), {"spec": spec})
