"""Deterministic discrete-event message fabric.

Integer ticks, unit link latency, events totally ordered by ``(time, seq)``.
All randomness (loss draws, nonces, attacker choices) comes from the run's
single seeded generator ``Network.rng``.
"""
from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .topology import Topology


class Nonquiescent(RuntimeError):
    """max_events reached before the event queue drained."""


class NotAdjacent(ValueError):
    pass


@dataclass
class Message:
    kind: str
    payload: Any = None
    bits: int = 0
    info: dict = field(default_factory=dict)

    @property
    def nbytes(self) -> float:
        return self.bits / 8


JamPredicate = Callable[[int, int, Message], bool]


class Network:
    def __init__(self, topology: Topology, seed: int = 0, loss: float = 0.0, latency: int = 1):
        if not 0.0 <= loss <= 1.0:
            raise ValueError("loss must lie in [0, 1]")
        self.topology = topology
        self.rng = np.random.default_rng(seed)
        self.loss = loss
        self.latency = latency
        self.jammers: list[JamPredicate] = []
        self.nodes: dict[int, Any] = {}
        self.now = 0
        self.log: list[dict] = []
        self._seq = 0
        self._tx = 0
        self._queue: list = []

    # -- wiring ----------------------------------------------------------------

    def attach(self, node_id: int, handler) -> None:
        self.nodes[node_id] = handler

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.topology.adj[v]

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _record(self, **entry) -> None:
        entry = {"t": self.now, "seq": self._next_seq(), **entry}
        self.log.append(entry)

    def note(self, node: int, kind: str, **info) -> None:
        """Log a local (non-transmitted) event such as a verdict."""
        self._record(ev="note", **{"from": node, "to": None}, kind=kind, bytes=0, info=info)

    # -- transmission ------------------------------------------------------------

    def _dropped(self, src: int, dst: int, msg: Message) -> bool:
        if any(j(src, dst, msg) for j in self.jammers):
            return True
        if self.loss <= 0.0:
            return False
        return bool(self.rng.random() < self.loss)

    def _transmit(self, src: int, dsts, msg: Message, to) -> int:
        self._tx += 1
        tx = self._tx
        self._record(ev="send", **{"from": src, "to": to}, kind=msg.kind, bytes=msg.nbytes, tx=tx, info=msg.info)
        for dst in dsts:
            if self._dropped(src, dst, msg):
                continue
            heapq.heappush(self._queue, (self.now + self.latency, self._next_seq(), "recv", src, dst, msg, tx))
        return tx

    def send(self, src: int, dst: int, msg: Message) -> int:
        if not self.topology.adjacent(src, dst):
            raise NotAdjacent(f"{src} -> {dst} is not a link")
        return self._transmit(src, (dst,), msg, dst)

    def multicast(self, src: int, msg: Message) -> int:
        """Link-local multicast: one transmission, one delivery per surviving neighbour."""
        return self._transmit(src, self.topology.adj[src], msg, None)

    def set_timer(self, node: int, delay: int, tag: str, data: Any = None) -> None:
        heapq.heappush(self._queue, (self.now + delay, self._next_seq(), "timer", node, node, (tag, data), None))

    # -- loop ------------------------------------------------------------------

    @property
    def pending(self) -> int:
        return len(self._queue)

    def run_until_quiescent(self, max_events: int = 1_000_000) -> list[dict]:
        processed = 0
        while self._queue:
            if processed >= max_events:
                raise Nonquiescent(f"{max_events} events processed, {len(self._queue)} still queued")
            t, _, ev, src, dst, payload, tx = heapq.heappop(self._queue)
            self.now = t
            processed += 1
            handler = self.nodes.get(dst)
            if ev == "recv":
                self._record(ev="recv", **{"from": src, "to": dst}, kind=payload.kind, bytes=payload.nbytes, tx=tx)
                if handler is not None:
                    handler.receive(self, src, payload)
            else:
                tag, data = payload
                self._record(ev="timer", **{"from": dst, "to": dst}, kind=tag, bytes=0)
                if handler is not None:
                    handler.on_timer(self, tag, data)
        return self.log


def log_to_jsonl(log: list[dict]) -> str:
    return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in log)


def log_digest(log: list[dict]) -> str:
    return hashlib.sha256(log_to_jsonl(log).encode()).hexdigest()


def read_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
