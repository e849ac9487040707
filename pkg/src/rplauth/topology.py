"""Link graphs: explicit JSON lists, balanced k-ary trees and random unit-disk graphs."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    nodes: tuple[int, ...]
    adj: dict  # node -> tuple of neighbours, ascending
    root: int = 0

    @classmethod
    def from_links(cls, nodes, links, root: int = 0) -> "Topology":
        nodes = tuple(sorted(int(v) for v in nodes))
        known = set(nodes)
        if root not in known:
            raise TopologyError(f"root {root} is not a node")
        nb = {v: set() for v in nodes}
        for a, b in links:
            a, b = int(a), int(b)
            if a not in known or b not in known:
                raise TopologyError(f"link ({a}, {b}) references an unknown node")
            if a == b:
                raise TopologyError(f"self-loop at {a}")
            nb[a].add(b)
            nb[b].add(a)
        return cls(nodes, {v: tuple(sorted(s)) for v, s in nb.items()}, root)

    @property
    def links(self) -> list[tuple[int, int]]:
        return [(a, b) for a in self.nodes for b in self.adj[a] if a < b]

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adj[v]

    def adjacent(self, a: int, b: int) -> bool:
        return b in self.adj.get(a, ())

    def hop_distances(self) -> dict[int, int]:
        dist = {self.root: 0}
        q = deque([self.root])
        while q:
            v = q.popleft()
            for w in self.adj[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    q.append(w)
        return dist

    def is_connected(self) -> bool:
        return len(self.hop_distances()) == len(self.nodes)

    def to_json(self) -> dict:
        return {"nodes": list(self.nodes), "links": [list(e) for e in self.links], "root": self.root}


def kary_tree(k: int, h: int) -> Topology:
    """Balanced k-ary tree of height h, nodes numbered breadth first from the root 0."""
    if k < 1 or h < 0:
        raise TopologyError("need k >= 1 and h >= 0")
    nodes = [0]
    links = []
    frontier = [0]
    nxt = 1
    for _ in range(h):
        new = []
        for parent in frontier:
            for _ in range(k):
                nodes.append(nxt)
                links.append((parent, nxt))
                new.append(nxt)
                nxt += 1
        frontier = new
    return Topology.from_links(nodes, links)


def unit_disk(n: int, radius: float, seed: int) -> Topology:
    """n points uniform in the unit square, linked when closer than ``radius``; node 0 is the root."""
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    links = [(a, b) for a in range(n) for b in range(a + 1, n) if d[a, b] <= radius]
    return Topology.from_links(range(n), links)


def connected_disk(n: int, radius: float, seed: int, attempts: int = 1000) -> Topology:
    """First connected unit-disk graph from seeds ``seed, seed+1000, ...``."""
    for i in range(attempts):
        t = unit_disk(n, radius, seed + 1000 * i)
        if t.is_connected():
            return t
    raise TopologyError(f"no connected disk graph for n={n}, radius={radius}")


def from_spec(spec: dict) -> Topology:
    """Build from the scenario JSON form (explicit lists or a generator)."""
    if "kary" in spec:
        g = spec["kary"]
        return kary_tree(int(g["k"]), int(g["h"]))
    if "disk" in spec:
        g = spec["disk"]
        return unit_disk(int(g["n"]), float(g["radius"]), int(g.get("seed", 0)))
    if "nodes" in spec:
        return Topology.from_links(spec["nodes"], spec.get("links", []), int(spec.get("root", 0)))
    raise TopologyError(f"unrecognised topology spec keys: {sorted(spec)}")
