"""Server-side social graph bookkeeping and shortest-path oracles.

The capability service never sees a whole OSN graph.  It accumulates the
edges that enrolled members attest through their friend lists, tracks
which nodes are enrolled members versus server-created ersatz stand-ins,
and answers hop-layer queries against that partial view.  Plain BFS
helpers double as the ground-truth oracle for tests and the coverage
simulator.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping

MEMBER = "member"
ERSATZ = "ersatz"

Adjacency = Mapping[str, set[str]]


@dataclass
class FriendLayers:
    """Hop layers around a center node: ``layers[0]`` is the 1-hop set."""

    center: str
    layers: list[set[str]] = field(default_factory=list)

    def layer(self, k: int) -> set[str]:
        """The set of nodes exactly ``k`` hops out (k is 1-based)."""
        return self.layers[k - 1]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def total(self) -> int:
        return sum(len(layer) for layer in self.layers)


class SocialGraph:
    """The partial social graph the server can attest.

    Every edge is added by :meth:`record_member`, so every edge has at
    least one member endpoint and every ersatz node has at least one
    member neighbor.  Edges are never removed: a member re-registering
    with a different friend list unions the new edges with the ones
    already observed.

    Reads may run concurrently; mutation is serialized internally.
    """

    def __init__(self):
        self._kind: dict[str, str] = {}
        self._adj: dict[str, set[str]] = {}
        self._write_lock = threading.Lock()

    def record_member(self, uid: str, friend_list: Iterable[str]) -> None:
        """Enroll ``uid`` as a member and attest its complete friend list.

        Friends not yet in the graph become ersatz nodes.  A node that
        was ersatz keeps its accumulated edges and simply flips kind when
        it enrolls itself later.
        """
        with self._write_lock:
            self._kind[uid] = MEMBER
            self._adj.setdefault(uid, set())
            for friend in friend_list:
                if friend == uid:
                    continue
                if friend not in self._kind:
                    self._kind[friend] = ERSATZ
                self._adj.setdefault(friend, set())
                self._adj[uid].add(friend)
                self._adj[friend].add(uid)

    def kind_of(self, uid: str) -> str | None:
        return self._kind.get(uid)

    def is_member(self, uid: str) -> bool:
        return self._kind.get(uid) == MEMBER

    def neighbors(self, uid: str) -> set[str]:
        return set(self._adj.get(uid, ()))

    def node_kinds(self) -> dict[str, str]:
        return dict(self._kind)

    def members(self) -> list[str]:
        return sorted(u for u, k in self._kind.items() if k == MEMBER)

    def edges(self) -> list[tuple[str, str]]:
        """All known edges as sorted (low, high) pairs."""
        seen = set()
        for u, nbrs in self._adj.items():
            for v in nbrs:
                seen.add((u, v) if u < v else (v, u))
        return sorted(seen)

    def __len__(self) -> int:
        return len(self._kind)

    def layer_friend_sets(self, uid: str, n: int, member_only: bool = False) -> FriendLayers:
        """Breadth-first hop layers around a member, out to depth ``n``.

        Each node lands in the layer of its first discovery, the center is
        in no layer, and layers are pairwise disjoint.  With
        ``member_only`` the walk is restricted to the member-induced
        subgraph.
        """
        if n < 1:
            raise ValueError("layer depth must be at least 1")
        if not self.is_member(uid):
            raise ValueError(f"hop layers are only defined for members, not {uid!r}")
        seen = {uid}
        frontier = {uid}
        layers: list[set[str]] = []
        for _ in range(n):
            nxt = set()
            for node in frontier:
                for nbr in self._adj.get(node, ()):
                    if nbr in seen:
                        continue
                    if member_only and self._kind.get(nbr) != MEMBER:
                        continue
                    nxt.add(nbr)
            seen |= nxt
            layers.append(nxt)
            frontier = nxt
        return FriendLayers(center=uid, layers=layers)


def true_shortest_distance(adjacency: Adjacency, u: str, v: str) -> int | None:
    """Plain BFS shortest-path length on a complete edge set.

    Returns None when ``v`` is unreachable from ``u``.
    """
    if u == v:
        return 0
    seen = {u}
    frontier = [u]
    dist = 0
    while frontier:
        dist += 1
        nxt = []
        for node in frontier:
            for nbr in adjacency.get(node, ()):
                if nbr in seen:
                    continue
                if nbr == v:
                    return dist
                seen.add(nbr)
                nxt.append(nbr)
        frontier = nxt
    return None


def hop_layers(adjacency: Adjacency, start: str, max_depth: int) -> dict[str, int]:
    """Distances from ``start`` for every node within ``max_depth`` hops."""
    dists = {start: 0}
    frontier = [start]
    depth = 0
    while frontier and depth < max_depth:
        depth += 1
        nxt = []
        for node in frontier:
            for nbr in adjacency.get(node, ()):
                if nbr not in dists:
                    dists[nbr] = depth
                    nxt.append(nbr)
        frontier = nxt
    return dists


def load_edge_list(path) -> dict[str, set[str]]:
    """Load a ground-truth graph from an edge-list text file.

    One ``id id`` pair per line; ``#`` starts a comment; blank lines are
    skipped.  The graph is undirected and self loops are ignored.
    """
    adjacency: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two ids, got {raw.strip()!r}")
            u, v = parts
            adjacency.setdefault(u, set())
            adjacency.setdefault(v, set())
            if u != v:
                adjacency[u].add(v)
                adjacency[v].add(u)
    return adjacency


def load_membership(path) -> list[str]:
    """Load a membership list: one id per line, ``#`` comments allowed."""
    members: list[str] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            uid = raw.split("#", 1)[0].strip()
            if uid and uid not in seen:
                seen.add(uid)
                members.append(uid)
    return members
