"""Coverage simulation: how discovery degrades with partial enrollment.

The simulator samples a member set of a given fraction, samples member
pairs whose true shortest distance equals each target length, and
measures the fraction of pairs the system would discover, with and
without ersatz records.  ``discoverable`` is a closed-form model of a
full protocol run; ``model_protocol_equivalence`` checks it against real
stores and clients on small instances.

The original evaluation graphs are not redistributable, so the module
ships synthetic generators (forest-fire style, preferential attachment,
and plain G(n, p)) plus the edge-list loader for substituting any
dataset.  Absolute coverage numbers are therefore dataset-specific;
trends and the exact length-2 guarantee are the checkable surface.
"""

from __future__ import annotations

import csv
import logging
import random
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from sopal.client import DiscoveryClient, LocalServerHandle, run_discovery_pair
from sopal.graph import SocialGraph, hop_layers, load_edge_list
from sopal.server import MockOsnConnector
from sopal.store import CapabilityStore

logger = logging.getLogger(__name__)

Adjacency = Mapping[str, set[str]]


@dataclass
class SimConfig:
    """Parameters for one coverage run."""

    graph_source: str | None = None
    member_fractions: Sequence[float] = (0.2, 0.4, 0.6, 0.8)
    path_lengths: Sequence[int] = (2, 3, 4)
    pairs_per_cell: int = 200
    repetitions: int = 10
    d_max: int = 1
    ersatz_modes: Sequence[bool] = (True, False)
    seed: int = 0
    min_pairs: int = 10

    def __post_init__(self):
        if any(not 0.0 < f <= 1.0 for f in self.member_fractions):
            raise ValueError("member fractions must lie in (0, 1]")
        limit = 2 * self.d_max + 2
        if any(not 1 <= n <= limit for n in self.path_lengths):
            raise ValueError(f"path lengths must lie in [1, {limit}] for d_max={self.d_max}")
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")


@dataclass(frozen=True)
class CoverageCell:
    fraction: float
    length: int
    ersatz: bool
    mean_coverage: float
    std: float
    pairs_sampled: int
    seed: int


@dataclass
class CoverageReport:
    cells: list[CoverageCell] = field(default_factory=list)

    def cell(self, fraction: float, length: int, ersatz: bool) -> CoverageCell | None:
        for c in self.cells:
            if (c.fraction, c.length, c.ersatz) == (fraction, length, ersatz):
                return c
        return None

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(
            ["fraction", "length", "ersatz", "mean_coverage", "std", "pairs_sampled", "seed"]
        )
        for c in self.cells:
            writer.writerow(
                [
                    f"{c.fraction:.2f}",
                    c.length,
                    "on" if c.ersatz else "off",
                    f"{c.mean_coverage:.6f}",
                    f"{c.std:.6f}",
                    c.pairs_sampled,
                    c.seed,
                ]
            )

    def to_csv(self) -> str:
        import io

        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def known_adjacency(ground: Adjacency, members: set[str], ersatz_on: bool) -> dict[str, set[str]]:
    """The edge set the server can attest for a member set.

    With ersatz records every edge touching a member counts; without
    them only the member-induced subgraph carries capabilities.
    """
    known: dict[str, set[str]] = {}
    for u, nbrs in ground.items():
        for v in nbrs:
            if u >= v:
                continue
            if ersatz_on:
                keep = u in members or v in members
            else:
                keep = u in members and v in members
            if keep:
                known.setdefault(u, set()).add(v)
                known.setdefault(v, set()).add(u)
    return known


def _min_via_common(
    layers_a: Mapping[str, int], layers_b: Mapping[str, int], a: str, b: str
) -> int | None:
    small, large = (
        (layers_a, layers_b) if len(layers_a) <= len(layers_b) else (layers_b, layers_a)
    )
    best = None
    for node, da in small.items():
        if node == a or node == b:
            continue
        db = large.get(node)
        if db is None:
            continue
        total = da + db
        if best is None or total < best:
            best = total
    return best


def discoverable(
    ground: Adjacency,
    members: set[str],
    ersatz_on: bool,
    d_max: int,
    a: str,
    b: str,
) -> tuple[bool, int | None]:
    """Closed-form model of one discovery run between members ``a`` and ``b``.

    Found when they are adjacent in the ground graph, or when some other
    capability-holding node sits within ``d_max + 1`` known hops of both;
    the distance is the minimum layer sum over such nodes.
    """
    if a == b:
        raise ValueError("discovery needs two distinct users")
    if a not in members or b not in members:
        raise ValueError("both endpoints must be members")
    if b in ground.get(a, ()):
        return True, 1
    known = known_adjacency(ground, members, ersatz_on)
    layers_a = hop_layers(known, a, d_max + 1)
    layers_b = hop_layers(known, b, d_max + 1)
    best = _min_via_common(layers_a, layers_b, a, b)
    if best is None:
        return False, None
    return True, best


def run_coverage(config: SimConfig, adjacency: Adjacency | None = None) -> CoverageReport:
    """Run the full sampling procedure of :class:`SimConfig`.

    Deterministic for a fixed seed: repetitions draw their member sets
    and pair samples from child generators keyed off the master seed.
    Cells with fewer than ``min_pairs`` qualifying pairs are skipped with
    a warning.
    """
    if adjacency is None:
        if config.graph_source is None:
            raise ValueError("config needs a graph source when no adjacency is given")
        adjacency = load_graph_source(config.graph_source, config.seed)
    nodes = sorted(adjacency)
    max_len = max(config.path_lengths)
    per_cell: dict[tuple[float, int, bool], list[float]] = {}
    pairs_seen: dict[tuple[float, int, bool], int] = {}

    for rep in range(config.repetitions):
        for fraction in config.member_fractions:
            rng = random.Random(f"{config.seed}/cov/{rep}/{fraction}")
            size = max(2, round(fraction * len(nodes)))
            members = set(rng.sample(nodes, min(size, len(nodes))))
            member_list = sorted(members)
            ground_dist = {m: hop_layers(adjacency, m, max_len) for m in member_list}
            buckets: dict[int, list[tuple[str, str]]] = {n: [] for n in config.path_lengths}
            for i, u in enumerate(member_list):
                du = ground_dist[u]
                for v in member_list[i + 1 :]:
                    d = du.get(v)
                    if d in buckets:
                        buckets[d].append((u, v))
            samples: dict[int, list[tuple[str, str]]] = {}
            for n in config.path_lengths:
                pool = buckets[n]
                if len(pool) < config.min_pairs:
                    logger.warning(
                        "skipping cell (fraction=%.2f, length=%d, rep=%d): "
                        "only %d qualifying pairs",
                        fraction,
                        n,
                        rep,
                        len(pool),
                    )
                    continue
                if len(pool) > config.pairs_per_cell:
                    samples[n] = rng.sample(pool, config.pairs_per_cell)
                else:
                    samples[n] = pool
            for ersatz_on in config.ersatz_modes:
                known = known_adjacency(adjacency, members, ersatz_on)
                layer_cache: dict[str, dict[str, int]] = {}

                def layers_of(x: str) -> dict[str, int]:
                    got = layer_cache.get(x)
                    if got is None:
                        got = hop_layers(known, x, config.d_max + 1)
                        layer_cache[x] = got
                    return got

                for n, pairs in samples.items():
                    found = 0
                    for u, v in pairs:
                        if v in adjacency.get(u, ()):
                            found += 1
                            continue
                        if _min_via_common(layers_of(u), layers_of(v), u, v) is not None:
                            found += 1
                    key = (fraction, n, ersatz_on)
                    per_cell.setdefault(key, []).append(found / len(pairs))
                    pairs_seen[key] = pairs_seen.get(key, 0) + len(pairs)

    report = CoverageReport()
    for fraction in config.member_fractions:
        for n in config.path_lengths:
            for ersatz_on in config.ersatz_modes:
                key = (fraction, n, ersatz_on)
                values = per_cell.get(key)
                if not values:
                    continue
                report.cells.append(
                    CoverageCell(
                        fraction=fraction,
                        length=n,
                        ersatz=ersatz_on,
                        mean_coverage=statistics.fmean(values),
                        std=statistics.pstdev(values),
                        pairs_sampled=pairs_seen[key],
                        seed=config.seed,
                    )
                )
    return report


def model_protocol_equivalence(
    ground: Adjacency,
    members: Iterable[str],
    d_max: int,
    *,
    ersatz_on: bool = True,
    max_pairs: int | None = None,
    seed: int = 0,
) -> int:
    """Compare :func:`discoverable` with full protocol runs.

    Stands up a real store and real clients for every member, runs
    discovery over every (or a sampled subset of) member pair, and
    returns the number of pairs where (found, dist) disagrees at either
    endpoint.  Expected to be zero.
    """
    members = sorted(members)
    connector = MockOsnConnector(ground)
    store = CapabilityStore(SocialGraph(), connector, ersatz_enabled=ersatz_on)
    handle = LocalServerHandle(store, connector)
    clients: dict[str, DiscoveryClient] = {}
    for uid in members:
        client = DiscoveryClient(uid, handle, d_max=d_max)
        client.renew_capability()
        clients[uid] = client
    for client in clients.values():
        client.update_capabilities()

    pairs = [(u, v) for i, u in enumerate(members) for v in members[i + 1 :]]
    if max_pairs is not None and len(pairs) > max_pairs:
        pairs = random.Random(f"{seed}/equiv").sample(pairs, max_pairs)

    mismatches = 0
    member_set = set(members)
    for a, b in pairs:
        result_a, result_b = run_discovery_pair(clients[a], clients[b])
        clients[a].end_session(b)
        clients[b].end_session(a)
        expected = discoverable(ground, member_set, ersatz_on, d_max, a, b)
        got_a = (result_a.dist is not None, result_a.dist)
        got_b = (result_b.dist is not None, result_b.dist)
        if got_a != expected or got_b != expected:
            mismatches += 1
    return mismatches


# -- synthetic graphs --------------------------------------------------------


def gnp_graph(n: int, p: float, seed) -> dict[str, set[str]]:
    """Erdos-Renyi G(n, p) with string node ids."""
    rng = random.Random(f"{seed}/gnp")
    nodes = [str(i) for i in range(n)]
    adj: dict[str, set[str]] = {u: set() for u in nodes}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                adj[nodes[i]].add(nodes[j])
                adj[nodes[j]].add(nodes[i])
    return adj


def preferential_attachment_graph(n: int, m: int, seed) -> dict[str, set[str]]:
    """Growing graph where each new node attaches to ``m`` degree-weighted targets."""
    if n < m + 1:
        raise ValueError("need more nodes than attachments per step")
    rng = random.Random(f"{seed}/pa")
    nodes = [str(i) for i in range(n)]
    adj: dict[str, set[str]] = {u: set() for u in nodes}
    repeated: list[str] = []
    for i in range(m + 1):
        for j in range(i + 1, m + 1):
            adj[nodes[i]].add(nodes[j])
            adj[nodes[j]].add(nodes[i])
            repeated += [nodes[i], nodes[j]]
    for i in range(m + 1, n):
        u = nodes[i]
        targets: set[str] = set()
        while len(targets) < m:
            targets.add(rng.choice(repeated))
        for v in targets:
            adj[u].add(v)
            adj[v].add(u)
            repeated += [u, v]
    return adj


def forest_fire_graph(n: int, forward_prob: float = 0.35, seed=0) -> dict[str, set[str]]:
    """Forest-fire style growth: each new node links to a burned neighborhood."""
    rng = random.Random(f"{seed}/ff")
    nodes = [str(i) for i in range(n)]
    adj: dict[str, set[str]] = {u: set() for u in nodes}
    for i in range(1, n):
        u = nodes[i]
        ambassador = nodes[rng.randrange(i)]
        burned = {ambassador}
        queue = [ambassador]
        while queue:
            w = queue.pop()
            spread = 0
            while rng.random() < forward_prob:
                spread += 1
            fresh = [x for x in adj[w] if x not in burned and x != u]
            rng.shuffle(fresh)
            for x in fresh[:spread]:
                burned.add(x)
                queue.append(x)
        for w in burned:
            adj[u].add(w)
            adj[w].add(u)
    return adj


def load_graph_source(source: str, seed=0) -> dict[str, set[str]]:
    """Resolve a graph source: ``pa:N:M``, ``ff:N:P``, ``gnp:N:P``, or a file path."""
    parts = source.split(":")
    if parts[0] == "pa" and len(parts) == 3:
        return preferential_attachment_graph(int(parts[1]), int(parts[2]), seed)
    if parts[0] == "ff" and len(parts) == 3:
        return forest_fire_graph(int(parts[1]), float(parts[2]), seed)
    if parts[0] == "gnp" and len(parts) == 3:
        return gnp_graph(int(parts[1]), float(parts[2]), seed)
    return load_edge_list(source)
