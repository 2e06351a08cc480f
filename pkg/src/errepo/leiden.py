"""Leiden community detection for weighted modularity.

Follows Traag, Waltman & van Eck's three phases: fast local moving of
nodes, randomized refinement restricted to well-connected subsets, and
aggregation of the refined partition (with the unrefined partition as
the starting point on the aggregate graph). Whole Leiden passes repeat
until the partition stops changing, and several independently seeded
runs are made with the best partition kept.

Quality is modularity with a resolution parameter ``gamma``::

    Q = 1/(2m) * sum_ij (A_ij - gamma * k_i * k_j / (2m)) * [c_i == c_j]
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .graph import Clustering, ProblemGraph
from .seeding import rng_for

_TOL = 1e-12


class _Level:
    """Adjacency of one aggregation level.

    ``adj[v]`` maps neighbours to weights (no self entries), ``loop[v]``
    is the internal weight folded into ``v`` and ``k[v]`` its node weight
    (sum of original weighted degrees).
    """

    __slots__ = ("adj", "loop", "k")

    def __init__(self, adj, loop, k):
        self.adj = adj
        self.loop = loop
        self.k = k

    @property
    def n(self):
        return len(self.adj)


def _base_level(graph: ProblemGraph):
    index = {node: i for i, node in enumerate(graph.nodes)}
    adj = [dict() for _ in graph.nodes]
    for (a, b), w in graph.edges.items():
        if w <= 0.0:
            continue
        i, j = index[a], index[b]
        adj[i][j] = adj[i].get(j, 0.0) + w
        adj[j][i] = adj[j].get(i, 0.0) + w
    k = [math.fsum(nb.values()) for nb in adj]
    return _Level(adj, [0.0] * len(adj), k)


def modularity(graph: ProblemGraph, assignment, resolution: float = 1.0) -> float:
    """Weighted modularity of ``assignment`` (node id -> label) on ``graph``."""
    level = _base_level(graph)
    two_m = math.fsum(level.k)
    if two_m <= 0.0:
        return 0.0
    labels = [assignment[node] for node in graph.nodes]
    internal: dict = {}
    degree: dict = {}
    for i, nb in enumerate(level.adj):
        c = labels[i]
        degree[c] = degree.get(c, 0.0) + level.k[i]
        for j, w in nb.items():
            if labels[j] == c:
                internal[c] = internal.get(c, 0.0) + w
    return math.fsum(
        internal.get(c, 0.0) / two_m - resolution * (degree[c] / two_m) ** 2 for c in degree
    )


def _move_nodes_fast(level: _Level, comm: list[int], gamma_2m: float, rng) -> bool:
    """Queue-based local moving; mutates ``comm``. Returns True if any node moved."""
    n = level.n
    tot = [0.0] * n
    size = [0] * n
    for v in range(n):
        tot[comm[v]] += level.k[v]
        size[comm[v]] += 1
    empty = [c for c in range(n) if size[c] == 0]
    order = rng.permutation(n).tolist()
    queue = deque(order)
    queued = [True] * n
    moved = False
    while queue:
        v = queue.popleft()
        queued[v] = False
        cur = comm[v]
        kv = level.k[v]
        links: dict[int, float] = {}
        for u, w in level.adj[v].items():
            cu = comm[u]
            links[cu] = links.get(cu, 0.0) + w
        tot[cur] -= kv
        size[cur] -= 1
        if size[cur] == 0:
            empty.append(cur)
        best = cur
        best_gain = links.get(cur, 0.0) - gamma_2m * kv * tot[cur]
        for c, w in links.items():
            if c == cur:
                continue
            gain = w - gamma_2m * kv * tot[c]
            if gain > best_gain + _TOL:
                best, best_gain = c, gain
        if best_gain < -_TOL:
            # an empty community (gain 0) beats every alternative
            best = cur if size[cur] == 0 else empty[-1]
        if size[best] == 0:
            empty.remove(best)
        tot[best] += kv
        size[best] += 1
        comm[v] = best
        if best != cur:
            moved = True
            for u in level.adj[v]:
                if comm[u] != best and not queued[u]:
                    queued[u] = True
                    queue.append(u)
    return moved


def _refine(level: _Level, comm: list[int], gamma_2m: float, rng, theta: float) -> list[int]:
    """Merge singletons within each community into well-connected sub-communities."""
    n = level.n
    refined = list(range(n))
    ref_tot = list(level.k)
    ref_size = [1] * n
    members: dict[int, list[int]] = {}
    for v in range(n):
        members.setdefault(comm[v], []).append(v)
    ext = [0.0] * n
    for c in sorted(members):
        nodes = members[c]
        total = math.fsum(level.k[v] for v in nodes)
        for v in nodes:
            ext[v] = math.fsum(w for u, w in level.adj[v].items() if comm[u] == c)
        eligible = [v for v in nodes
                    if ext[v] >= gamma_2m * level.k[v] * (total - level.k[v]) - _TOL]
        for idx in rng.permutation(len(eligible)).tolist():
            v = eligible[idx]
            if ref_size[refined[v]] != 1:
                continue
            kv = level.k[v]
            links: dict[int, float] = {}
            for u, w in level.adj[v].items():
                if comm[u] == c:
                    r = refined[u]
                    links[r] = links.get(r, 0.0) + w
            own = refined[v]
            cands = [own]
            gains = [0.0]
            for r, w in links.items():
                if r == own:
                    continue
                if ext[r] < gamma_2m * ref_tot[r] * (total - ref_tot[r]) - _TOL:
                    continue
                gain = w - gamma_2m * kv * ref_tot[r]
                if gain >= 0.0:
                    cands.append(r)
                    gains.append(gain)
            if len(cands) == 1:
                continue
            g = np.asarray(gains) / theta
            p = np.exp(g - g.max())
            choice = cands[int(rng.choice(len(cands), p=p / p.sum()))]
            if choice == own:
                continue
            ref_size[own] = 0
            ref_tot[own] = 0.0
            refined[v] = choice
            ref_tot[choice] += kv
            ref_size[choice] += 1
            ext[choice] = ext[choice] + ext[v] - 2.0 * links[choice]
    return refined


def _aggregate(level: _Level, refined: list[int]):
    """Collapse refined communities into nodes; returns (level, node -> aggregate index)."""
    labels = sorted(set(refined))
    index = {r: i for i, r in enumerate(labels)}
    m = len(labels)
    adj = [dict() for _ in range(m)]
    loop = [0.0] * m
    k = [0.0] * m
    for v in range(level.n):
        a = index[refined[v]]
        k[a] += level.k[v]
        loop[a] += level.loop[v]
        for u, w in level.adj[v].items():
            b = index[refined[u]]
            if a == b:
                if u > v:
                    loop[a] += w
            else:
                adj[a][b] = adj[a].get(b, 0.0) + w
    return _Level(adj, loop, k), [index[r] for r in refined]


def _leiden_pass(base: _Level, start: list[int], gamma: float, rng, theta: float) -> list[int]:
    two_m = math.fsum(base.k)
    gamma_2m = gamma / two_m
    level = base
    comm = list(start)
    node_of = list(range(base.n))  # original node -> node at current level
    while True:
        _move_nodes_fast(level, comm, gamma_2m, rng)
        if len(set(comm)) == level.n:
            break
        refined = _refine(level, comm, gamma_2m, rng, theta)
        if len(set(refined)) == level.n:
            # nothing to aggregate; collapse by the unrefined partition instead
            refined = comm
        new_level, agg_index = _aggregate(level, refined)
        new_comm = [0] * new_level.n
        for v in range(level.n):
            new_comm[agg_index[v]] = comm[v]
        # relabel communities densely for the next level
        dense = {c: i for i, c in enumerate(sorted(set(new_comm)))}
        comm = [dense[c] for c in new_comm]
        node_of = [agg_index[x] for x in node_of]
        level = new_level
    return [comm[node_of[v]] for v in range(base.n)]


def _components(base: _Level, labels: list[int]) -> list[list[int]]:
    """Split every community into its connected components."""
    groups: dict[int, list[int]] = {}
    for v, c in enumerate(labels):
        groups.setdefault(c, []).append(v)
    out = []
    for c in sorted(groups):
        inside = set(groups[c])
        seen = set()
        for s in groups[c]:
            if s in seen:
                continue
            comp, stack = [], [s]
            seen.add(s)
            while stack:
                v = stack.pop()
                comp.append(v)
                for u in base.adj[v]:
                    if u in inside and u not in seen:
                        seen.add(u)
                        stack.append(u)
            out.append(sorted(comp))
    return out


def _canonical(labels):
    first = {}
    return tuple(first.setdefault(c, len(first)) for c in labels)


def leiden_cluster(graph: ProblemGraph, resolution: float = 1.0, seed: int = 42,
                   max_iters: int = 50, restarts: int = 16, theta: float = 0.01) -> Clustering:
    """Partition ``graph`` with Leiden; deterministic for a given seed.

    Each of ``restarts`` independent runs (own RNG stream) repeats Leiden
    passes from its previous result until the partition is stable or
    ``max_iters`` passes have run; the run with the highest modularity
    wins, earlier runs winning ties. Clusters come back labelled by their
    smallest member id, each connected in the input graph.
    """
    nodes = graph.nodes
    if not nodes:
        return Clustering({}, {}, 0.0)
    base = _base_level(graph)
    if math.fsum(base.k) <= 0.0:
        return Clustering.from_groups([[n] for n in nodes], 0.0)
    best = None
    for run in range(max(1, restarts)):
        rng = rng_for(seed, "leiden", run)
        labels = list(range(base.n))
        for _ in range(max(1, max_iters)):
            new = _leiden_pass(base, labels, resolution, rng, theta)
            if _canonical(new) == _canonical(labels):
                break
            labels = new
        groups = [[nodes[v] for v in comp] for comp in _components(base, labels)]
        clustering = Clustering.from_groups(groups)
        clustering.quality = modularity(graph, clustering.assignment, resolution)
        if best is None or clustering.quality > best.quality + _TOL:
            best = clustering
    return best
