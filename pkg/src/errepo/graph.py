"""The ER-problem similarity graph and clustering containers."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .core import validate_arity
from .distributions import AnalysisConfig, DistTest, problem_similarity, profile_of
from .errors import ArityMismatch, DuplicateProblem, MalformedInput, UnknownProblem


class ProblemGraph:
    """Weighted undirected graph over problem ids.

    Edges are keyed by ``(a, b)`` with ``a < b``. ``problems`` keeps the
    ERProblem (or profile) behind every node so new problems can be
    connected later; it is not part of the edge-list export.
    """

    def __init__(self, nodes=(), edges=None, min_edge_sim: float = 0.0, problems=None):
        self.nodes = sorted(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise DuplicateProblem("duplicate node ids")
        self.edges: dict[tuple[str, str], float] = {}
        self.min_edge_sim = float(min_edge_sim)
        self.problems = dict(problems or {})
        known = set(self.nodes)
        for (a, b), w in (edges or {}).items():
            if a == b:
                raise MalformedInput(f"self-loop on {a}")
            if a not in known or b not in known:
                raise UnknownProblem(f"edge ({a}, {b}) references an unknown node")
            if not 0.0 <= w <= 1.0:
                raise MalformedInput(f"edge weight {w} outside [0, 1]")
            self.edges[_key(a, b)] = float(w)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return node in set(self.nodes)

    def weight(self, a, b, default=0.0) -> float:
        return self.edges.get(_key(a, b), default)

    def neighbors(self, node) -> dict[str, float]:
        out = {}
        for (a, b), w in self.edges.items():
            if a == node:
                out[b] = w
            elif b == node:
                out[a] = w
        return out

    def copy(self) -> "ProblemGraph":
        g = ProblemGraph(self.nodes, None, self.min_edge_sim, self.problems)
        g.edges = dict(self.edges)
        return g

    def to_edge_list(self) -> str:
        """``id_a<TAB>id_b<TAB>weight`` lines, sorted, weights in round-trip repr."""
        return "".join(f"{a}\t{b}\t{w!r}\n" for (a, b), w in sorted(self.edges.items()))

    @classmethod
    def from_edge_list(cls, text: str, nodes, min_edge_sim: float = 0.0) -> "ProblemGraph":
        edges = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedInput(f"edge list line {lineno}: expected 3 tab-separated fields")
            a, b, w = parts
            try:
                edges[_key(a, b)] = float(w)
            except ValueError:
                raise MalformedInput(f"edge list line {lineno}: bad weight {w!r}") from None
        return cls(nodes, edges, min_edge_sim)

    def __eq__(self, other):
        if not isinstance(other, ProblemGraph):
            return NotImplemented
        return (self.nodes == other.nodes and self.edges == other.edges
                and self.min_edge_sim == other.min_edge_sim)

    __hash__ = None

    def __repr__(self):
        return f"ProblemGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"


def _key(a, b):
    return (a, b) if a < b else (b, a)


@dataclass
class Clustering:
    assignment: dict[str, int]
    clusters: dict[int, list[str]] = field(default_factory=dict)
    quality: float = 0.0

    @classmethod
    def from_groups(cls, groups, quality: float = 0.0) -> "Clustering":
        """Label groups 0..n-1 in order of their smallest member id."""
        ordered = sorted((sorted(g) for g in groups if g), key=lambda g: g[0])
        clusters = {i: g for i, g in enumerate(ordered)}
        assignment = {m: i for i, g in clusters.items() for m in g}
        return cls(assignment, clusters, quality)

    def members(self, cluster_id) -> list[str]:
        return self.clusters[cluster_id]

    def groups(self) -> list[list[str]]:
        return [self.clusters[c] for c in sorted(self.clusters)]

    def to_json(self) -> dict:
        return {
            "assignment": {k: self.assignment[k] for k in sorted(self.assignment)},
            "clusters": {str(c): self.clusters[c] for c in sorted(self.clusters)},
            "quality": self.quality,
        }

    @classmethod
    def from_json(cls, doc) -> "Clustering":
        clusters = {int(c): list(m) for c, m in doc["clusters"].items()}
        return cls(dict(doc["assignment"]), clusters, float(doc["quality"]))


def _edge_weight(p, q, test, cfg):
    return problem_similarity(p, q, test, cfg).sim_p


def build_graph(problems, test=None, cfg: AnalysisConfig | None = None,
                min_edge_sim: float = 0.0, threads: int = 1) -> ProblemGraph:
    """All-pairs similarity graph; edges below ``min_edge_sim`` are dropped."""
    cfg = cfg or AnalysisConfig()
    test = DistTest(test or cfg.test)
    problems = sorted(problems, key=lambda p: p.id)
    if not problems:
        raise MalformedInput("build_graph needs at least one problem")
    validate_arity(problems)
    for p in problems:
        profile_of(p)
    pairs = list(itertools.combinations(range(len(problems)), 2))

    def weigh(ij):
        i, j = ij
        return _edge_weight(problems[i], problems[j], test, cfg)

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            weights = list(pool.map(weigh, pairs))
    else:
        weights = [weigh(ij) for ij in pairs]
    edges = {
        (problems[i].id, problems[j].id): w
        for (i, j), w in zip(pairs, weights)
        if w >= min_edge_sim
    }
    return ProblemGraph([p.id for p in problems], edges, min_edge_sim, {p.id: p for p in problems})


def insert_problem(graph: ProblemGraph, p_new, test=None, cfg: AnalysisConfig | None = None) -> ProblemGraph:
    """Return a copy of ``graph`` with ``p_new`` connected to every existing node."""
    cfg = cfg or AnalysisConfig()
    test = DistTest(test or cfg.test)
    if p_new.id in graph.problems or p_new.id in set(graph.nodes):
        raise DuplicateProblem(f"problem {p_new.id} already in graph", problem=p_new.id)
    g = graph.copy()
    for node in graph.nodes:
        other = graph.problems.get(node)
        if other is None:
            raise UnknownProblem(f"graph lacks data for node {node}", problem=node)
        if profile_of(other).arity != profile_of(p_new).arity:
            raise ArityMismatch(f"problem {p_new.id} arity differs from graph",
                                problem=p_new.id, expected=profile_of(other).arity,
                                got=profile_of(p_new).arity)
        w = _edge_weight(other, p_new, test, cfg)
        if w >= graph.min_edge_sim:
            g.edges[_key(node, p_new.id)] = w
    g.nodes = sorted(graph.nodes + [p_new.id])
    g.problems[p_new.id] = p_new
    return g


def remove_problem(graph: ProblemGraph, problem_id: str) -> ProblemGraph:
    if problem_id not in set(graph.nodes):
        raise UnknownProblem(f"problem {problem_id} not in graph", problem=problem_id)
    g = graph.copy()
    g.nodes = [n for n in graph.nodes if n != problem_id]
    g.edges = {k: w for k, w in graph.edges.items() if problem_id not in k}
    g.problems.pop(problem_id, None)
    return g
