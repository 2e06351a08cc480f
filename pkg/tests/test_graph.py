import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errepo.core import ERProblem
from errepo.errors import ArityMismatch, DuplicateProblem, MalformedInput, UnknownProblem
from errepo.evaluation import SynthSpec, generate_synthetic
from errepo.graph import Clustering, ProblemGraph, build_graph, insert_problem, remove_problem
from errepo.leiden import leiden_cluster, modularity

from oracles import brute_force_best, naive_modularity


@pytest.fixture(scope="module")
def two_regimes():
    corpus = generate_synthetic(SynthSpec.default(2, sources_per_regime=3, vectors_per_problem=60,
                                                  separation=0.5, seed=3))
    return corpus


def _problem(a, b, values):
    n = len(values)
    return ERProblem((a, b), [f"l{i}" for i in range(n)], [f"r{i}" for i in range(n)], values,
                     [f"f{j}" for j in range(len(values[0]))])


def test_single_problem_graph():
    g = build_graph([_problem("a", "b", [[0.1, 0.2]])])
    assert g.nodes == ["a|b"] and g.edges == {}


def test_build_requires_problems():
    with pytest.raises(MalformedInput):
        build_graph([])


def test_within_regime_edges_heavier(two_regimes):
    regime = two_regimes.regime_of
    g = build_graph(two_regimes.problems)
    n = len(g.nodes)
    assert len(g.edges) == n * (n - 1) // 2
    within = [w for (a, b), w in g.edges.items() if regime[a] == regime[b]]
    cross = [w for (a, b), w in g.edges.items() if regime[a] != regime[b]]
    assert min(within) > max(cross)


def test_threaded_build_identical(two_regimes):
    assert build_graph(two_regimes.problems, threads=4) == build_graph(two_regimes.problems)


def test_min_edge_sim_prunes(two_regimes):
    full = build_graph(two_regimes.problems)
    pruned = build_graph(two_regimes.problems, min_edge_sim=0.5)
    assert pruned.edges == {k: w for k, w in full.edges.items() if w >= 0.5}


def test_insert_and_remove(two_regimes):
    regime = two_regimes.regime_of
    problems = sorted(two_regimes.problems, key=lambda p: p.id)
    new = next(p for p in problems if regime[p.id] == 0)
    base = build_graph([p for p in problems if p.id != new.id])
    g = insert_problem(base, new)
    assert new.id in g and new.id not in base
    nbrs = g.neighbors(new.id)
    strongest = max(nbrs, key=nbrs.get)
    assert regime[strongest] == 0
    for k, w in base.edges.items():
        assert g.edges[k] == w
    assert remove_problem(g, new.id) == base
    with pytest.raises(DuplicateProblem):
        insert_problem(g, new)
    with pytest.raises(UnknownProblem):
        remove_problem(base, new.id)


def test_insert_into_empty_graph():
    g = insert_problem(ProblemGraph(), _problem("a", "b", [[0.5]]))
    assert g.nodes == ["a|b"] and not g.edges


def test_insert_arity_mismatch():
    g = build_graph([_problem("a", "b", [[0.5, 0.5]])])
    with pytest.raises(ArityMismatch):
        insert_problem(g, _problem("a", "c", [[0.5]]))


def test_edge_list_round_trip(two_regimes):
    g = build_graph(two_regimes.problems)
    back = ProblemGraph.from_edge_list(g.to_edge_list(), g.nodes)
    assert back == g


def test_edge_list_rejects_garbage():
    with pytest.raises(MalformedInput):
        ProblemGraph.from_edge_list("a\tb\n", ["a", "b"])
    with pytest.raises(MalformedInput):
        ProblemGraph.from_edge_list("a\tb\tx\n", ["a", "b"])
    with pytest.raises(UnknownProblem):
        ProblemGraph.from_edge_list("a\tc\t0.5\n", ["a", "b"])
    with pytest.raises(MalformedInput):
        ProblemGraph(["a", "b"], {("a", "b"): 1.5})


def test_clustering_json_round_trip():
    c = Clustering.from_groups([["d", "c"], ["a"], ["b", "e"]], 0.25)
    assert c.groups() == [["a"], ["b", "e"], ["c", "d"]]
    assert Clustering.from_json(c.to_json()) == c


def _two_cliques():
    left, right = [f"a{i}" for i in range(4)], [f"b{i}" for i in range(4)]
    edges = {}
    for grp in (left, right):
        for u, v in itertools.combinations(grp, 2):
            edges[(u, v)] = 1.0
    edges[("a0", "b0")] = 0.05
    return left + right, edges


def test_two_cliques_split():
    nodes, edges = _two_cliques()
    c = leiden_cluster(ProblemGraph(nodes, edges))
    assert c.groups() == [[f"a{i}" for i in range(4)], [f"b{i}" for i in range(4)]]
    best, _ = brute_force_best(nodes, edges)
    assert c.quality == pytest.approx(best)


def test_edgeless_graph_singletons():
    nodes = [f"n{i}" for i in range(5)]
    c = leiden_cluster(ProblemGraph(nodes))
    assert c.groups() == [[n] for n in nodes]


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_complete_graph_one_cluster(n):
    nodes = [f"n{i}" for i in range(n)]
    edges = {(u, v): 0.7 for u, v in itertools.combinations(nodes, 2)}
    c = leiden_cluster(ProblemGraph(nodes, edges))
    assert c.groups() == [nodes]
    assert brute_force_best(nodes, edges)[1] == [nodes]


def test_empty_graph():
    assert leiden_cluster(ProblemGraph()).clusters == {}


def test_modularity_matches_oracle():
    nodes, edges = _two_cliques()
    g = ProblemGraph(nodes, edges)
    rng = np.random.default_rng(0)
    for _ in range(20):
        labels = rng.integers(0, 3, len(nodes))
        blocks = [[n for n, l in zip(nodes, labels) if l == k] for k in set(labels.tolist())]
        assign = dict(zip(nodes, labels.tolist()))
        for gamma in (0.5, 1.0, 2.0):
            assert modularity(g, assign, gamma) == pytest.approx(naive_modularity(nodes, edges, blocks, gamma))


def _connected(groups, edges):
    for grp in groups:
        seen, stack = {grp[0]}, [grp[0]]
        while stack:
            u = stack.pop()
            for (a, b), w in edges.items():
                if w <= 0:
                    continue
                for x, y in ((a, b), (b, a)):
                    if x == u and y in grp and y not in seen:
                        seen.add(y)
                        stack.append(y)
        if seen != set(grp):
            return False
    return True


graphs = st.integers(2, 7).flatmap(lambda n: st.tuples(
    st.just([f"v{i}" for i in range(n)]),
    st.lists(st.sampled_from([0.0, 0.1, 0.5, 0.9, 1.0]),
             min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2),
))


@settings(max_examples=60, deadline=None)
@given(data=graphs, seed=st.integers(0, 1000))
def test_leiden_partition_properties(data, seed):
    nodes, ws = data
    edges = {pair: w for pair, w in zip(itertools.combinations(nodes, 2), ws) if w > 0}
    g = ProblemGraph(nodes, edges)
    c = leiden_cluster(g, seed=seed, restarts=4)
    assert sorted(c.assignment) == nodes
    assert sorted(m for grp in c.groups() for m in grp) == nodes
    assert _connected(c.groups(), edges)
    assert c.quality == pytest.approx(
        naive_modularity(nodes, edges, c.groups()) if edges else 0.0, abs=1e-9)
    assert leiden_cluster(g, seed=seed, restarts=4) == c


def test_suboptimality_rate_on_random_graphs():
    """Not a contract: Leiden is a heuristic, so a small gap on random graphs is tolerated."""
    rng = np.random.default_rng(11)
    worse = 0
    trials = 60
    for _ in range(trials):
        n = int(rng.integers(4, 8))
        nodes = [f"v{i}" for i in range(n)]
        edges = {}
        for u, v in itertools.combinations(nodes, 2):
            if rng.random() < 0.6:
                edges[(u, v)] = float(np.round(rng.random(), 2))
        c = leiden_cluster(ProblemGraph(nodes, edges))
        best, _ = brute_force_best(nodes, edges)
        if c.quality < best - 1e-9:
            worse += 1
    assert worse / trials <= 0.1
