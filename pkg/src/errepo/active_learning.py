"""Label budgets per cluster and bootstrap-uncertainty active learning."""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .classifier import LabeledSet, train_ensemble
from .core import GroundTruth, canonical_pair
from .errors import BudgetExhaustedAtSeed, InfeasibleBudget, OracleMiss, VoteOutOfRange
from .graph import Clustering
from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


class Oracle:
    """Label source backed by ground truth; counts every query it answers."""

    def __init__(self, truth: GroundTruth):
        self.truth = truth
        self.queries = 0
        self.repeated = 0
        self._asked = set()
        self._lock = threading.Lock()

    def label(self, pair) -> bool:
        key = canonical_pair(*pair)
        lab = self.truth.get(key)
        if lab is None:
            raise OracleMiss(f"ground truth has no label for ({key[0]}, {key[1]})",
                             left=str(key[0]), right=str(key[1]))
        with self._lock:
            if key in self._asked:
                self.repeated += 1
            self._asked.add(key)
            self.queries += 1
        return lab


@dataclass
class BudgetPlan:
    b_tot: int
    b_min: int
    per_cluster: dict[int, int]
    merged_singletons: list[tuple[int, int]] = field(default_factory=list)
    merge_fired: bool = False
    clustering: Clustering | None = None

    @property
    def total(self) -> int:
        return sum(self.per_cluster.values())


def _mean_sim(graph, member, host_members):
    if graph is None:
        return 0.0
    return math.fsum(graph.weight(member, h) for h in host_members) / len(host_members)


def allocate_budget(clustering: Clustering, sizes, b_tot: int, b_min: int, graph=None,
                    assign_remainder: bool = False) -> BudgetPlan:
    """Split ``b_tot`` labels over clusters.

    Each cluster gets ``b_min`` plus a share of ``b_rem = b_tot - b_min*|C|``.
    Non-singleton clusters split ``b_rem * ratio_ns`` in proportion to
    their vector counts, singletons split ``b_rem * ratio_s`` the same
    way; the ratios are the fractions of problems living in non-singleton
    and singleton clusters. Shares are floored.

    When ``|C| * b_min > b_tot`` singletons are merged (largest first)
    into the non-singleton cluster with the highest mean edge weight
    until the budget suffices. ``sizes`` maps cluster id to vector count.
    """
    if b_tot <= 0 or b_min <= 0:
        raise InfeasibleBudget(f"budgets must be positive (b_tot={b_tot}, b_min={b_min})",
                               b_tot=b_tot, b_min=b_min)
    clusters = {c: list(m) for c, m in clustering.clusters.items()}
    size = {c: int(sizes[c]) for c in clusters}
    merged = []
    fired = len(clusters) * b_min > b_tot
    if fired:
        singles = sorted((c for c in clusters if len(clusters[c]) == 1), key=lambda c: (-size[c], c))
        for sc in singles:
            if len(clusters) * b_min <= b_tot:
                break
            hosts = sorted(c for c in clusters if len(clusters[c]) > 1)
            if not hosts:
                break
            member = clusters[sc][0]
            host = max(hosts, key=lambda h: (_mean_sim(graph, member, clusters[h]), -h))
            clusters[host].extend(clusters.pop(sc))
            size[host] += size.pop(sc)
            merged.append((sc, host))
            logger.info("budget: merged singleton cluster %s into %s", sc, host)
    if len(clusters) * b_min > b_tot:
        raise InfeasibleBudget(
            f"{len(clusters)} clusters x b_min={b_min} exceeds b_tot={b_tot}",
            clusters=len(clusters), b_min=b_min, b_tot=b_tot)

    b_rem = b_tot - b_min * len(clusters)
    ns = [c for c in clusters if len(clusters[c]) > 1]
    ss = [c for c in clusters if len(clusters[c]) == 1]
    n_problems = sum(len(m) for m in clusters.values())
    per = {}
    for group in (ns, ss):
        if not group:
            continue
        ratio = Fraction(sum(len(clusters[c]) for c in group), n_problems)
        group_total = sum(size[c] for c in group)
        for c in group:
            share = (Fraction(size[c], group_total) if group_total else Fraction(1, len(group)))
            per[c] = b_min + math.floor(share * b_rem * ratio)
    if assign_remainder:
        largest = min(clusters, key=lambda c: (-size[c], c))
        per[largest] += b_tot - sum(per.values())
    merged_clustering = Clustering(
        {m: c for c, ms in clusters.items() for m in ms},
        {c: sorted(ms) for c, ms in sorted(clusters.items())},
        clustering.quality,
    )
    return BudgetPlan(b_tot, b_min, dict(sorted(per.items())), merged, fired, merged_clustering)


def uncertainty(votes_match, k):
    """Bootstrap disagreement p*(1-p) with p = votes/k; works elementwise on arrays."""
    v = np.asarray(votes_match)
    if k < 1 or np.any(v < 0) or np.any(v > k):
        raise VoteOutOfRange(f"votes must lie in [0, {k}]", k=k)
    p = v / k
    out = p * (1 - p)
    return float(out) if out.ndim == 0 else out


def record_membership(problems, clustering: Clustering) -> dict:
    """Map every record to the set of cluster ids whose problems mention it."""
    members = {}
    for pid, cid in clustering.assignment.items():
        p = problems[pid]
        a, b = p.source_pair
        for rid in set(p.left_ids):
            members.setdefault((a, rid), set()).add(cid)
        for rid in set(p.right_ids):
            members.setdefault((b, rid), set()).add(cid)
    return members


def record_score(n_clusters_with_record: int, total_clusters: int, literal: bool = False) -> float:
    n = max(1, n_clusters_with_record)
    if literal:
        return math.log(n / total_clusters)
    return math.log(total_clusters / n)


def uniqueness_score(w, membership, total_clusters: int, literal: bool = False) -> float:
    """Mean IDF-style score of the two records of ``w``.

    ``membership`` maps ``RecordRef`` or ``(source_id, record_id)`` to the
    set of clusters containing the record. ``literal=True`` uses
    log(|C_r| / |C|) instead, which is never positive.
    """
    if total_clusters < 1:
        raise ValueError("total_clusters must be >= 1")
    left, right = (w.left, w.right) if hasattr(w, "left") else w

    def count(r):
        key = (r.source_id, r.record_id)
        return len(membership.get(key, membership.get(r, ())))

    return (record_score(count(left), total_clusters, literal)
            + record_score(count(right), total_clusters, literal)) / 2.0


@dataclass
class ALResult:
    labeled: LabeledSet
    model: object
    acquired: LabeledSet
    spent: int
    rounds: list = field(default_factory=list)


@dataclass(frozen=True)
class ALConfig:
    batch: int = 10
    k: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    max_features: int | None = None
    literal_uniqueness: bool = False


def _farthest_points(X, count, rng):
    n = X.shape[0]
    first = int(rng.integers(n))
    chosen = [first]
    dist = np.linalg.norm(X - X[first], axis=1)
    dist[first] = -1.0
    while len(chosen) < count:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(X - X[nxt], axis=1))
        dist[chosen] = -1.0
    return chosen


def run_bootstrap_al(pairs, X, budget: int, oracle: Oracle, seed: int = 0,
                     cfg: ALConfig | None = None, membership=None, total_clusters: int = 1,
                     initial: LabeledSet | None = None) -> ALResult:
    """Select up to ``budget`` vectors from the pool for labeling.

    Seed phase (only when ``initial`` lacks a class): ``2*batch`` vectors
    by farthest-point sampling, then vectors with the highest and lowest
    mean similarity, alternately, until both classes appear or
    ``4*batch`` seed labels are spent. Each round then trains a k-tree
    bootstrap ensemble, scores unlabeled vectors by
    ``unc * (1 + s_norm)`` and labels the best ``batch``. The final model
    is retrained on everything labeled, in canonical pair order.
    """
    cfg = cfg or ALConfig()
    X = np.asarray(X, dtype=np.float64)
    pairs = list(pairs)
    n = len(pairs)
    arity = X.shape[1]
    initial = initial if initial is not None else LabeledSet.empty(arity)
    have = {canonical_pair(*p) for p in initial.pairs}
    unlabeled = np.array([i for i in range(n) if canonical_pair(*pairs[i]) not in have], dtype=np.int64)
    rng = rng_for(seed, "al")
    tiebreak = rng.permutation(n)

    if membership is not None and total_clusters >= 1:
        uniq = np.array([uniqueness_score(p, membership, total_clusters, cfg.literal_uniqueness)
                         for p in pairs])
    else:
        uniq = np.zeros(n)

    got_pairs, got_y = [], []
    taken = np.zeros(n, dtype=bool)

    def acquire(indices):
        for i in indices:
            got_pairs.append(pairs[i])
            got_y.append(oracle.label(pairs[i]))
            taken[i] = True

    def classes():
        ys = set(initial.y.tolist()) | set(got_y)
        return len(ys)

    if classes() < 2 and unlabeled.size:
        seed_n = min(2 * cfg.batch, unlabeled.size)
        if budget < seed_n:
            raise BudgetExhaustedAtSeed(
                f"budget {budget} cannot cover the {seed_n}-vector seed sample",
                budget=budget, seed_size=seed_n)
        picks = _farthest_points(X[unlabeled], seed_n, rng)
        acquire(unlabeled[picks].tolist())
        means = X.mean(axis=1)
        high = True
        while classes() < 2 and len(got_y) < min(4 * cfg.batch, budget) and not taken[unlabeled].all():
            free = unlabeled[~taken[unlabeled]]
            pick = free[np.argmax(means[free])] if high else free[np.argmin(means[free])]
            acquire([int(pick)])
            high = not high
        logger.debug("AL seed phase labeled %d vectors", len(got_y))

    rounds = []
    r = 0
    while len(got_y) < budget:
        free = unlabeled[~taken[unlabeled]]
        if free.size == 0:
            break
        current = initial.extend(_as_set(got_pairs, X, pairs, got_y, arity)).canonical()
        ens = train_ensemble(current, cfg.k, derive_seed(seed, "round", r), cfg.max_depth,
                             cfg.min_leaf, cfg.max_features, allow_single_class=True)
        votes = ens.votes(X[free])
        unc = uncertainty(votes, cfg.k)
        s = uniq[free]
        span = s.max() - s.min()
        s_norm = (s - s.min()) / span if span > 0 else np.zeros_like(s)
        score = unc * (1.0 + s_norm)
        take = min(cfg.batch, budget - len(got_y), free.size)
        order = np.lexsort((tiebreak[free], -score))
        chosen = free[order[:take]]
        acquire(chosen.tolist())
        rounds.append({"round": r, "labeled": len(got_y), "max_unc": float(unc.max())})
        r += 1

    acquired = _as_set(got_pairs, X, pairs, got_y, arity)
    labeled = initial.extend(acquired).canonical()
    model = train_ensemble(labeled, cfg.k, derive_seed(seed, "final"), cfg.max_depth,
                           cfg.min_leaf, cfg.max_features, allow_single_class=True)
    return ALResult(labeled, model, acquired, len(got_y), rounds)


def _as_set(got_pairs, X, pairs, got_y, arity):
    if not got_pairs:
        return LabeledSet.empty(arity)
    index = {p: i for i, p in enumerate(pairs)}
    rows = [index[p] for p in got_pairs]
    return LabeledSet(tuple(got_pairs), X[rows], np.array(got_y, dtype=bool))


def run_supervised(pairs, X, oracle: Oracle, seed: int = 0, cfg: ALConfig | None = None) -> ALResult:
    """Label the whole pool and train on it."""
    cfg = cfg or ALConfig()
    X = np.asarray(X, dtype=np.float64)
    pairs = list(pairs)
    y = np.array([oracle.label(p) for p in pairs], dtype=bool)
    labeled = LabeledSet(tuple(pairs), X, y).canonical()
    model = train_ensemble(labeled, cfg.k, derive_seed(seed, "final"), cfg.max_depth,
                           cfg.min_leaf, cfg.max_features, allow_single_class=True)
    return ALResult(labeled, model, labeled, len(pairs), [])
