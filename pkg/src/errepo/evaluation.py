"""Metrics, a synthetic multi-source corpus generator and the experiment driver."""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import comb, ndtr, ndtri

from .core import ERProblem, GroundTruth, RecordRef, canonical_pair, load_dataset, split_by_source_pair
from .distributions import ks_statistic
from .errors import InvalidConfig, InvalidSpec, MissingFile, OracleMiss
from .seeding import rng_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Metrics":
        # undefined precision/recall count as 0
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(tp, fp, fn, p, r, f1)

    def to_dict(self):
        return asdict(self)


def compute_metrics(predictions, oracle: GroundTruth) -> Metrics:
    """Match-class counts for ``predictions``: iterable of ``(pair, is_match)``."""
    tp = fp = fn = 0
    for pair, pred in predictions:
        truth = oracle.get(pair)
        if truth is None:
            a, b = canonical_pair(*pair)
            raise OracleMiss(f"no ground truth for ({a}, {b})", left=str(a), right=str(b))
        if pred and truth:
            tp += 1
        elif pred:
            fp += 1
        elif truth:
            fn += 1
    return Metrics.from_counts(tp, fp, fn)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    labels_a, labels_b = list(labels_a), list(labels_b)
    if len(labels_a) != len(labels_b):
        raise ValueError("labelings differ in length")
    n = len(labels_a)
    if n < 2:
        return 1.0
    _, ia = np.unique(np.asarray(labels_a, dtype=object).astype(str), return_inverse=True)
    _, ib = np.unique(np.asarray(labels_b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    index = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2)
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


# Default non-match centres per feature; regimes differ in how matches sit
# relative to them, so one classifier cannot serve all regimes.
_BASE = (0.1, 0.5, 0.3, 0.2, 0.4)
_DEFAULT_REGIMES = (
    {"nonmatch_mean": [c for c in _BASE], "match_mean": [c + 0.4 for c in _BASE]},
    {"nonmatch_mean": [c + 0.38 for c in _BASE], "match_mean": [c + 0.02 for c in _BASE]},
    {"nonmatch_mean": [0.6, 0.7, 0.65, 0.75, 0.55], "match_mean": [0.15, 0.25, 0.2, 0.3, 0.1]},
)


@dataclass
class SynthSpec:
    """Corpus description.

    Each regime is a dict with per-feature ``match_mean`` and
    ``nonmatch_mean`` lists and an optional ``sd`` (scalar or list).
    Every regime gets its own ``sources_per_regime`` sources; problems
    are all source pairs inside a regime.
    """

    regimes: list = field(default_factory=lambda: [dict(r) for r in _DEFAULT_REGIMES[:2]])
    sources_per_regime: int = 4
    vectors_per_problem: int = 500
    match_ratio: float = 0.2
    sd: float = 0.05
    separation: float = 0.3
    seed: int = 42
    feature_names: list | None = None

    @classmethod
    def default(cls, n_regimes: int = 2, **kw) -> "SynthSpec":
        if not 1 <= n_regimes <= len(_DEFAULT_REGIMES):
            raise InvalidSpec(f"built-in regimes support 1..{len(_DEFAULT_REGIMES)}, got {n_regimes}",
                              regimes=n_regimes)
        return cls(regimes=[dict(r) for r in _DEFAULT_REGIMES[:n_regimes]], **kw)

    def validate(self):
        if not self.regimes:
            raise InvalidSpec("at least one regime is required")
        if self.sources_per_regime < 2:
            raise InvalidSpec("each regime needs at least two sources")
        if not 0.0 < self.match_ratio < 1.0:
            raise InvalidSpec(f"match_ratio must lie in (0, 1), got {self.match_ratio}")
        if self.vectors_per_problem < 2:
            raise InvalidSpec("vectors_per_problem must be >= 2")
        arity = None
        for i, r in enumerate(self.regimes):
            m, nm = r.get("match_mean"), r.get("nonmatch_mean")
            if m is None or nm is None or len(m) != len(nm) or not m:
                raise InvalidSpec(f"regime {i} needs equal-length match_mean and nonmatch_mean")
            if arity is not None and len(m) != arity:
                raise InvalidSpec("regimes disagree on the number of features")
            arity = len(m)
            if any(not 0.0 <= x <= 1.0 for x in list(m) + list(nm)):
                raise InvalidSpec(f"regime {i} means must lie in [0, 1]")
            sd = np.broadcast_to(np.asarray(r.get("sd", self.sd), dtype=float), (arity,))
            if np.any(sd <= 0):
                raise InvalidSpec(f"regime {i} sd must be positive")
        if self.feature_names is not None and len(self.feature_names) != arity:
            raise InvalidSpec("feature_names length differs from regime arity")
        return arity


@dataclass
class SyntheticCorpus:
    problems: list
    oracle: GroundTruth
    regime_of: dict
    feature_names: list


def truncated_normal(rng, mean, sd, size, low=0.0, high=1.0):
    """Normal(mean, sd) restricted to [low, high], sampled by inverse CDF."""
    a = ndtr((low - mean) / sd)
    b = ndtr((high - mean) / sd)
    u = a + rng.random(size) * (b - a)
    x = mean + sd * ndtri(u)
    return np.clip(x, low, high)


def _sample_problem(spec, regime, ra, rb, rng, arity, names):
    n = spec.vectors_per_problem
    n_match = max(1, min(n - 1, int(round(spec.match_ratio * n))))
    n_non = n - n_match
    n_records = n_match + max(2, math.ceil(math.sqrt(n_non)) + 1)
    # match i links record i in both sources; non-matches are distinct (i, j), i != j
    flat = rng.choice(n_records * (n_records - 1), size=n_non, replace=False)
    li = flat // (n_records - 1)
    rj = flat % (n_records - 1)
    rj = rj + (rj >= li)
    left = [f"r{i}" for i in range(n_match)] + [f"r{i}" for i in li]
    right = [f"r{i}" for i in range(n_match)] + [f"r{j}" for j in rj]
    labels = [True] * n_match + [False] * n_non
    sd = np.broadcast_to(np.asarray(regime.get("sd", spec.sd), dtype=float), (arity,))
    cols = []
    for f in range(arity):
        m = truncated_normal(rng, regime["match_mean"][f], sd[f], n_match)
        nm = truncated_normal(rng, regime["nonmatch_mean"][f], sd[f], n_non)
        cols.append(np.concatenate([m, nm]))
    values = np.column_stack(cols)
    order = sorted(range(n), key=lambda i: (left[i], right[i]))
    problem = ERProblem((ra, rb), [left[i] for i in order], [right[i] for i in order],
                        values[order], names)
    truth = {(RecordRef(ra, left[i]), RecordRef(rb, right[i])): labels[i] for i in range(n)}
    return problem, truth


def _mean_ks(p, q):
    return float(np.mean([ks_statistic(p.values[:, f], q.values[:, f]) for f in range(p.arity)]))


def check_separation(corpus: SyntheticCorpus, delta: float):
    """Mean per-feature KS: across regimes must reach ``delta``, within stay under ``delta/2``."""
    worst_cross, worst_within = 1.0, 0.0
    for p, q in itertools.combinations(corpus.problems, 2):
        d = _mean_ks(p, q)
        if corpus.regime_of[p.id] == corpus.regime_of[q.id]:
            worst_within = max(worst_within, d)
        else:
            worst_cross = min(worst_cross, d)
    if worst_cross < delta or worst_within >= delta / 2:
        raise InvalidSpec(
            f"regimes not separated: min cross KS {worst_cross:.3f} (need >= {delta}), "
            f"max within KS {worst_within:.3f} (need < {delta / 2})",
            cross=worst_cross, within=worst_within)
    return worst_cross, worst_within


def generate_synthetic(spec: SynthSpec) -> SyntheticCorpus:
    """Sample a corpus; each problem has its own RNG stream, so output depends only on ``spec``."""
    arity = spec.validate()
    names = list(spec.feature_names or [f"f{i + 1}" for i in range(arity)])
    problems, regime_of = [], {}
    oracle = GroundTruth()
    for r, regime in enumerate(spec.regimes):
        sources = [f"R{r}S{s}" for s in range(spec.sources_per_regime)]
        for a, b in itertools.combinations(sources, 2):
            rng = rng_for(spec.seed, "synth", a, b)
            p, truth = _sample_problem(spec, regime, a, b, rng, arity, names)
            problems.append(p)
            regime_of[p.id] = r
            for pair, lab in truth.items():
                oracle[pair] = lab
    corpus = SyntheticCorpus(problems, oracle, regime_of, names)
    if len(spec.regimes) > 1 or spec.sources_per_regime > 2:
        check_separation(corpus, spec.separation)
    return corpus


EXPERIMENT_DEFAULTS = {
    "dataset": None,
    "ratio_init": 0.5,
    "test": "KS",
    "b_tot": 1000,
    "b_min": 50,
    "batch": 10,
    "k": 100,
    "strategy": "base",
    "t_cov": 0.25,
    "seed": 42,
    "al": "bootstrap",
    "unified_baseline": False,
}


def load_experiment_config(doc_or_path) -> dict:
    """Merge an experiment config (dict or JSON file) over the defaults and validate it."""
    if isinstance(doc_or_path, (str, Path)):
        path = Path(doc_or_path)
        if not path.is_file():
            raise MissingFile(f"no experiment config at {path}", path=str(path))
        doc = json.loads(path.read_text(encoding="utf-8"))
        base_dir = path.parent
    else:
        doc = dict(doc_or_path)
        base_dir = None
    unknown = sorted(set(doc) - set(EXPERIMENT_DEFAULTS))
    if unknown:
        raise InvalidConfig(f"unknown experiment keys: {', '.join(unknown)}", keys=unknown)
    cfg = dict(EXPERIMENT_DEFAULTS)
    cfg.update(doc)
    if cfg["dataset"] is None:
        raise InvalidConfig("experiment config needs a dataset")
    if isinstance(cfg["dataset"], str) and base_dir is not None:
        ds = Path(cfg["dataset"])
        cfg["dataset"] = str(ds if ds.is_absolute() else base_dir / ds)
    if cfg["strategy"] not in ("base", "cov"):
        raise InvalidConfig(f"strategy must be base or cov, got {cfg['strategy']!r}")
    if not 0.0 < float(cfg["ratio_init"]) < 1.0:
        raise InvalidConfig("ratio_init must lie in (0, 1)")
    return cfg


def _load_corpus(dataset, seed):
    if isinstance(dataset, dict):
        opts = dict(dataset.get("synthetic", dataset))
        n = int(opts.pop("regimes", 2))
        opts.setdefault("seed", seed)
        corpus = generate_synthetic(SynthSpec.default(n, **opts))
        return corpus.problems, corpus.oracle
    loaded = load_dataset(dataset)
    return loaded.problems, loaded.oracle


def unified_baseline(repo, problems, oracle: GroundTruth, seed: int = 0):
    """Train one model on every cluster's retained labels and score ``problems`` with it."""
    from .classifier import LabeledSet, train_ensemble
    from .seeding import derive_seed

    pooled = LabeledSet.empty(repo.arity)
    for cid in sorted(repo.models):
        pooled = pooled.extend(repo.models[cid].pc)
    cfg = repo.config
    model = train_ensemble(pooled.canonical(), cfg.k, derive_seed(seed, "unified"), cfg.max_depth,
                           cfg.min_leaf, cfg.max_features, allow_single_class=True)
    per = [compute_metrics(zip(p.pairs, model.predict(p.values)), oracle) for p in problems]
    return {"labels": len(pooled), "macro_f1": float(np.mean([m.f1 for m in per])) if per else 0.0,
            "micro": _pool_metrics(per).to_dict()}


def _pool_metrics(per):
    return Metrics.from_counts(sum(m.tp for m in per), sum(m.fp for m in per), sum(m.fn for m in per))


def run_experiment(config, threads: int = 1) -> dict:
    """Split, initialise the repository, solve every unsolved problem and score it."""
    from .repository import RepoConfig, init_repository, sel_base, sel_cov

    cfg = load_experiment_config(config)
    started = time.perf_counter()
    problems, oracle = _load_corpus(cfg["dataset"], cfg["seed"])
    initial, unsolved = split_by_source_pair(problems, cfg["ratio_init"], cfg["seed"])
    repo_cfg = RepoConfig(test=cfg["test"], b_tot=cfg["b_tot"], b_min=cfg["b_min"],
                          batch=cfg["batch"], k=cfg["k"], t_cov=cfg["t_cov"], al=cfg["al"],
                          seed=cfg["seed"])
    repo = init_repository(initial, repo_cfg, oracle, threads=threads)
    init_repo = repo
    rows, per = [], []
    for p in unsolved:
        if cfg["strategy"] == "base":
            rep = sel_base(repo, p)
        else:
            repo, rep = sel_cov(repo, p, oracle)
        m = compute_metrics(((pair, match) for pair, match, _ in rep.predictions), oracle)
        per.append(m)
        row = rep.to_dict()
        row.update({"metrics": m.to_dict(), "vectors": len(p)})
        rows.append(row)
    extra = sum(r["extra_labels_spent"] for r in rows)
    report = {
        "config": {k: cfg[k] for k in sorted(cfg)},
        "n_problems": len(problems),
        "n_initial": len(initial),
        "n_unsolved": len(unsolved),
        "initial_ids": [p.id for p in initial],
        "clusters_initial": {str(c): m for c, m in sorted(init_repo.clustering.clusters.items())},
        "clusters_final": len(repo.clustering.clusters),
        "labels_spent_initial": init_repo.labels_spent,
        "labels_spent_extra": extra,
        "labels_spent_total": init_repo.labels_spent + extra,
        "macro_f1": float(np.mean([m.f1 for m in per])) if per else 0.0,
        "micro": _pool_metrics(per).to_dict(),
        "per_problem": rows,
    }
    if cfg["unified_baseline"]:
        report["unified_baseline"] = unified_baseline(init_repo, unsolved, oracle, cfg["seed"])
    report["wall_time"] = time.perf_counter() - started
    return report


def report_json(report: dict, include_timing: bool = True) -> str:
    doc = dict(report)
    if not include_timing:
        doc.pop("wall_time", None)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def format_table(report: dict) -> str:
    lines = [f"{'problem':<24} {'cluster':>7} {'sim_p':>7} {'P':>6} {'R':>6} {'F1':>6} {'extra':>6}"]
    for row in report["per_problem"]:
        m = row["metrics"]
        lines.append(f"{row['problem_id']:<24} {row['cluster_id']:>7} {row['sim_p']:>7.3f} "
                     f"{m['precision']:>6.3f} {m['recall']:>6.3f} {m['f1']:>6.3f} "
                     f"{row['extra_labels_spent']:>6}")
    micro = report["micro"]
    lines.append(f"macro-F1 {report['macro_f1']:.4f}  micro-F1 {micro['f1']:.4f}  "
                 f"labels {report['labels_spent_total']} "
                 f"(initial {report['labels_spent_initial']}, extra {report['labels_spent_extra']})")
    if "unified_baseline" in report:
        lines.append(f"unified model macro-F1 {report['unified_baseline']['macro_f1']:.4f}")
    return "\n".join(lines) + "\n"
