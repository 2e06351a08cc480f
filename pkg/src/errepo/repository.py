"""Per-cluster model repository: initialization, serving and persistence.

Archive layout (one directory)::

    manifest.json          versions, config, T/U, model index, problem index
    graph.tsv              edge list of the problem graph
    clusters.json          current clustering
    models/<cid>.model     ensemble per cluster (text format of the classifier)
    models/history/        models replaced by a retrain
    pc/<cid>.csv           retained labeled vectors per cluster
    problems/pNNNN.csv     integrated problems (needed to re-cluster later)
    audit.log              one JSON event per line
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .active_learning import ALConfig, Oracle, allocate_budget, record_membership, run_bootstrap_al, run_supervised
from .classifier import LabeledSet, dump_model, load_model
from .core import (
    ID_COLUMNS,
    ERProblem,
    RecordRef,
    load_problem_csv,
    problem_csv_text,
    problem_id,
    round_half_up,
    validate_arity,
)
from .distributions import AnalysisConfig, DistTest, problem_similarity
from .errors import (
    ArityMismatch,
    CorruptManifest,
    DuplicateProblem,
    EmptyRepository,
    ERError,
    InvalidConfig,
    MalformedInput,
    MissingFile,
    TooFewProblems,
    VersionMismatch,
)
from .graph import Clustering, ProblemGraph, build_graph, insert_problem
from .leiden import leiden_cluster, modularity
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ARCHIVE_FORMAT = 1


@dataclass(frozen=True)
class RepoConfig:
    test: str = "KS"
    b_tot: int = 1000
    b_min: int = 50
    batch: int = 10
    k: int = 100
    t_cov: float = 0.25
    al: str = "bootstrap"
    seed: int = 42
    resolution: float = 1.0
    min_edge_sim: float = 0.0
    leiden_restarts: int = 16
    max_depth: int = 12
    min_leaf: int = 2
    max_features: int | None = None
    literal_uniqueness: bool = False
    assign_remainder: bool = False
    wd_grid: int = 101
    psi_bins: int = 100
    psi_eps: float = 1e-6

    def __post_init__(self):
        try:
            DistTest(self.test)
        except ValueError:
            raise InvalidConfig(f"unknown distribution test {self.test!r}", test=self.test) from None
        if self.al not in ("bootstrap", "supervised"):
            raise InvalidConfig(f"al must be bootstrap or supervised, got {self.al!r}")
        for name in ("b_tot", "b_min", "batch", "k", "leiden_restarts", "max_depth", "min_leaf"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1", field=name, value=getattr(self, name))
        if not 0.0 <= self.t_cov <= 1.0:
            raise InvalidConfig(f"t_cov must lie in [0, 1], got {self.t_cov}")
        if self.resolution <= 0:
            raise InvalidConfig("resolution must be positive")
        if not 0.0 <= self.min_edge_sim <= 1.0:
            raise InvalidConfig("min_edge_sim must lie in [0, 1]")
        self.analysis  # validates grid, bins and eps

    @property
    def analysis(self) -> AnalysisConfig:
        return AnalysisConfig(DistTest(self.test), self.wd_grid, self.psi_bins, self.psi_eps)

    @property
    def al_config(self) -> ALConfig:
        return ALConfig(self.batch, self.k, self.max_depth, self.min_leaf, self.max_features,
                        self.literal_uniqueness)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "RepoConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}", keys=unknown)
        return cls(**doc)


@dataclass
class ClusterModel:
    cluster_id: int
    members: list
    model: object
    pc: LabeledSet
    trained_on: list
    created_at: int
    retrained_at: int


@dataclass
class SolveReport:
    problem_id: str
    strategy: str
    cluster_id: int
    sim_p: float
    retrain_triggered: bool
    extra_labels_spent: int
    predictions: list
    coverage: float | None = None
    fresh_model: bool = False

    def to_dict(self, with_predictions: bool = False) -> dict:
        doc = {
            "problem_id": self.problem_id,
            "strategy": self.strategy,
            "cluster_id": self.cluster_id,
            "sim_p": self.sim_p,
            "retrain_triggered": self.retrain_triggered,
            "extra_labels_spent": self.extra_labels_spent,
            "coverage": self.coverage,
            "fresh_model": self.fresh_model,
            "n_predictions": len(self.predictions),
            "n_matches": sum(1 for _, m, _ in self.predictions if m),
        }
        if with_predictions:
            doc["predictions"] = [[str(a), str(b), m, f] for (a, b), m, f in self.predictions]
        return doc

    def predictions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(ID_COLUMNS) + ["match", "match_fraction"])
        for (a, b), m, f in self.predictions:
            w.writerow([a.source_id, a.record_id, b.source_id, b.record_id, int(m), repr(float(f))])
        return buf.getvalue()


@dataclass
class Repository:
    problems: dict
    graph: ProblemGraph
    clustering: Clustering
    models: dict
    T: set
    U: set
    config: RepoConfig
    audit: list = field(default_factory=list)
    history: list = field(default_factory=list)
    labels_spent: int = 0

    @property
    def arity(self) -> int:
        return next(iter(self.problems.values())).arity

    @property
    def feature_names(self):
        return next(iter(self.problems.values())).feature_names

    def copy(self) -> "Repository":
        """Independent copy; problems and trained models are shared, they are never mutated."""
        return Repository(
            dict(self.problems), self.graph.copy(), copy.deepcopy(self.clustering),
            {c: dataclasses.replace(m, members=list(m.members), trained_on=list(m.trained_on))
             for c, m in self.models.items()},
            set(self.T), set(self.U), self.config, list(self.audit), list(self.history),
            self.labels_spent,
        )

    def log(self, event: str, **details):
        seq = self.audit[-1]["seq"] + 1 if self.audit else 1
        entry = {"seq": seq, "event": event}
        entry.update(details)
        self.audit.append(entry)
        logger.debug("audit %s", entry)
        return seq

    def violations(self) -> list[str]:
        """Broken structural invariants, empty when the repository is consistent."""
        out = []
        if self.T & self.U:
            out.append("T and U overlap")
        if self.T | self.U != set(self.problems):
            out.append("T and U do not cover the integrated problems")
        if set(self.graph.nodes) != set(self.clustering.assignment):
            out.append("graph nodes and clustering disagree")
        out.extend(f"cluster {cid} has a model but no retained vectors"
                   for cid, m in self.models.items() if len(m.pc) == 0)
        return out


def _as_oracle(oracle):
    return oracle if isinstance(oracle, Oracle) else Oracle(oracle)


def _pool(problems, members):
    ps = [problems[m] for m in sorted(members)]
    pairs = [pr for p in ps for pr in p.pairs]
    return pairs, np.vstack([p.values for p in ps])


def _problems_in(labeled: LabeledSet):
    return {problem_id(a.source_id, b.source_id) for a, b in labeled.pairs}


def _train_cluster(repo_problems, members, budget, oracle, cfg: RepoConfig, seed,
                   membership, n_clusters, initial=None):
    pairs, X = _pool(repo_problems, members)
    if cfg.al == "supervised" and initial is None:
        return run_supervised(pairs, X, oracle, seed, cfg.al_config)
    return run_bootstrap_al(pairs, X, budget, oracle, seed, cfg.al_config, membership,
                            n_clusters, initial)


def init_repository(problems, config: RepoConfig | None = None, oracle=None,
                    threads: int = 1) -> Repository:
    """Build the graph, cluster it, split the budget and train one model per cluster."""
    cfg = config or RepoConfig()
    problems = sorted(problems, key=lambda p: p.id)
    if not problems:
        raise TooFewProblems("init_repository needs at least one problem")
    if oracle is None:
        raise MalformedInput("init_repository needs an oracle")
    ids = [p.id for p in problems]
    if len(set(ids)) != len(ids):
        raise DuplicateProblem("duplicate problem ids")
    validate_arity(problems)
    oracle = _as_oracle(oracle)
    by_id = {p.id: p for p in problems}

    graph = build_graph(problems, cfg.test, cfg.analysis, cfg.min_edge_sim, threads)
    raw = leiden_cluster(graph, cfg.resolution, cfg.seed, restarts=cfg.leiden_restarts)
    sizes = {c: sum(len(by_id[m]) for m in ms) for c, ms in raw.clusters.items()}
    plan = allocate_budget(raw, sizes, cfg.b_tot, cfg.b_min, graph, cfg.assign_remainder)
    clustering = Clustering.from_groups(plan.clustering.groups())
    clustering.quality = modularity(graph, clustering.assignment, cfg.resolution)
    budgets = {clustering.assignment[plan.clustering.clusters[c][0]]: b
               for c, b in plan.per_cluster.items()}

    repo = Repository(by_id, graph, clustering, {}, set(), set(ids), cfg)
    repo.log("graph_built", nodes=len(graph.nodes), edges=len(graph.edges), test=cfg.test)
    repo.log("clustered", clusters=len(clustering.clusters), quality=clustering.quality)
    repo.log("budget_allocated", per_cluster={str(c): b for c, b in sorted(budgets.items())},
             merged=[list(m) for m in plan.merged_singletons], b_tot=cfg.b_tot, b_min=cfg.b_min)

    membership = record_membership(by_id, clustering)
    n_clusters = len(clustering.clusters)
    cids = sorted(clustering.clusters)

    def work(cid):
        return _train_cluster(by_id, clustering.clusters[cid], budgets[cid], oracle, cfg,
                              derive_seed(cfg.seed, "cluster", cid), membership, n_clusters)

    if threads > 1 and len(cids) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, cids))
    else:
        results = [work(c) for c in cids]

    for cid, res in zip(cids, results):
        members = list(clustering.clusters[cid])
        used = sorted(_problems_in(res.labeled) & set(members))
        seq = repo.log("model_trained", cluster_id=cid, budget=budgets[cid], spent=res.spent,
                       trained_on=used, matches=res.labeled.n_matches)
        repo.models[cid] = ClusterModel(cid, members, res.model, res.labeled, used, seq, seq)
        repo.labels_spent += res.spent
        repo.T.update(used)
        repo.U.difference_update(used)
    return repo


def _cluster_sims(repo: Repository, p_new: ERProblem):
    if not repo.models:
        raise EmptyRepository("repository has no trained models")
    if p_new.arity != repo.arity:
        raise ArityMismatch(f"problem {p_new.id} has arity {p_new.arity}, repository {repo.arity}",
                            problem=p_new.id, expected=repo.arity, got=p_new.arity)
    cfg = repo.config
    return {cid: problem_similarity(p_new, m.pc.X, cfg.test, cfg.analysis).sim_p
            for cid, m in sorted(repo.models.items())}


def choose_cluster(sims: dict):
    """Highest similarity wins; ties go to the lower cluster id."""
    best = None
    for cid in sorted(sims):
        if best is None or sims[cid] > sims[best]:
            best = cid
    return best


def _predict(model, p: ERProblem):
    frac = model.match_fraction(p.values)
    return [(pair, bool(f >= 0.5), float(f)) for pair, f in zip(p.pairs, frac)]


def sel_base(repo: Repository, p_new: ERProblem) -> SolveReport:
    """Apply the model of the cluster whose retained vectors look most like ``p_new``."""
    sims = _cluster_sims(repo, p_new)
    cid = choose_cluster(sims)
    return SolveReport(p_new.id, "base", cid, sims[cid], False, 0,
                       _predict(repo.models[cid].model, p_new))


def coverage(members, U, sizes) -> float:
    """Fraction of the cluster's vectors that come from problems in ``U``."""
    total = sum(sizes[m] for m in members)
    if total == 0:
        return 0.0
    return sum(sizes[m] for m in members if m in U) / total


def retrain_budget(b_tot: int, cov: float, n_prev: int) -> int:
    """Extra labels for a retrain: b_tot * cov * (n_prev / b_tot), i.e. cov * n_prev."""
    return round_half_up(b_tot * cov * n_prev / b_tot)


def _inherit(old: Clustering, models: dict, new: Clustering):
    """For each new cluster pick the old model-bearing cluster with the largest member overlap."""
    out = {}
    for cid, members in new.clusters.items():
        ms = set(members)
        best, best_key = None, None
        for oid, m in models.items():
            overlap = len(ms & set(old.clusters.get(oid, ())))
            if overlap == 0:
                continue
            key = (overlap, len(old.clusters.get(oid, ())), -oid)
            if best_key is None or key > best_key:
                best, best_key = oid, key
        out[cid] = best
    return out


def sel_cov(repo: Repository, p_new: ERProblem, oracle, t_cov: float | None = None):
    """Integrate ``p_new``, re-cluster and retrain the affected model if coverage is low.

    Returns ``(new_repository, report)``; ``repo`` itself is left untouched.
    """
    cfg = repo.config
    t_cov = cfg.t_cov if t_cov is None else float(t_cov)
    if not repo.models:
        raise EmptyRepository("repository has no trained models")
    if p_new.arity != repo.arity:
        raise ArityMismatch(f"problem {p_new.id} has arity {p_new.arity}, repository {repo.arity}",
                            problem=p_new.id, expected=repo.arity, got=p_new.arity)
    if p_new.id in repo.problems:
        raise DuplicateProblem(f"problem {p_new.id} already integrated", problem=p_new.id)
    oracle = _as_oracle(oracle)
    asked_before = oracle.queries

    new = repo.copy()
    new.graph = insert_problem(repo.graph, p_new, cfg.test, cfg.analysis)
    new.problems[p_new.id] = p_new
    new.U.add(p_new.id)
    new.log("problem_inserted", problem=p_new.id, vectors=len(p_new))

    clustering = leiden_cluster(new.graph, cfg.resolution, cfg.seed, restarts=cfg.leiden_restarts)
    parents = _inherit(repo.clustering, repo.models, clustering)
    models = {}
    for cid, members in sorted(clustering.clusters.items()):
        parent = parents[cid]
        if parent is not None:
            pm = repo.models[parent]
            models[cid] = dataclasses.replace(pm, cluster_id=cid, members=list(members),
                                              trained_on=list(pm.trained_on))
    retired = sorted(set(repo.models) - {p for p in parents.values() if p is not None})
    for oid in retired:
        new.history.append({"seq": new.audit[-1]["seq"] + 1, "cluster_id": oid,
                            "model": repo.models[oid].model})
    new.clustering = clustering
    new.models = models
    new.log("reclustered", clusters=len(clustering.clusters), quality=clustering.quality,
            inherited={str(c): p for c, p in sorted(parents.items())}, retired=retired)

    cid = clustering.assignment[p_new.id]
    members = clustering.clusters[cid]
    sizes = {m: len(new.problems[m]) for m in members}
    cov = coverage(members, new.U, sizes)
    in_u = sorted(m for m in members if m in new.U)
    membership = record_membership(new.problems, clustering)
    n_clusters = len(clustering.clusters)
    fresh = all(m in new.U for m in members)
    retrain = False

    if fresh:
        sizes_pc = [len(m.pc) for m in repo.models.values()]
        budget = max(cfg.b_min, round_half_up(cov * float(np.mean(sizes_pc))))
        res = _train_cluster(new.problems, members, budget, oracle, cfg,
                             derive_seed(cfg.seed, "fresh", p_new.id), membership, n_clusters)
        if cid in models:
            new.history.append({"seq": new.audit[-1]["seq"] + 1, "cluster_id": cid,
                                "model": models[cid].model})
        seq = new.log("fresh_model", cluster_id=cid, budget=budget, spent=res.spent,
                      coverage=cov, trained_on=in_u)
        models[cid] = ClusterModel(cid, list(members), res.model, res.labeled, in_u, seq, seq)
        new.labels_spent += res.spent
        new.T.update(in_u)
        new.U.difference_update(in_u)
        retrain = True
    elif cov > t_cov:
        prev = models[cid]
        budget = retrain_budget(cfg.b_tot, cov, len(prev.pc))
        pairs, X = _pool(new.problems, in_u)
        budget = min(budget, len(pairs))
        if budget > 0:
            res = run_bootstrap_al(pairs, X, budget, oracle,
                                   derive_seed(cfg.seed, "retrain", p_new.id), cfg.al_config,
                                   membership, n_clusters, initial=prev.pc)
            new.history.append({"seq": new.audit[-1]["seq"] + 1, "cluster_id": cid,
                                "model": prev.model})
            used = sorted((set(prev.trained_on) & set(members)) | set(in_u))
            seq = new.log("retrained", cluster_id=cid, coverage=cov, t_cov=t_cov, budget=budget,
                          spent=res.spent, moved_to_T=in_u)
            models[cid] = ClusterModel(cid, list(members), res.model, res.labeled, used,
                                       prev.created_at, seq)
            new.labels_spent += res.spent
            new.T.update(in_u)
            new.U.difference_update(in_u)
            retrain = True
        else:
            new.log("retrain_skipped", cluster_id=cid, coverage=cov, t_cov=t_cov, budget=0)
    else:
        new.log("model_reused", cluster_id=cid, coverage=cov, t_cov=t_cov)

    chosen = models[cid]
    sim = problem_similarity(p_new, chosen.pc.X, cfg.test, cfg.analysis).sim_p
    spent = oracle.queries - asked_before
    new.log("classified", problem=p_new.id, cluster_id=cid, extra_labels=spent)
    report = SolveReport(p_new.id, "cov", cid, sim, retrain, spent, _predict(chosen.model, p_new),
                         cov, fresh)
    return new, report


# -- persistence -------------------------------------------------------------------

def _pc_csv(pc: LabeledSet, names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(ID_COLUMNS) + list(names) + ["label"])
    for (a, b), row, lab in zip(pc.pairs, pc.X, pc.y):
        w.writerow([a.source_id, a.record_id, b.source_id, b.record_id]
                   + [repr(float(x)) for x in row] + ["1" if lab else "0"])
    return buf.getvalue()


def _read_pc(text: str, arity: int, section: str) -> LabeledSet:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or len(rows[0]) != 4 + arity + 1:
        raise CorruptManifest(f"{section}: bad header", section=section)
    pairs, X, y = [], [], []
    for rec in rows[1:]:
        if not rec:
            continue
        if len(rec) != 4 + arity + 1 or rec[-1] not in ("0", "1"):
            raise CorruptManifest(f"{section}: malformed row", section=section)
        pairs.append((RecordRef(rec[0], rec[1]), RecordRef(rec[2], rec[3])))
        try:
            X.append([float(v) for v in rec[4:4 + arity]])
        except ValueError:
            raise CorruptManifest(f"{section}: bad number", section=section) from None
        y.append(rec[-1] == "1")
    if not pairs:
        return LabeledSet.empty(arity)
    return LabeledSet(tuple(pairs), np.array(X), np.array(y, dtype=bool))


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _audit_text(audit) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in audit)


def serialize(repo: Repository) -> dict[str, str]:
    """Archive contents as ``{relative path: text}``."""
    files = {}
    problem_files = {}
    for i, pid in enumerate(sorted(repo.problems)):
        rel = f"problems/p{i:04d}.csv"
        problem_files[pid] = rel
        files[rel] = problem_csv_text(repo.problems[pid])
    model_index = {}
    for cid, m in sorted(repo.models.items()):
        files[f"models/{cid}.model"] = dump_model(m.model)
        files[f"pc/{cid}.csv"] = _pc_csv(m.pc, repo.feature_names)
        model_index[str(cid)] = {
            "members": list(m.members), "trained_on": list(m.trained_on),
            "created_at": m.created_at, "retrained_at": m.retrained_at,
            "model": f"models/{cid}.model", "pc": f"pc/{cid}.csv",
        }
    history = []
    for h in repo.history:
        rel = f"models/history/{h['seq']:06d}-{h['cluster_id']}.model"
        files[rel] = dump_model(h["model"])
        history.append({"seq": h["seq"], "cluster_id": h["cluster_id"], "model": rel})
    files["graph.tsv"] = repo.graph.to_edge_list()
    files["clusters.json"] = _dumps(repo.clustering.to_json())
    files["audit.log"] = _audit_text(repo.audit)
    files["manifest.json"] = _dumps({
        "format": ARCHIVE_FORMAT,
        "tool_version": __version__,
        "config": repo.config.to_dict(),
        "feature_names": list(repo.feature_names),
        "nodes": list(repo.graph.nodes),
        "min_edge_sim": repo.graph.min_edge_sim,
        "problems": problem_files,
        "models": model_index,
        "history": history,
        "T": sorted(repo.T),
        "U": sorted(repo.U),
        "labels_spent": repo.labels_spent,
    })
    return files


def fingerprint(repo: Repository) -> str:
    h = hashlib.sha256()
    for rel, text in sorted(serialize(repo).items()):
        h.update(rel.encode() + b"\0" + text.encode() + b"\0")
    return h.hexdigest()


def save_repository(repo: Repository, path) -> Path:
    """Write the archive to ``path`` atomically (temp directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    files = serialize(repo)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        for rel, text in files.items():
            target = tmp / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
        if path.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{path.name}.old.", dir=path.parent))
            old.rmdir()
            path.rename(old)
            tmp.rename(path)
            shutil.rmtree(old)
        else:
            tmp.rename(path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def _read(root: Path, rel: str) -> str:
    target = root / rel
    if not target.is_file():
        raise CorruptManifest(f"archive is missing {rel}", section=rel)
    return target.read_text(encoding="utf-8")


def load_repository(path) -> Repository:
    root = Path(path)
    if not (root / "manifest.json").is_file():
        raise MissingFile(f"no repository at {root}", path=str(root))
    try:
        man = json.loads(_read(root, "manifest.json"))
    except json.JSONDecodeError as e:
        raise CorruptManifest(f"manifest.json: {e}", section="manifest.json") from None
    if man.get("tool_version") != __version__ or man.get("format") != ARCHIVE_FORMAT:
        raise VersionMismatch(
            f"archive written by version {man.get('tool_version')} (format {man.get('format')}), "
            f"this is {__version__} (format {ARCHIVE_FORMAT})",
            archive=man.get("tool_version"), tool=__version__)
    try:
        cfg = RepoConfig.from_dict(man["config"])
        names = tuple(man["feature_names"])
        problems = {}
        for pid, rel in man["problems"].items():
            _read(root, rel)
            try:
                problems[pid] = load_problem_csv(root / rel, names)
            except ERError as e:
                raise CorruptManifest(f"{rel}: {e}", section=rel) from None
            if problems[pid].id != pid:
                raise CorruptManifest(f"{rel}: holds {problems[pid].id}, expected {pid}", section=rel)
        try:
            graph = ProblemGraph.from_edge_list(_read(root, "graph.tsv"), man["nodes"],
                                                man["min_edge_sim"])
        except ERError as e:
            raise CorruptManifest(f"graph.tsv: {e}", section="graph.tsv") from None
        graph.problems = {n: problems[n] for n in graph.nodes}
        try:
            clustering = Clustering.from_json(json.loads(_read(root, "clusters.json")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CorruptManifest(f"clusters.json: {e}", section="clusters.json") from None
        models = {}
        for key, entry in man["models"].items():
            cid = int(key)
            try:
                model = load_model(_read(root, entry["model"]))
            except MalformedInput as e:
                raise CorruptManifest(f"{entry['model']}: {e}", section=entry["model"]) from None
            pc = _read_pc(_read(root, entry["pc"]), len(names), entry["pc"])
            models[cid] = ClusterModel(cid, list(entry["members"]), model, pc,
                                       list(entry["trained_on"]), entry["created_at"],
                                       entry["retrained_at"])
        history = []
        for entry in man["history"]:
            try:
                model = load_model(_read(root, entry["model"]))
            except MalformedInput as e:
                raise CorruptManifest(f"{entry['model']}: {e}", section=entry["model"]) from None
            history.append({"seq": entry["seq"], "cluster_id": entry["cluster_id"], "model": model})
        audit = []
        for lineno, line in enumerate(_read(root, "audit.log").splitlines(), start=1):
            try:
                audit.append(json.loads(line))
            except json.JSONDecodeError:
                raise CorruptManifest(f"audit.log line {lineno} is not JSON", section="audit.log") from None
        repo = Repository(problems, graph, clustering, models, set(man["T"]), set(man["U"]), cfg,
                          audit, history, int(man["labels_spent"]))
    except KeyError as e:
        raise CorruptManifest(f"manifest.json lacks {e}", section="manifest.json") from None
    problems_found = repo.violations()
    if problems_found:
        raise CorruptManifest(f"inconsistent archive: {'; '.join(problems_found)}",
                              section="manifest.json")
    return repo
