"""Domain types, dataset ingestion and the source-pair split.

Feature files are UTF-8 CSV with a header row::

    left_source,left_id,right_source,right_id,f_1,...,f_t

Ground truth lives in a separate file::

    left_source,left_id,right_source,right_id,label

A dataset is described by a JSON manifest::

    {"name": ..., "feature_names": [...],
     "problems": [{"source_a": ..., "source_b": ..., "path": ...}, ...],
     "oracle_path": ...}

Paths in the manifest are resolved relative to the manifest's directory.
An ``"format": "almser"`` manifest switches the problem files to the
single-table layout ``source_id,target_id,<features>,label`` where each
id is ``<source><sep><record>`` (``"id_separator"``, default ``"_"``).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    ArityMismatch,
    DuplicatePair,
    DuplicateProblem,
    MalformedInput,
    MissingFile,
    TooFewProblems,
    ValueOutOfRange,
)
from .seeding import rng_for

logger = logging.getLogger(__name__)

ID_COLUMNS = ("left_source", "left_id", "right_source", "right_id")
ALMSER_ID_COLUMNS = ("source_id", "target_id")


@dataclass(frozen=True, order=True)
class RecordRef:
    source_id: str
    record_id: str

    def __post_init__(self):
        if not self.source_id or not self.record_id:
            raise MalformedInput("empty source_id or record_id",
                                 source_id=self.source_id, record_id=self.record_id)

    def __str__(self):
        return f"{self.source_id}:{self.record_id}"


def canonical_pair(a: RecordRef, b: RecordRef) -> tuple[RecordRef, RecordRef]:
    """Order a record pair so that (a, b) and (b, a) name the same pair."""
    return (a, b) if a <= b else (b, a)


def problem_id(source_a: str, source_b: str) -> str:
    a, b = sorted((source_a, source_b))
    return f"{a}|{b}"


@dataclass(frozen=True)
class FeatureVector:
    left: RecordRef
    right: RecordRef
    values: tuple[float, ...]
    label: bool | None = None

    @property
    def pair(self) -> tuple[RecordRef, RecordRef]:
        return (self.left, self.right)


class ERProblem:
    """All similarity feature vectors for one (normalized) source pair.

    Storage is columnar: record ids in two tuples plus an ``(n, t)``
    float64 matrix. The matrix is read-only so instances can be shared.
    """

    def __init__(self, source_pair, left_ids, right_ids, values, feature_names):
        a, b = source_pair
        if a > b:
            raise MalformedInput("source pair not normalized", source_pair=list(source_pair))
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise MalformedInput("values must be a 2-d matrix")
        if len(left_ids) != len(right_ids) or len(left_ids) != values.shape[0]:
            raise MalformedInput("id columns and value rows differ in length")
        if values.shape[0] == 0:
            raise MalformedInput("ER problem has no vectors", problem=f"{a}|{b}")
        if values.shape[1] != len(feature_names):
            raise ArityMismatch("value columns differ from feature names",
                                problem=f"{a}|{b}", expected=len(feature_names),
                                got=values.shape[1])
        values.setflags(write=False)
        self.source_pair = (a, b)
        self.left_ids = tuple(left_ids)
        self.right_ids = tuple(right_ids)
        self.values = values
        self.feature_names = tuple(feature_names)

    @classmethod
    def from_vectors(cls, vectors: Iterable[FeatureVector], feature_names):
        """Build a problem from vectors, normalizing pair order and sorting."""
        rows = {}
        pair = None
        for v in vectors:
            left, right = canonical_pair(v.left, v.right)
            this = (left.source_id, right.source_id)
            if pair is None:
                pair = this
            elif this != pair:
                raise MalformedInput("vectors span more than one source pair",
                                     expected=list(pair), got=list(this))
            key = (left.record_id, right.record_id)
            if key in rows:
                raise DuplicatePair("duplicate record pair", left=str(left), right=str(right))
            rows[key] = v.values
        if pair is None:
            raise MalformedInput("ER problem has no vectors")
        keys = sorted(rows)
        return cls(
            pair,
            [k[0] for k in keys],
            [k[1] for k in keys],
            np.array([rows[k] for k in keys], dtype=np.float64).reshape(len(keys), len(feature_names)),
            feature_names,
        )

    @property
    def id(self) -> str:
        return f"{self.source_pair[0]}|{self.source_pair[1]}"

    @property
    def arity(self) -> int:
        return self.values.shape[1]

    @property
    def is_self_pair(self) -> bool:
        return self.source_pair[0] == self.source_pair[1]

    def __len__(self):
        return self.values.shape[0]

    @cached_property
    def pairs(self) -> tuple[tuple[RecordRef, RecordRef], ...]:
        a, b = self.source_pair
        return tuple(
            (RecordRef(a, l), RecordRef(b, r)) for l, r in zip(self.left_ids, self.right_ids)
        )

    @property
    def vectors(self) -> list[FeatureVector]:
        return [
            FeatureVector(l, r, tuple(float(x) for x in row))
            for (l, r), row in zip(self.pairs, self.values)
        ]

    def __repr__(self):
        return f"ERProblem({self.id!r}, n={len(self)}, t={self.arity})"

    def __eq__(self, other):
        if not isinstance(other, ERProblem):
            return NotImplemented
        return (
            self.source_pair == other.source_pair
            and self.left_ids == other.left_ids
            and self.right_ids == other.right_ids
            and self.feature_names == other.feature_names
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


class GroundTruth:
    """Symmetric map from record pairs to match labels."""

    def __init__(self, labels=None):
        self._labels: dict[tuple[RecordRef, RecordRef], bool] = {}
        for (a, b), lab in (labels or {}).items():
            self[a, b] = lab

    def __setitem__(self, pair, label):
        a, b = pair
        self._labels[canonical_pair(a, b)] = bool(label)

    def __getitem__(self, pair):
        a, b = pair
        return self._labels[canonical_pair(a, b)]

    def get(self, pair, default=None):
        a, b = pair
        return self._labels.get(canonical_pair(a, b), default)

    def __contains__(self, pair):
        a, b = pair
        return canonical_pair(a, b) in self._labels

    def __len__(self):
        return len(self._labels)

    def items(self):
        return sorted(self._labels.items())

    def match_count(self):
        return sum(self._labels.values())

    def update(self, other: "GroundTruth"):
        self._labels.update(other._labels)

    def labels_for(self, problem: ERProblem) -> np.ndarray:
        """Label array aligned with ``problem`` rows; raises KeyError on gaps."""
        return np.array([self._labels[canonical_pair(a, b)] for a, b in problem.pairs], dtype=bool)


@dataclass(frozen=True)
class ProblemFile:
    path: Path
    source_a: str | None = None
    source_b: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    feature_names: tuple[str, ...]
    problems: tuple[ProblemFile, ...]
    oracle_path: Path | None = None
    format: str = "pairs"
    id_separator: str = "_"
    base_dir: Path = field(default=Path("."), compare=False)


class LoadedDataset(NamedTuple):
    manifest: DatasetManifest
    problems: list
    oracle: GroundTruth | None


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}", path=str(path))
    return path


def read_manifest(manifest_path) -> DatasetManifest:
    path = _require_file(manifest_path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"manifest is not valid JSON: {exc}", path=str(path)) from None
    base = path.parent
    try:
        entries = tuple(
            ProblemFile(base / p["path"], p.get("source_a"), p.get("source_b"))
            for p in doc["problems"]
        )
        oracle = doc.get("oracle_path")
        return DatasetManifest(
            name=doc["name"],
            feature_names=tuple(doc["feature_names"]),
            problems=entries,
            oracle_path=base / oracle if oracle else None,
            format=doc.get("format", "pairs"),
            id_separator=doc.get("id_separator", "_"),
            base_dir=base,
        )
    except (KeyError, TypeError) as exc:
        raise MalformedInput(f"manifest missing field {exc}", path=str(path)) from None


def _parse_value(raw, path, row, column):
    try:
        v = float(raw)
    except ValueError:
        raise ValueOutOfRange(f"{path}:{row}: column {column!r} is not a number: {raw!r}",
                              path=str(path), row=row, column=column, value=raw) from None
    if not (0.0 <= v <= 1.0):  # also rejects NaN
        raise ValueOutOfRange(f"{path}:{row}: column {column!r} value {raw} outside [0, 1]",
                              path=str(path), row=row, column=column, value=raw)
    return v


def _parse_label(raw, path, row):
    s = raw.strip().lower()
    if s in ("1", "true", "t", "yes", "match"):
        return True
    if s in ("0", "false", "f", "no", "non-match", "nonmatch"):
        return False
    raise MalformedInput(f"{path}:{row}: unreadable label {raw!r}", path=str(path), row=row)


def _split_almser_id(raw, sep, path, row):
    source, found, record = raw.rpartition(sep)
    if not found or not source or not record:
        raise MalformedInput(f"{path}:{row}: id {raw!r} lacks source separator {sep!r}",
                             path=str(path), row=row)
    return RecordRef(source, record)


def _read_rows(path, arity, fmt="pairs", sep="_"):
    """Yield (row_number, left, right, values, label) from one feature file."""
    path = _require_file(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedInput(f"{path}: empty file", path=str(path)) from None
        header = [h.strip() for h in header]
        if fmt == "almser":
            if tuple(header[:2]) != ALMSER_ID_COLUMNS or "label" not in header:
                raise MalformedInput(f"{path}: expected source_id,target_id,...,label header",
                                     path=str(path))
            label_col = header.index("label")
            feat_cols = [i for i in range(2, len(header)) if i != label_col]
        else:
            if tuple(header[:4]) != ID_COLUMNS:
                raise MalformedInput(f"{path}: header must start with {','.join(ID_COLUMNS)}",
                                     path=str(path))
            label_col = None
            feat_cols = list(range(4, len(header)))
        if len(feat_cols) != arity:
            raise ArityMismatch(f"{path}: header has {len(feat_cols)} features, expected {arity}",
                                path=str(path), row=1, expected=arity, got=len(feat_cols))
        for rowno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                got = len(rec) - (len(header) - arity)
                raise ArityMismatch(f"{path}:{rowno}: expected {arity} features, got {got}",
                                    path=str(path), row=rowno, expected=arity, got=got)
            if fmt == "almser":
                left = _split_almser_id(rec[0], sep, path, rowno)
                right = _split_almser_id(rec[1], sep, path, rowno)
                label = _parse_label(rec[label_col], path, rowno)
            else:
                left, right = RecordRef(rec[0], rec[1]), RecordRef(rec[2], rec[3])
                label = None
            values = tuple(_parse_value(rec[i], path, rowno, header[i]) for i in feat_cols)
            yield rowno, left, right, values, label


def _read_file(entry: ProblemFile, manifest: DatasetManifest):
    arity = len(manifest.feature_names)
    out = []
    for rowno, left, right, values, label in _read_rows(
        entry.path, arity, manifest.format, manifest.id_separator
    ):
        if entry.source_a is not None:
            declared = sorted((entry.source_a, entry.source_b))
            if sorted((left.source_id, right.source_id)) != declared:
                raise MalformedInput(
                    f"{entry.path}:{rowno}: pair sources differ from declared {declared}",
                    path=str(entry.path), row=rowno)
        out.append((entry.path, rowno, left, right, values, label))
    return out


def _group(rows, feature_names):
    groups: dict[tuple[str, str], dict] = {}
    labels = GroundTruth()
    for path, rowno, left, right, values, label in rows:
        left, right = canonical_pair(left, right)
        if left == right:
            logger.warning("%s:%d: dropping reflexive pair %s", path, rowno, left)
            continue
        g = groups.setdefault((left.source_id, right.source_id), {})
        key = (left.record_id, right.record_id)
        if key in g:
            raise DuplicatePair(f"{path}:{rowno}: duplicate pair ({left}, {right})",
                                left=str(left), right=str(right), path=str(path), row=rowno)
        g[key] = values
        if label is not None:
            labels[left, right] = label
    problems = []
    for pair in sorted(groups):
        g = groups[pair]
        keys = sorted(g)
        problems.append(ERProblem(
            pair, [k[0] for k in keys], [k[1] for k in keys],
            np.array([g[k] for k in keys], dtype=np.float64), feature_names,
        ))
    return problems, labels


def load_ground_truth(path) -> GroundTruth:
    path = _require_file(path)
    gt = GroundTruth()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if tuple(header) != ID_COLUMNS + ("label",):
            raise MalformedInput(f"{path}: ground truth header must be "
                                 f"{','.join(ID_COLUMNS)},label", path=str(path))
        for rowno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise MalformedInput(f"{path}:{rowno}: expected 5 columns", path=str(path), row=rowno)
            gt[RecordRef(rec[0], rec[1]), RecordRef(rec[2], rec[3])] = _parse_label(rec[4], path, rowno)
    return gt


def load_dataset(manifest_path, threads: int = 1) -> LoadedDataset:
    """Load, validate and group every feature file named by a manifest.

    Problems come back sorted by source pair with rows sorted by
    (left record id, right record id). The oracle is ``None`` when the
    manifest names no ground truth and the files carry no labels.
    """
    manifest = read_manifest(manifest_path)
    for entry in manifest.problems:
        _require_file(entry.path)
    if threads > 1 and len(manifest.problems) > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda e: _read_file(e, manifest), manifest.problems))
    else:
        chunks = [_read_file(e, manifest) for e in manifest.problems]
    rows = [r for chunk in chunks for r in chunk]
    problems, embedded = _group(rows, manifest.feature_names)
    oracle = None
    if manifest.oracle_path is not None:
        oracle = load_ground_truth(manifest.oracle_path)
    if len(embedded):
        oracle = oracle or GroundTruth()
        oracle.update(embedded)
    return LoadedDataset(manifest, problems, oracle)


def load_problem_csv(path, feature_names=None) -> ERProblem:
    """Read a single feature file that holds exactly one source pair."""
    path = _require_file(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    names = tuple(header[4:])
    if feature_names is not None and len(feature_names) != len(names):
        raise ArityMismatch(f"{path}: {len(names)} features, expected {len(feature_names)}",
                            path=str(path), expected=len(feature_names), got=len(names))
    rows = [(path,) + r for r in _read_rows(path, len(names))]
    problems, _ = _group(rows, tuple(feature_names or names))
    if len(problems) != 1:
        raise MalformedInput(f"{path}: expected one source pair, found {len(problems)}",
                             path=str(path))
    return problems[0]


def _fmt(v) -> str:
    return repr(float(v))


def problem_csv_text(problem: ERProblem, labels=None) -> str:
    """One problem in the canonical feature layout.

    With ``labels`` (bool per row) a trailing ``label`` column is added;
    that variant is only used for retained training sets.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    a, b = problem.source_pair
    w.writerow(list(ID_COLUMNS) + list(problem.feature_names) + (["label"] if labels is not None else []))
    for i, (l, r) in enumerate(zip(problem.left_ids, problem.right_ids)):
        row = [a, l, b, r] + [_fmt(x) for x in problem.values[i]]
        if labels is not None:
            row.append("1" if labels[i] else "0")
        w.writerow(row)
    return buf.getvalue()


def write_problem_csv(problem: ERProblem, path, labels=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(problem_csv_text(problem, labels), encoding="utf-8")


def write_ground_truth(gt: GroundTruth, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ID_COLUMNS) + ["label"])
        for (a, b), lab in gt.items():
            w.writerow([a.source_id, a.record_id, b.source_id, b.record_id, "1" if lab else "0"])


def write_almser_csv(problems, oracle: GroundTruth, path, sep="_"):
    """Write problems as one ``source_id,target_id,<features>,label`` table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = problems[0].feature_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ALMSER_ID_COLUMNS) + list(names) + ["label"])
        for p in problems:
            for (l, r), row in zip(p.pairs, p.values):
                w.writerow([f"{l.source_id}{sep}{l.record_id}", f"{r.source_id}{sep}{r.record_id}"]
                           + [_fmt(x) for x in row] + ["True" if oracle[l, r] else "False"])


def write_dataset(directory, name, problems, oracle: GroundTruth | None = None) -> Path:
    """Write problems (one CSV each), ground truth and a manifest; return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, p in enumerate(problems):
        rel = f"problems/p{i:04d}.csv"
        write_problem_csv(p, directory / rel)
        entries.append({"source_a": p.source_pair[0], "source_b": p.source_pair[1], "path": rel})
    doc = {"name": name, "feature_names": list(problems[0].feature_names), "problems": entries,
           "oracle_path": None}
    if oracle is not None:
        write_ground_truth(oracle, directory / "ground_truth.csv")
        doc["oracle_path"] = "ground_truth.csv"
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def validate_arity(problems) -> int:
    """Return the shared feature arity, or raise ArityMismatch naming the odd one out."""
    if not problems:
        raise TooFewProblems("no problems to validate")
    expected = problems[0].arity
    for p in problems[1:]:
        if p.arity != expected:
            raise ArityMismatch(f"problem {p.id} has arity {p.arity}, expected {expected}",
                                problem=p.id, expected=expected, got=p.arity)
    return expected


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_by_source_pair(problems, ratio_init: float, seed: int):
    """Assign whole problems to an initial and an unsolved set.

    The shuffle is seeded and operates on problems sorted by id, so the
    split does not depend on input order. Both sides keep at least one
    problem.
    """
    if not 0.0 < ratio_init < 1.0:
        raise ValueError(f"ratio_init must lie in (0, 1), got {ratio_init}")
    if len(problems) < 2:
        raise TooFewProblems(f"need at least 2 problems to split, got {len(problems)}",
                             got=len(problems))
    ordered = sorted(problems, key=lambda p: p.id)
    ids = [p.id for p in ordered]
    if len(set(ids)) != len(ids):
        raise DuplicateProblem("duplicate problem ids in split input")
    n = len(ordered)
    n_init = min(max(round_half_up(ratio_init * n), 1), n - 1)
    perm = rng_for(seed, "split").permutation(n)
    chosen = set(perm[:n_init].tolist())
    initial = [p for i, p in enumerate(ordered) if i in chosen]
    unsolved = [p for i, p in enumerate(ordered) if i not in chosen]
    return initial, unsolved
