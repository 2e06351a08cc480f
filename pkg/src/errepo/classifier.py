"""CART decision trees and bagged tree ensembles for match classification.

Model text format (one record per line)::

    ensemble 1
    k <k>
    seed <seed>
    arity <t>
    max_depth <d>
    min_leaf <l>
    max_features <f|none>
    tree <index> <node_count> <tree_seed>
    N <feature> <threshold> <left> <right>
    L <match_probability>
    ...
    end

Floats are written with ``repr`` so a save/load cycle is bit-exact.
Node records are numbered in file order starting at 0 within each tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArityMismatch,
    EmptyTrainingSet,
    InvalidValue,
    MalformedInput,
    SingleClassTrainingSet,
)
from .seeding import derive_seed, rng_for

FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabeledSet:
    """Labeled feature vectors in columnar form."""

    pairs: tuple
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=bool)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] != len(self.pairs):
            raise MalformedInput("pairs, X and y must have matching lengths")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, arity: int) -> "LabeledSet":
        return cls((), np.empty((0, arity)), np.empty(0, dtype=bool))

    @classmethod
    def from_vectors(cls, vectors) -> "LabeledSet":
        vectors = list(vectors)
        if any(v.label is None for v in vectors):
            raise MalformedInput("every vector in a labeled set needs a label")
        arity = len(vectors[0].values) if vectors else 0
        return cls(
            tuple(v.pair for v in vectors),
            np.array([v.values for v in vectors], dtype=np.float64).reshape(len(vectors), arity),
            np.array([v.label for v in vectors], dtype=bool),
        )

    def __len__(self):
        return len(self.pairs)

    @property
    def arity(self) -> int:
        return self.X.shape[1]

    @property
    def n_matches(self) -> int:
        return int(self.y.sum())

    def canonical(self) -> "LabeledSet":
        """Same vectors sorted by pair, so training does not depend on acquisition order."""
        order = sorted(range(len(self.pairs)), key=lambda i: self.pairs[i])
        return LabeledSet(tuple(self.pairs[i] for i in order), self.X[order], self.y[order])

    def extend(self, other: "LabeledSet") -> "LabeledSet":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return LabeledSet(self.pairs + other.pairs, np.vstack([self.X, other.X]),
                          np.concatenate([self.y, other.y]))


@dataclass
class TreeModel:
    """Flat array tree. Leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray
    arity: int
    seed: int = 0
    max_depth: int = 12
    min_leaf: int = 2

    @property
    def node_count(self) -> int:
        return self.feature.size

    def leaf_prob(self, X) -> np.ndarray:
        X = _check_matrix(X, self.arity)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.prob[node]
            go_left = X[rows[inner], feat[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def vote(self, X) -> np.ndarray:
        """Hard match vote; a leaf probability of exactly 0.5 votes match."""
        return self.leaf_prob(X) >= 0.5

    def __eq__(self, other):
        if not isinstance(other, TreeModel):
            return NotImplemented
        return (self.arity == other.arity and self.seed == other.seed
                and self.max_depth == other.max_depth and self.min_leaf == other.min_leaf
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("feature", "threshold", "left", "right", "prob")))


def _check_matrix(X, arity) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != arity:
        raise ArityMismatch(f"expected {arity} features, got {X.shape[1]}",
                            expected=arity, got=X.shape[1])
    if not np.isfinite(X).all():
        raise InvalidValue("feature vectors must be finite")
    return X


def _gini(n_match, n):
    return 2.0 * n_match * (n - n_match) / (n * n)


def _best_split(X, y, idx, features, min_leaf):
    """Lowest weighted Gini split of ``idx`` as (score, feature, threshold), or None."""
    n = idx.size
    yi = y[idx].astype(np.float64)
    total = yi.sum()
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    best = None
    for f in features:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        ml = np.cumsum(yi[order])[:-1]
        mr = total - ml
        score = (2.0 * ml * (nl - ml) / nl + 2.0 * mr * (nr - mr) / nr) / n
        valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[0]:
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2.0
            if thr >= hi:
                thr = lo
            best = (float(score[i]), int(f), float(thr))
    return best


def train_tree(data, seed: int = 0, max_depth: int = 12, min_leaf: int = 2,
               max_features: int | None = None) -> TreeModel:
    """Grow a CART tree with Gini impurity.

    Splits are searched over midpoints of adjacent distinct values; a
    split is only taken when it strictly lowers impurity and leaves at
    least ``min_leaf`` samples on each side. Ties go to the lowest
    feature index and then the lowest threshold.

    ``data`` is a :class:`LabeledSet` or an ``(X, y)`` tuple.
    """
    X, y = (data.X, data.y) if isinstance(data, LabeledSet) else data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    if X.shape[0] == 0:
        raise EmptyTrainingSet("cannot train on an empty set")
    arity = X.shape[1]
    rng = rng_for(seed, "features") if max_features else None
    feature, threshold, left, right, prob = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        prob.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = idx.size
        n_match = int(y[idx].sum())
        prob[node] = n_match / n
        if depth >= max_depth or n_match in (0, n) or n < 2 * min_leaf:
            continue
        if max_features and max_features < arity:
            feats = np.sort(rng.choice(arity, max_features, replace=False))
        else:
            feats = range(arity)
        split = _best_split(X, y, idx, feats, min_leaf)
        if split is None or split[0] >= _gini(n_match, n) - 1e-12:
            continue
        _, f, thr = split
        mask = X[idx, f] <= thr
        l_node, r_node = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = l_node, r_node
        # push right first so the left subtree is numbered first
        stack.append((r_node, idx[~mask], depth + 1))
        stack.append((l_node, idx[mask], depth + 1))
    return TreeModel(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(prob, dtype=np.float64), arity, int(seed), max_depth, min_leaf,
    )


@dataclass
class EnsembleModel:
    trees: list
    k: int
    seed: int
    arity: int
    max_depth: int = 12
    min_leaf: int = 2
    max_features: int | None = None
    tree_seeds: list = field(default_factory=list)

    def votes(self, X) -> np.ndarray:
        """Number of trees voting match for each row of ``X``."""
        X = _check_matrix(X, self.arity)
        counts = np.zeros(X.shape[0], dtype=np.int64)
        for tree in self.trees:
            counts += tree.vote(X)
        return counts

    def match_fraction(self, X) -> np.ndarray:
        return self.votes(X) / self.k

    def predict(self, X) -> np.ndarray:
        """Match decision per row; a fraction of exactly 0.5 classifies as match."""
        return self.match_fraction(X) >= 0.5

    def __eq__(self, other):
        if not isinstance(other, EnsembleModel):
            return NotImplemented
        return dump_model(self) == dump_model(other)


def bootstrap_indices(n: int, seed: int, index: int) -> np.ndarray:
    return rng_for(seed, "bootstrap", index).integers(0, n, n)


def train_ensemble(data, k: int = 100, seed: int = 0, max_depth: int = 12, min_leaf: int = 2,
                   max_features: int | None = None, allow_single_class: bool = False) -> EnsembleModel:
    """Train ``k`` trees, each on an n-sized bootstrap resample of ``data``.

    Tree ``i`` uses resample stream ``(seed, "bootstrap", i)`` and tree
    seed ``derive_seed(seed, "tree", i)``.
    """
    X, y = (data.X, data.y) if isinstance(data, LabeledSet) else data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.shape[0] == 0:
        raise EmptyTrainingSet("cannot train on an empty set")
    if not allow_single_class and (y.all() or not y.any()):
        raise SingleClassTrainingSet(
            f"training set has only {'matches' if y.all() else 'non-matches'}",
            n=int(X.shape[0]))
    n = X.shape[0]
    trees, seeds = [], []
    for i in range(k):
        idx = bootstrap_indices(n, seed, i)
        tseed = derive_seed(seed, "tree", i)
        trees.append(train_tree((X[idx], y[idx]), tseed, max_depth, min_leaf, max_features))
        seeds.append(tseed)
    return EnsembleModel(trees, k, int(seed), X.shape[1], max_depth, min_leaf, max_features, seeds)


def predict_match_fraction(model: EnsembleModel, w) -> float:
    """Fraction of trees voting match for one vector (FeatureVector or sequence)."""
    values = getattr(w, "values", w)
    return float(model.match_fraction(np.asarray(values, dtype=np.float64).reshape(1, -1))[0])


def dump_model(model: EnsembleModel) -> str:
    lines = [
        f"ensemble {FORMAT_VERSION}",
        f"k {model.k}",
        f"seed {model.seed}",
        f"arity {model.arity}",
        f"max_depth {model.max_depth}",
        f"min_leaf {model.min_leaf}",
        f"max_features {model.max_features if model.max_features else 'none'}",
    ]
    for i, tree in enumerate(model.trees):
        lines.append(f"tree {i} {tree.node_count} {tree.seed}")
        for j in range(tree.node_count):
            if tree.feature[j] < 0:
                lines.append(f"L {float(tree.prob[j])!r}")
            else:
                lines.append(f"N {int(tree.feature[j])} {float(tree.threshold[j])!r} "
                             f"{int(tree.left[j])} {int(tree.right[j])}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _header(lines, pos, name, conv=int):
    parts = lines[pos].split()
    if len(parts) != 2 or parts[0] != name:
        raise MalformedInput(f"line {pos + 1}: expected '{name} <value>'")
    if conv is None:
        return None if parts[1] == "none" else int(parts[1])
    return conv(parts[1])


def load_model(text: str) -> EnsembleModel:
    """Parse the text format written by :func:`dump_model`."""
    lines = text.splitlines()
    try:
        if not lines or lines[0] != f"ensemble {FORMAT_VERSION}":
            raise MalformedInput("missing ensemble header")
        k = _header(lines, 1, "k")
        seed = _header(lines, 2, "seed")
        arity = _header(lines, 3, "arity")
        max_depth = _header(lines, 4, "max_depth")
        min_leaf = _header(lines, 5, "min_leaf")
        max_features = _header(lines, 6, "max_features", None)
        pos = 7
        trees, seeds = [], []
        for i in range(k):
            parts = lines[pos].split()
            if len(parts) != 4 or parts[0] != "tree" or int(parts[1]) != i:
                raise MalformedInput(f"line {pos + 1}: expected 'tree {i} <nodes> <seed>'")
            count, tseed = int(parts[2]), int(parts[3])
            pos += 1
            feat, thr, lft, rgt, prob = [], [], [], [], []
            for j in range(count):
                rec = lines[pos].split()
                pos += 1
                if rec[0] == "L" and len(rec) == 2:
                    p = float(rec[1])
                    if not 0.0 <= p <= 1.0:
                        raise MalformedInput(f"line {pos}: leaf probability {p} outside [0, 1]")
                    feat.append(-1); thr.append(0.0); lft.append(-1); rgt.append(-1); prob.append(p)
                elif rec[0] == "N" and len(rec) == 5:
                    f, t, l, r = int(rec[1]), float(rec[2]), int(rec[3]), int(rec[4])
                    if not (0 <= f < arity and 0 <= l < count and 0 <= r < count and l > j and r > j):
                        raise MalformedInput(f"line {pos}: invalid split node")
                    feat.append(f); thr.append(t); lft.append(l); rgt.append(r); prob.append(0.0)
                else:
                    raise MalformedInput(f"line {pos}: unknown node record")
            trees.append(TreeModel(
                np.array(feat, dtype=np.int64), np.array(thr, dtype=np.float64),
                np.array(lft, dtype=np.int64), np.array(rgt, dtype=np.int64),
                np.array(prob, dtype=np.float64), arity, tseed, max_depth, min_leaf))
            seeds.append(tseed)
        if lines[pos] != "end" or pos + 1 != len(lines):
            raise MalformedInput(f"line {pos + 1}: expected 'end'")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MalformedInput):
            raise
        raise MalformedInput(f"truncated or unreadable model: {exc}") from None
    return EnsembleModel(trees, k, seed, arity, max_depth, min_leaf, max_features, seeds)


def gini(y) -> float:
    y = np.asarray(y, dtype=bool)
    return _gini(int(y.sum()), y.size) if y.size else 0.0

