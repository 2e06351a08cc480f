"""Per-feature similarity distributions and two-sample distance tests.

Three univariate tests compare the distribution of one similarity
feature between two ER problems:

* ``ks``  - Kolmogorov-Smirnov statistic on exact step CDFs,
* ``wd``  - summed absolute CDF difference on a shared grid over [0, 1],
* ``psi`` - population stability index over equal-width bins.

Distances become similarities in [0, 1] and are averaged with weights
proportional to the mean per-feature standard deviation of the two
problems, giving the problem similarity ``sim_p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArityMismatch, EmptyDistribution, InvalidGrid, NegativeDistance


class DistTest(str, Enum):
    KS = "ks"
    WD = "wd"
    PSI = "psi"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value == value.lower():
                    return member
        return None


@dataclass(frozen=True)
class AnalysisConfig:
    test: DistTest = DistTest.KS
    wd_grid: int = 101
    psi_bins: int = 100
    psi_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "test", DistTest(self.test))
        if self.wd_grid < 2:
            raise InvalidGrid(f"wd_grid must be >= 2, got {self.wd_grid}", m=self.wd_grid)
        if self.psi_bins < 2:
            raise InvalidGrid(f"psi_bins must be >= 2, got {self.psi_bins}", bins=self.psi_bins)
        if self.psi_eps < 0:
            raise ValueError("psi_eps must be non-negative")


def unit_grid(m: int) -> np.ndarray:
    """Points i/(m-1), each correctly rounded (linspace's i*step can be off by an ulp)."""
    return np.arange(m) / (m - 1)


class FeatureDistribution:
    """Sorted sample of one feature with lazily cached grid CDFs and bin shares."""

    __slots__ = ("feature_index", "sorted_values", "std", "_cache")

    def __init__(self, values, feature_index: int = 0, presorted: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("feature sample must be one-dimensional")
        if arr.size == 0:
            raise EmptyDistribution("empty feature sample", feature_index=feature_index)
        if not presorted:
            arr = np.sort(arr)
        arr.setflags(write=False)
        self.feature_index = feature_index
        self.sorted_values = arr
        self.std = float(arr.std())
        self._cache = {}

    def __len__(self):
        return self.sorted_values.size

    def cdf_at(self, x) -> np.ndarray:
        return np.searchsorted(self.sorted_values, x, side="right") / self.sorted_values.size

    def grid_cdf(self, m: int) -> np.ndarray:
        key = ("cdf", m)
        if key not in self._cache:
            self._cache[key] = self.cdf_at(unit_grid(m))
        return self._cache[key]

    def bin_proportions(self, bins: int, eps: float) -> np.ndarray:
        key = ("bins", bins, eps)
        if key not in self._cache:
            # edges are i/bins exactly; the last bin is closed on the right
            edges = np.arange(bins + 1) / bins
            idx = np.searchsorted(edges, self.sorted_values, side="right") - 1
            idx = np.minimum(idx, bins - 1)
            prop = np.bincount(idx, minlength=bins) / self.sorted_values.size
            self._cache[key] = (prop + eps) / (1.0 + bins * eps)
        return self._cache[key]


@dataclass(frozen=True)
class EmpiricalCDF:
    grid: np.ndarray
    cdf_values: np.ndarray


def empirical_cdf(dist: FeatureDistribution, m: int = 101) -> EmpiricalCDF:
    if m < 2:
        raise InvalidGrid(f"grid size must be >= 2, got {m}", m=m)
    return EmpiricalCDF(unit_grid(m), dist.grid_cdf(m))


class ProblemProfile:
    """Per-feature distributions of a vector matrix (one ER problem or a training set)."""

    __slots__ = ("features",)

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0:
            raise EmptyDistribution("profile needs a non-empty (n, t) matrix")
        self.features = tuple(FeatureDistribution(values[:, f], f) for f in range(values.shape[1]))

    @property
    def arity(self):
        return len(self.features)

    @property
    def stds(self):
        return [d.std for d in self.features]


def profile_of(obj) -> ProblemProfile:
    """Profile for an ERProblem (cached on the instance), a profile, or a raw matrix."""
    if isinstance(obj, ProblemProfile):
        return obj
    cache = getattr(obj, "__dict__", None)
    if cache is not None and hasattr(obj, "values"):
        prof = cache.get("_profile")
        if prof is None:
            prof = cache["_profile"] = ProblemProfile(obj.values)
        return prof
    return ProblemProfile(obj)


def _as_dist(x) -> FeatureDistribution:
    return x if isinstance(x, FeatureDistribution) else FeatureDistribution(x)


def ks_statistic(a, b) -> float:
    """Supremum of |F_a - F_b| over the pooled sample points."""
    a, b = _as_dist(a), _as_dist(b)
    pooled = np.concatenate([a.sorted_values, b.sorted_values])
    return float(np.max(np.abs(a.cdf_at(pooled) - b.cdf_at(pooled))))


def wasserstein_distance(a, b, m: int = 101) -> tuple[float, float]:
    """Summed CDF difference on an m-point grid over [0, 1].

    Returns ``(raw, raw / m)``; the normalized value lies in [0, 1].
    """
    if m < 2:
        raise InvalidGrid(f"grid size must be >= 2, got {m}", m=m)
    a, b = _as_dist(a), _as_dist(b)
    raw = float(np.sum(np.abs(a.grid_cdf(m) - b.grid_cdf(m))))
    return raw, raw / m


def psi(a, b, bins: int = 100, eps: float = 1e-6) -> float:
    """Population stability index with additive smoothing of bin shares."""
    if bins < 2:
        raise InvalidGrid(f"bins must be >= 2, got {bins}", bins=bins)
    a, b = _as_dist(a), _as_dist(b)
    p = a.bin_proportions(bins, eps)
    q = b.bin_proportions(bins, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        # (p - q) * (ln p - ln q) is bitwise symmetric under swapping p and q
        terms = (p - q) * (np.log(p) - np.log(q))
    terms = np.where(p == q, 0.0, terms)
    return float(np.sum(terms))


def distance_to_similarity(test, value: float) -> float:
    """Map a distance to [0, 1]: 1 - d for KS and normalized WD, exp(-d) for PSI."""
    test = DistTest(test)
    if not value >= 0:
        raise NegativeDistance(f"distance must be >= 0, got {value}", value=value)
    if test is DistTest.PSI:
        return math.exp(-value)
    return min(1.0, max(0.0, 1.0 - value))


def feature_distance(test, a: FeatureDistribution, b: FeatureDistribution,
                     cfg: AnalysisConfig | None = None) -> float:
    cfg = cfg or AnalysisConfig()
    test = DistTest(test)
    if test is DistTest.KS:
        return ks_statistic(a, b)
    if test is DistTest.WD:
        return wasserstein_distance(a, b, cfg.wd_grid)[1]
    return psi(a, b, cfg.psi_bins, cfg.psi_eps)


@dataclass(frozen=True)
class ProblemSimilarity:
    per_feature_distance: tuple[float, ...]
    per_feature_similarity: tuple[float, ...]
    weights: tuple[float, ...]
    sim_p: float


def problem_similarity(p, q, test=None, cfg: AnalysisConfig | None = None) -> ProblemSimilarity:
    """Std-weighted aggregate similarity between two problems (or profiles)."""
    cfg = cfg or AnalysisConfig()
    test = DistTest(test or cfg.test)
    pp, pq = profile_of(p), profile_of(q)
    if pp.arity != pq.arity:
        raise ArityMismatch(f"arity {pp.arity} vs {pq.arity}", expected=pp.arity, got=pq.arity)
    dists = [feature_distance(test, a, b, cfg) for a, b in zip(pp.features, pq.features)]
    sims = [distance_to_similarity(test, d) for d in dists]
    raw = [(a.std + b.std) / 2.0 for a, b in zip(pp.features, pq.features)]
    if math.fsum(raw) <= 0.0:
        raw = [1.0] * len(raw)
    total = math.fsum(raw)
    sim_p = math.fsum(w * s for w, s in zip(raw, sims)) / total
    return ProblemSimilarity(
        tuple(dists), tuple(sims), tuple(w / total for w in raw), min(1.0, max(0.0, sim_p))
    )
