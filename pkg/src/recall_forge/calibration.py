"""Recall-targeted threshold rules, bootstrap variance, IVW fusion and the
min-of-K ensemble.

All rules work on the descending-sorted scores of labelled positives. A rule
picks a rank k* among those positives; the threshold is the k*-th highest
positive score, so every pair scoring at or above it is retained.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .special import beta_inv_cdf, normal_ppf, student_t_ppf

ZERO_VARIANCE = 0.0


class RuleKind(enum.Enum):
    CLOPPER_PEARSON = "clopper_pearson"
    JEFFREYS = "jeffreys"
    WILSON = "wilson"
    EXACT_QUANTILE = "exact_quantile"


RULES = tuple(RuleKind)
LOWER_BOUND_RULES = (RuleKind.CLOPPER_PEARSON, RuleKind.JEFFREYS, RuleKind.WILSON)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationSample:
    positive_scores: np.ndarray
    negative_scores: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        pos = np.asarray(self.positive_scores, dtype=np.float64)
        if pos.size > 1 and np.any(np.diff(pos) > 0):
            raise CalibrationError("positive scores must be sorted in descending order")
        object.__setattr__(self, "positive_scores", pos)
        object.__setattr__(self, "negative_scores", np.asarray(self.negative_scores, dtype=np.float64))

    @classmethod
    def from_labeled(cls, scores, labels) -> CalibrationSample:
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=bool)
        pos = np.sort(scores[labels])[::-1]
        return cls(pos.copy(), scores[~labels])

    @property
    def n(self) -> int:
        return int(self.positive_scores.size)


def lower_bound(rule: RuleKind, k: int, n: int, alpha: float) -> float:
    """One-sided (1 - alpha) lower confidence bound on a binomial proportion k/n."""
    if n < 1:
        raise CalibrationError(f"n must be >= 1, got {n}")
    if not 0 <= k <= n:
        raise CalibrationError(f"k must lie in [0, n], got k={k}, n={n}")
    if rule is RuleKind.CLOPPER_PEARSON:
        if k == 0:
            return 0.0
        return beta_inv_cdf(alpha, k, n - k + 1)
    if rule is RuleKind.JEFFREYS:
        return beta_inv_cdf(alpha, k + 0.5, n - k + 0.5)
    if rule is RuleKind.WILSON:
        z = normal_ppf(1.0 - alpha)
        r = k / n
        z2 = z * z
        centre = r + z2 / (2 * n)
        radius = z * math.sqrt(r * (1.0 - r) / n + z2 / (4 * n * n))
        return max(0.0, (centre - radius) / (1.0 + z2 / n))
    raise CalibrationError(f"{rule} is not a lower-bound rule")


@lru_cache(maxsize=4096)
def critical_rank(rule: RuleKind, n: int, target: float, alpha: float) -> int | None:
    """Smallest k in 1..n with lower_bound(rule, k, n, alpha) >= target, or None.

    Bisection relies on L_k being non-decreasing in k.
    """
    if lower_bound(rule, n, n, alpha) < target:
        return None
    lo, hi = 1, n
    while lo < hi:
        mid = (lo + hi) // 2
        if lower_bound(rule, mid, n, alpha) >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def quantile_rank(n: int, target: float) -> int:
    """Ascending rank ceil((1 - target) * n), clamped to [1, n]."""
    # the 1e-9 guard keeps products like (1 - 0.7) * 10 from rounding up a rank
    r = math.ceil((1.0 - target) * n - 1e-9)
    return min(max(r, 1), n)


def quantile_threshold(positive_scores_desc, target: float) -> float:
    p = np.asarray(positive_scores_desc, dtype=np.float64)
    if p.size == 0:
        raise CalibrationError("no positive scores")
    r = quantile_rank(p.size, target)
    return float(p[p.size - r])


@dataclass(frozen=True)
class Threshold:
    tau: float
    rank: int  # 1-based position among positives sorted descending
    attainable: bool


def _descending_rank(rule: RuleKind, n: int, target: float, alpha: float) -> tuple[int, bool]:
    if rule is RuleKind.EXACT_QUANTILE:
        return n - quantile_rank(n, target) + 1, True
    k = critical_rank(rule, n, float(target), float(alpha))
    if k is None:
        return n, False
    return k, True


def threshold_for_target(rule: RuleKind, sample: CalibrationSample, target: float, alpha: float) -> Threshold:
    if sample.n == 0:
        raise CalibrationError("calibration sample has no positives")
    rank, ok = _descending_rank(rule, sample.n, target, alpha)
    return Threshold(float(sample.positive_scores[rank - 1]), rank, ok)


@dataclass
class ThresholdEstimate:
    rule: RuleKind
    mean: float
    variance: float
    samples: np.ndarray
    attainable: bool = True

    def to_dict(self) -> dict:
        return {
            "rule": self.rule.value,
            "mean": self.mean,
            "variance": self.variance,
            "attainable": self.attainable,
        }


def bootstrap_thresholds(
    sample: CalibrationSample,
    rule: RuleKind,
    target: float,
    alpha: float,
    n_boot: int = 200,
    seed: int = 0,
) -> ThresholdEstimate:
    """Resample the positives with replacement and recompute the rule each time.

    The rank chosen by a rule depends only on n, so each replicate reduces to
    an order statistic of the resampled scores.
    """
    n = sample.n
    if n < 2 or n_boot < 2:
        raise CalibrationError(f"bootstrap needs n >= 2 and B >= 2, got n={n}, B={n_boot}")
    rank, ok = _descending_rank(rule, n, target, alpha)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_boot, n))
    draws = sample.positive_scores[idx]
    taus = np.partition(draws, n - rank, axis=1)[:, n - rank]
    if taus.min() == taus.max():
        return ThresholdEstimate(rule, float(taus[0]), 0.0, taus, ok)
    return ThresholdEstimate(rule, float(taus.mean()), float(taus.var(ddof=1)), taus, ok)


def ivw_weights(variances) -> np.ndarray:
    """Normalised inverse-variance weights.

    Zero variances take all the weight, shared equally among them; this is
    the limit of substituting a vanishing epsilon for each zero.
    """
    v = np.asarray(variances, dtype=np.float64)
    if v.size == 0:
        raise CalibrationError("no estimates to fuse")
    zero = v <= ZERO_VARIANCE
    if zero.any():
        return zero / zero.sum()
    inv = v.min() / v  # scaled so tiny variances cannot overflow
    return inv / inv.sum()


def ivw_fuse(estimates: Sequence[ThresholdEstimate]) -> float:
    means = np.array([e.mean for e in estimates], dtype=np.float64)
    w = ivw_weights([e.variance for e in estimates])
    fused = float(np.dot(w, means))
    return min(max(fused, float(means.min())), float(means.max()))


def ensemble_threshold(values, mode: str = "min") -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise CalibrationError("no subsample thresholds")
    if mode == "min":
        return float(v.min())
    if mode == "median":
        return float(np.median(v))
    raise CalibrationError(f"unknown ensemble mode {mode!r}")


def student_t_ci(values, center: float, level: float = 0.90) -> tuple[float, float]:
    """Interval center +/- t_{K-1,(1+level)/2} * sqrt(sum (v - center)^2 / (K (K-1))).

    Deviations are taken from ``center`` (the ensemble threshold), not from
    the sample mean.
    """
    v = np.asarray(values, dtype=np.float64)
    k = v.size
    if k < 2:
        raise CalibrationError("confidence interval needs at least two subsamples")
    half = student_t_ppf(0.5 + level / 2.0, k - 1) * math.sqrt(float(np.sum((v - center) ** 2)) / (k * (k - 1)))
    return center - half, center + half


def derive_seed(base: int, *path: int) -> int:
    """Independent 64-bit seed for a (rule, subsample, ...) coordinate."""
    return int(np.random.SeedSequence([int(base), *map(int, path)]).generate_state(1, np.uint64)[0])


@dataclass
class SubsampleFusion:
    n: int
    estimates: list[ThresholdEstimate]
    weights: np.ndarray
    tau_ens: float

    @property
    def attainable(self) -> bool:
        return all(e.attainable for e in self.estimates)

    def to_dict(self) -> dict:
        return {
            "n_positives": self.n,
            "rules": [e.to_dict() for e in self.estimates],
            "weights": [float(w) for w in self.weights],
            "tau_ens": self.tau_ens,
            "attainable": self.attainable,
        }


def fuse_subsample(
    sample: CalibrationSample,
    target: float,
    alpha: float,
    n_boot: int,
    seed: int,
    subsample_index: int = 0,
    rules: Sequence[RuleKind] = RULES,
) -> SubsampleFusion:
    estimates = [
        bootstrap_thresholds(sample, rule, target, alpha, n_boot, derive_seed(seed, i, subsample_index))
        for i, rule in enumerate(rules)
    ]
    return SubsampleFusion(sample.n, estimates, ivw_weights([e.variance for e in estimates]), ivw_fuse(estimates))


@dataclass
class EnsembleResult:
    per_subsample: list[float]
    final_tau: float
    ci_low: float | None
    ci_high: float | None
    alpha: float
    target: float
    mode: str
    subsamples: list[SubsampleFusion]

    @property
    def attainable(self) -> bool:
        return all(s.attainable for s in self.subsamples)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "alpha": self.alpha,
            "ensemble": self.mode,
            "final_tau": self.final_tau,
            "ci": None if self.ci_low is None else [self.ci_low, self.ci_high],
            "per_subsample_tau": list(self.per_subsample),
            "attainable": self.attainable,
            "subsamples": [s.to_dict() for s in self.subsamples],
        }


def calibrate_ensemble(
    samples: Sequence[CalibrationSample],
    target: float,
    alpha: float = 0.10,
    n_boot: int = 200,
    seed: int = 2025,
    mode: str = "min",
    level: float = 0.90,
) -> EnsembleResult:
    """Bootstrap + IVW per subsample, then combine the K fused thresholds."""
    if not samples:
        raise CalibrationError("no calibration subsamples")
    fused = [fuse_subsample(s, target, alpha, n_boot, seed, k) for k, s in enumerate(samples)]
    per = [f.tau_ens for f in fused]
    tau = ensemble_threshold(per, mode)
    lo = hi = None
    if len(per) >= 2:
        lo, hi = student_t_ci(per, tau, level)
    return EnsembleResult(per, tau, lo, hi, alpha, target, mode, fused)
