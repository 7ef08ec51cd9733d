# lpf/core/prob.py

"""
Probability value types and elementary information / distance measures.

All entropies and divergences are reported in bits.
"""
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats

from .errors import DegenerateWeightsError, DimensionError, NormalizationError, SupportError

SUM_TOLERANCE = 1e-9

# normalize() leaves an input alone when it already sums to one this closely,
# which makes it exactly idempotent
_IDENTITY_TOLERANCE = 1e-12


def _frozen(values: ArrayLike) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


# ============= TYPES =============


@dataclass(frozen=True, eq=False)
class LabelDist:
    """Probability vector over a finite label space"""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise DimensionError(f"LabelDist needs a non-empty vector, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise NormalizationError(f"LabelDist entries must be finite and >= 0: {probs}")
        if abs(math.fsum(probs) - 1.0) > SUM_TOLERANCE:
            raise NormalizationError(f"LabelDist entries sum to {math.fsum(probs)!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def num_labels(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.num_labels

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __repr__(self) -> str:
        return f"LabelDist({np.array2string(self.probs, precision=4)})"

    @classmethod
    def uniform(cls, num_labels: int) -> "LabelDist":
        return cls(np.full(num_labels, 1.0 / num_labels))


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Diagonal-covariance Gaussian over the latent space, one per evidence item"""

    mean: np.ndarray
    var: np.ndarray
    source_id: Union[int, str] = 0

    def __post_init__(self):
        mean = _frozen(self.mean)
        var = _frozen(self.var)
        if mean.ndim != 1 or mean.shape != var.shape:
            raise DimensionError(f"mean {mean.shape} and var {var.shape} must be equal-length vectors")
        if not np.all(np.isfinite(mean)):
            raise NormalizationError("posterior mean must be finite")
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise NormalizationError("posterior variances must be finite and > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @property
    def frobenius(self) -> float:
        """Frobenius norm of the diagonal covariance"""
        return float(np.linalg.norm(self.var))

    def with_mean(self, mean: ArrayLike) -> "GaussianPosterior":
        return GaussianPosterior(mean=mean, var=self.var, source_id=self.source_id)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Per-item confidence weights in [0, 1]"""

    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        weights = _frozen(self.weights)
        if weights.ndim != 1:
            raise DimensionError(f"weights must be a vector, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0) or np.any(weights > 1):
            raise ValueError(f"weights must lie in [0, 1]: {weights}")
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return int(self.weights.size)

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


# ============= OPERATIONS =============


def normalize(raw: ArrayLike) -> LabelDist:
    """
    Divide a non-negative vector by its sum
    """
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise NormalizationError(f"expected a non-empty vector, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NormalizationError(f"non-finite entries: {values}")
    if np.any(values < 0):
        raise NormalizationError(f"negative entries: {values}")

    total = math.fsum(values)
    if total <= 0:
        raise NormalizationError("cannot normalize an all-zero vector")
    if abs(total - 1.0) <= _IDENTITY_TOLERANCE:
        return LabelDist(values)
    return LabelDist(values / total)


def entropy_bits(p: LabelDist) -> float:
    """Shannon entropy in bits, 0 log 0 := 0"""
    value = float(stats.entropy(np.asarray(p), base=2))
    return max(value, 0.0)


def kl_bits(p: LabelDist, q: LabelDist) -> float:
    """KL(p || q) in bits"""
    p_arr, q_arr = np.asarray(p), np.asarray(q)
    if p_arr.shape != q_arr.shape:
        raise DimensionError(f"length mismatch: {p_arr.size} vs {q_arr.size}")
    if np.any((q_arr == 0) & (p_arr > 0)):
        raise SupportError("q has a zero entry where p is positive")
    return max(float(stats.entropy(p_arr, q_arr, base=2)), 0.0)


def l1_distance(p: LabelDist, q: LabelDist) -> float:
    p_arr, q_arr = np.asarray(p), np.asarray(q)
    if p_arr.shape != q_arr.shape:
        raise DimensionError(f"length mismatch: {p_arr.size} vs {q_arr.size}")
    return float(np.abs(p_arr - q_arr).sum())


def effective_sample_size(w: Union[WeightVector, Sequence[float], np.ndarray]) -> float:
    """
    Kish effective sample size (sum w)^2 / sum w^2, in [1, K]
    """
    weights = np.sort(np.asarray(w, dtype=np.float64))
    if weights.size == 0 or not np.any(weights > 0):
        raise DegenerateWeightsError("at least one weight must be positive")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    # rescaling by the max keeps the ratio exact under w -> c*w up to rounding
    weights = weights / weights[-1]
    return float(weights.sum() ** 2 / np.square(weights).sum())


def argmax_label(p: LabelDist) -> int:
    """Index of the largest entry; ties go to the lowest index"""
    return int(np.argmax(np.asarray(p)))
