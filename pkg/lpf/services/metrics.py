# lpf/services/metrics.py

"""
Calibration, information and uncertainty measurements, and the closed-form
bound calculators that the verification experiments compare them against.
"""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from lpf.core.errors import DimensionError, InsufficientDataError, RangeError, SingularFitError, SupportError
from lpf.core.prob import GaussianPosterior, LabelDist

from .factorizer import Decoder, SoftFactor, decode_batch

logger = logging.getLogger(__name__)

Predictions = Union[Sequence[LabelDist], np.ndarray]

DEFAULT_BINS = 10
DEFAULT_SAMPLE_C = 24.28


def _as_matrix(predictions: Predictions) -> np.ndarray:
    if isinstance(predictions, np.ndarray):
        return np.atleast_2d(predictions.astype(np.float64))
    return np.stack([np.asarray(p, dtype=np.float64) for p in predictions])


# ============= CALIBRATION =============


class BinRecord(BaseModel):
    confidence_lo: float
    confidence_hi: float
    mean_confidence: float
    accuracy: float
    count: int


class ReliabilityTable(BaseModel):
    bins: List[BinRecord]
    ece: float = Field(ge=0, le=1)

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def rows(self) -> List[dict]:
        """CSV rows: bin_lo, bin_hi, mean_conf, accuracy, count"""
        return [
            {
                "bin_lo": b.confidence_lo,
                "bin_hi": b.confidence_hi,
                "mean_conf": b.mean_confidence,
                "accuracy": b.accuracy,
                "count": b.count,
            }
            for b in self.bins
        ]


def ece(predictions: Predictions, labels: ArrayLike, bins: int = DEFAULT_BINS) -> ReliabilityTable:
    """
    Expected calibration error over equal-width confidence bins.

    Bins are right-inclusive, (lo, hi]; confidence exactly 0 goes to the first bin.
    """
    probs = _as_matrix(predictions)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] != labels.shape[0]:
        raise DimensionError(f"{probs.shape[0]} predictions for {labels.shape[0]} labels")
    if probs.shape[0] == 0:
        raise InsufficientDataError("no predictions")
    if bins < 1:
        raise RangeError(f"bins must be >= 1, got {bins}")

    confidence = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    total = probs.shape[0]

    records = []
    value = 0.0
    for b in range(bins):
        lo, hi = edges[b], edges[b + 1]
        in_bin = confidence > lo
        if b == 0:
            in_bin = confidence >= lo
        if b < bins - 1:
            in_bin &= confidence <= hi
        count = int(in_bin.sum())
        if count == 0:
            records.append(BinRecord(confidence_lo=lo, confidence_hi=hi, mean_confidence=0.0, accuracy=0.0, count=0))
            continue
        mean_conf = float(np.mean(confidence[in_bin]))
        accuracy = float(np.mean(correct[in_bin]))
        value += (count / total) * abs(accuracy - mean_conf)
        records.append(
            BinRecord(confidence_lo=lo, confidence_hi=hi, mean_confidence=mean_conf, accuracy=accuracy, count=count)
        )
    return ReliabilityTable(bins=records, ece=min(max(value, 0.0), 1.0))


def max_calibration_error(table: ReliabilityTable) -> float:
    """Worst non-empty bin |accuracy - confidence|"""
    gaps = [abs(b.accuracy - b.mean_confidence) for b in table.bins if b.count > 0]
    return max(gaps) if gaps else 0.0


def calibration_bound(epsilon_individual: float, k_eff: float, C: float = 2.0) -> float:
    """eps + C / sqrt(K_eff)"""
    if not k_eff >= 1:
        raise RangeError(f"k_eff must be >= 1, got {k_eff}")
    if math.isinf(k_eff):
        return epsilon_individual
    return epsilon_individual + C / math.sqrt(k_eff)


def concentration_constant(num_labels: int = 3, delta: float = 0.05) -> float:
    """Theoretical C(delta, |Y|) = sqrt(2 ln(2|Y|/delta))"""
    return math.sqrt(2.0 * math.log(2.0 * num_labels / delta))


def weighted_concentration_tail(n_eff: float, eps: float) -> float:
    """P(|weighted mean - expectation| >= eps) <= 2 exp(-2 n_eff eps^2 / 4)"""
    return 2.0 * math.exp(-2.0 * n_eff * eps * eps / 4.0)


def concentration_deviation(n_eff: float, delta: float = 0.05) -> float:
    """eps at which weighted_concentration_tail(n_eff, eps) == delta"""
    if n_eff <= 0:
        raise RangeError("n_eff must be > 0")
    return math.sqrt(2.0 * math.log(2.0 / delta) / n_eff)


# ============= UNCERTAINTY =============


class UncertaintyBreakdown(BaseModel):
    total: float
    epistemic: float
    aleatoric: float
    decomposition_error: float


def _mixture_weights(k: int, weights: Optional[ArrayLike]) -> np.ndarray:
    if weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise DimensionError(f"{w.size} mixture weights for {k} components")
    if np.any(w < 0) or w.sum() <= 0:
        raise RangeError("mixture weights must be non-negative with a positive sum")
    return w / w.sum()


def uncertainty_decomposition(
    decoder: Decoder,
    mixture: Sequence[GaussianPosterior],
    M: int,
    rng: np.random.Generator,
    weights: Optional[ArrayLike] = None,
) -> UncertaintyBreakdown:
    """
    Predictive variance of M decoded draws from the posterior mixture.

    aleatoric = mean_m sum_y p(1-p), epistemic = sum_y Var_m[p] (population),
    total = sum_y pbar (1 - pbar), computed on its own.
    """
    if M < 2:
        raise RangeError(f"M must be >= 2, got {M}")
    if len(mixture) == 0:
        raise RangeError("mixture needs at least one component")
    w = _mixture_weights(len(mixture), weights)

    comps = rng.choice(len(mixture), size=M, p=w)
    means = np.stack([p.mean for p in mixture])
    stds = np.sqrt(np.stack([p.var for p in mixture]))
    z = means[comps] + stds[comps] * rng.standard_normal((M, means.shape[1]))
    probs = decode_batch(decoder, z)

    aleatoric = float(np.mean(np.sum(probs * (1.0 - probs), axis=1)))
    epistemic = float(np.sum(np.var(probs, axis=0)))
    p_bar = probs.mean(axis=0)
    total = float(np.sum(p_bar * (1.0 - p_bar)))
    error = abs(total - (epistemic + aleatoric)) / max(total, 1e-12)
    return UncertaintyBreakdown(total=total, epistemic=epistemic, aleatoric=aleatoric, decomposition_error=error)


def mixture_spread(evidence: Sequence[GaussianPosterior], weights: Optional[ArrayLike] = None) -> float:
    """Trace of the mixture covariance: within-item variance plus spread of the means"""
    w = _mixture_weights(len(evidence), weights)
    means = np.stack([p.mean for p in evidence])
    within = float(w @ np.stack([p.var for p in evidence]).sum(axis=1))
    centre = w @ means
    between = float(w @ np.square(means - centre).sum(axis=1))
    return within + between


# ============= INFORMATION =============


class InfoBoundReport(BaseModel):
    h_y: float
    h_y_given_e: float
    noise: float
    lower_bound: float
    achievable_bound: float
    empirical_ece: float
    ratio: float


def info_bounds(h_given_e: float, noise: float, k_avg: float) -> Tuple[float, float]:
    """(lower, achievable) = (max(H, noise/2), lower + 0.5/sqrt(k))"""
    if k_avg <= 0:
        raise RangeError(f"k_avg must be > 0, got {k_avg}")
    lower = max(h_given_e, 0.5 * noise)
    return lower, lower + 0.5 / math.sqrt(k_avg)


def pairwise_kl_mean(probs: np.ndarray) -> float:
    """Mean KL(p_i || p_j) in bits over ordered pairs i != j"""
    n = probs.shape[0]
    if n < 2:
        return 0.0
    if np.any(probs <= 0):
        raise SupportError("evidence conflict needs full-support factors")
    logp = np.log(probs)
    self_term = np.sum(probs * logp, axis=1)
    cross = probs @ logp.T
    kl = (self_term[:, None] - cross) / math.log(2.0)
    np.fill_diagonal(kl, 0.0)
    return float(max(kl.sum() / (n * (n - 1)), 0.0))


def info_bound_report(
    factors_per_entity: Sequence[Sequence[SoftFactor]],
    predictions: Predictions,
    labels: ArrayLike,
    k_avg: float,
    bins: int = DEFAULT_BINS,
) -> InfoBoundReport:
    """
    Label entropy, mean factor entropy, evidence conflict and the resulting
    lower / achievable calibration bounds
    """
    if len(factors_per_entity) < 2:
        raise InsufficientDataError("information bounds need at least two entities")
    labels = np.asarray(labels, dtype=np.int64)
    pooled = np.stack([f.probs for factors in factors_per_entity for f in factors])
    num_labels = pooled.shape[1]

    freq = np.bincount(labels, minlength=num_labels) / labels.size
    nz = freq[freq > 0]
    h_y = float(max(-np.sum(nz * np.log2(nz)), 0.0))

    safe = np.where(pooled > 0, pooled, 1.0)
    h_given_e = float(np.mean(-np.sum(pooled * np.log2(safe), axis=1)))
    noise = pairwise_kl_mean(pooled)
    lower, achievable = info_bounds(h_given_e, noise, k_avg)
    empirical = ece(predictions, labels, bins).ece
    return InfoBoundReport(
        h_y=h_y,
        h_y_given_e=h_given_e,
        noise=noise,
        lower_bound=lower,
        achievable_bound=achievable,
        empirical_ece=empirical,
        ratio=empirical / achievable,
    )


# ============= SCALING =============


class InverseSqrtFit(NamedTuple):
    a: float
    b: float
    r2: float


def fit_inverse_sqrt(k_values: ArrayLike, ece_values: ArrayLike) -> InverseSqrtFit:
    """OLS fit of ece = a / sqrt(K) + b"""
    k = np.asarray(k_values, dtype=np.float64)
    y = np.asarray(ece_values, dtype=np.float64)
    if k.shape != y.shape:
        raise DimensionError(f"{k.size} K values for {y.size} ECE values")
    if np.unique(k).size < 3:
        raise SingularFitError("need at least three distinct K values")
    if np.any(k <= 0):
        raise RangeError("K values must be positive")

    design = np.column_stack([1.0 / np.sqrt(k), np.ones_like(k)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coef
    ss_res = float(residual @ residual)
    ss_tot = float(np.sum(np.square(y - y.mean())))
    if ss_tot <= 1e-24:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return InverseSqrtFit(a=float(coef[0]), b=float(coef[1]), r2=r2)


def sample_complexity(epsilon_target: float, C: float) -> int:
    """ceil(C^2 / eps^2)"""
    if epsilon_target <= 0:
        raise RangeError(f"epsilon_target must be > 0, got {epsilon_target}")
    return math.ceil(C * C / (epsilon_target * epsilon_target) - 1e-9)


def sample_complexity_curve(k_values: Sequence[int], C: float = DEFAULT_SAMPLE_C) -> List[float]:
    """Bound curve C / sqrt(K)"""
    return [C / math.sqrt(k) for k in k_values]
