# lpf/services/aggregators.py

"""
Aggregation of soft factors into one label distribution per entity.

- spn_aggregate:     weighted log-linear pooling exp(sum_i w_i log phi_i), normalized
- uniform_aggregate: arithmetic mean of the factors
- learned_aggregate: attention over evidence in latent space, then decode
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field, ValidationError
from scipy.special import logsumexp, softmax

from lpf.core.errors import ConfigError, DimensionError, RangeError, SupportError
from lpf.core.prob import GaussianPosterior, LabelDist, WeightVector, effective_sample_size, normalize
from lpf.core.rng import stream

from .factorizer import Decoder, DecoderParams, SoftFactor, decode

logger = logging.getLogger(__name__)

METHODS = ("spn", "learned", "uniform")
DEFAULT_HIDDEN = 16


@dataclass(frozen=True, eq=False)
class AggregationResult:
    dist: LabelDist
    k_eff: float
    weights_used: WeightVector
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown aggregation method {self.method!r}")


def _factor_matrix(factors: Sequence[SoftFactor]) -> np.ndarray:
    if len(factors) == 0:
        raise RangeError("at least one factor is required")
    sizes = {f.dist.num_labels for f in factors}
    if len(sizes) != 1:
        raise DimensionError(f"factors disagree on the label count: {sorted(sizes)}")
    return np.stack([f.probs for f in factors])


# ============= SPN / UNIFORM =============


def spn_aggregate(factors: Sequence[SoftFactor], weights: Optional[ArrayLike] = None) -> AggregationResult:
    """
    Weighted geometric pooling in log space.

    Contributions are sorted per label before summation so that the output does
    not depend on the order of the factors.
    """
    probs = _factor_matrix(factors)
    w = WeightVector([f.weight for f in factors] if weights is None else weights)
    if len(w) != probs.shape[0]:
        raise DimensionError(f"{len(w)} weights for {probs.shape[0]} factors")
    if np.any(probs <= 0):
        raise SupportError("factor with a zero entry cannot be pooled in log space")

    k_eff = effective_sample_size(w)
    if probs.shape[0] == 1 and w.weights[0] == 1.0:
        return AggregationResult(dist=factors[0].dist, k_eff=k_eff, weights_used=w, method="spn")

    contributions = np.sort(w.weights[:, None] * np.log(probs), axis=0)
    scores = contributions.sum(axis=0)
    dist = normalize(np.exp(scores - logsumexp(scores)))
    return AggregationResult(dist=dist, k_eff=k_eff, weights_used=w, method="spn")


def uniform_aggregate(factors: Sequence[SoftFactor]) -> AggregationResult:
    probs = _factor_matrix(factors)
    K = probs.shape[0]
    w = WeightVector(np.ones(K))
    if K == 1:
        return AggregationResult(dist=factors[0].dist, k_eff=1.0, weights_used=w, method="uniform")
    dist = normalize(np.sort(probs, axis=0).sum(axis=0) / K)
    return AggregationResult(dist=dist, k_eff=float(K), weights_used=w, method="uniform")


def robustness_bound(epsilon: float, delta_item: float, K: int, C: float = 2.0) -> float:
    """C * eps * delta * sqrt(K)"""
    if not 0.0 <= epsilon <= 1.0:
        raise RangeError(f"epsilon must lie in [0, 1], got {epsilon}")
    if delta_item < 0 or K < 1:
        raise RangeError("delta_item must be >= 0 and K >= 1")
    return C * epsilon * delta_item * math.sqrt(K)


# ============= ATTENTION =============


def base_features(evidence: Sequence[GaussianPosterior]) -> np.ndarray:
    """Per item [mean, var, ||Sigma||_F], shape (K, 2d+1)"""
    if len(evidence) == 0:
        raise RangeError("at least one evidence item is required")
    return np.stack([np.concatenate([p.mean, p.var, [p.frobenius]]) for p in evidence])


def item_features(evidence: Sequence[GaussianPosterior]) -> np.ndarray:
    """Base features plus their pairwise products (upper triangle), shape (K, F)"""
    s = base_features(evidence)
    rows, cols = np.triu_indices(s.shape[1])
    return np.concatenate([s, s[:, rows] * s[:, cols]], axis=1)


def feature_count(d: int) -> int:
    n = 2 * d + 1
    return n + n * (n + 1) // 2


def canonical_order(evidence: Sequence[GaussianPosterior]) -> np.ndarray:
    """Indices sorting items lexicographically by (mean, var)"""
    keys = np.stack([np.concatenate([p.mean, p.var]) for p in evidence])
    return np.lexsort(keys.T[::-1])


@dataclass(frozen=True, eq=False)
class AttentionAggregator:
    """
    Item scorer phi -> w2 . tanh(W1 phi + b1); softmax over items gives alpha.
    The decoder is a fixed reference and is not trained.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    decoder: Decoder
    l2_lambda: float = 1e-4

    def __post_init__(self):
        w1, b1, w2 = (np.array(a, dtype=np.float64) for a in (self.w1, self.b1, self.w2))
        hidden = w1.shape[0]
        if b1.shape != (hidden,) or w2.shape != (hidden,):
            raise DimensionError(f"scorer shapes disagree: w1 {w1.shape}, b1 {b1.shape}, w2 {w2.shape}")
        if w1.shape[1] != feature_count(self.decoder.d):
            raise DimensionError(f"w1 expects {w1.shape[1]} features, d={self.decoder.d} gives {feature_count(self.decoder.d)}")
        if self.l2_lambda < 0:
            raise RangeError("l2_lambda must be >= 0")
        for arr in (w1, b1, w2):
            arr.setflags(write=False)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    @property
    def num_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2])

    def with_params(self, theta: ArrayLike) -> "AttentionAggregator":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise DimensionError(f"expected {self.num_params} parameters, got {theta.shape}")
        n1 = self.w1.size
        h = self.hidden
        return AttentionAggregator(
            w1=theta[:n1].reshape(self.w1.shape),
            b1=theta[n1 : n1 + h],
            w2=theta[n1 + h :],
            decoder=self.decoder,
            l2_lambda=self.l2_lambda,
        )

    def scores(self, features: np.ndarray) -> np.ndarray:
        return np.tanh(features @ self.w1.T + self.b1) @ self.w2

    def to_params(self) -> "AttentionParams":
        return AttentionParams(
            d=self.decoder.d,
            hidden=self.hidden,
            w1=self.w1.tolist(),
            b1=self.b1.tolist(),
            w2=self.w2.tolist(),
            l2_lambda=self.l2_lambda,
            decoder=self.decoder.to_params(),
        )

    @classmethod
    def from_params(cls, params: "AttentionParams") -> "AttentionAggregator":
        agg = cls(
            w1=params.w1,
            b1=params.b1,
            w2=params.w2,
            decoder=Decoder.from_params(params.decoder),
            l2_lambda=params.l2_lambda,
        )
        if agg.hidden != params.hidden or agg.decoder.d != params.d:
            raise ConfigError("shape metadata does not match the parameter arrays")
        return agg


class AttentionParams(BaseModel):
    d: int = Field(ge=1)
    hidden: int = Field(ge=1)
    w1: List[List[float]]
    b1: List[float]
    w2: List[float]
    l2_lambda: float = Field(default=1e-4, ge=0)
    decoder: DecoderParams


def init_attention(
    decoder: Decoder,
    hidden: int = DEFAULT_HIDDEN,
    l2_lambda: float = 1e-4,
    seed: int = 0,
    init_scale: float = 0.1,
) -> AttentionAggregator:
    """Small random scorer, so attention starts close to uniform"""
    rng = stream(seed, "attention-init")
    n_features = feature_count(decoder.d)
    w1 = rng.standard_normal((hidden, n_features)) * init_scale / math.sqrt(n_features)
    w2 = rng.standard_normal(hidden) * init_scale / math.sqrt(hidden)
    return AttentionAggregator(w1=w1, b1=np.zeros(hidden), w2=w2, decoder=decoder, l2_lambda=l2_lambda)


def attention_weights(agg: AttentionAggregator, evidence: Sequence[GaussianPosterior]) -> np.ndarray:
    """Softmax attention over items, returned in input order"""
    order = canonical_order(evidence)
    ordered = [evidence[i] for i in order]
    alpha_sorted = softmax(agg.scores(item_features(ordered)))
    alpha = np.empty_like(alpha_sorted)
    alpha[order] = alpha_sorted
    return alpha


def learned_aggregate(agg: AttentionAggregator, evidence: Sequence[GaussianPosterior]) -> AggregationResult:
    """z_agg = sum_i alpha_i mu_i, then decode"""
    order = canonical_order(evidence)
    ordered = [evidence[i] for i in order]
    alpha = softmax(agg.scores(item_features(ordered)))
    means = np.stack([p.mean for p in ordered])
    z_agg = alpha @ means
    weights = np.empty_like(alpha)
    weights[order] = alpha
    return AggregationResult(
        dist=decode(agg.decoder, z_agg),
        k_eff=effective_sample_size(alpha),
        weights_used=WeightVector(np.clip(weights, 0.0, 1.0)),
        method="learned",
    )


def save_attention(agg: AttentionAggregator, path: Union[str, Path]) -> None:
    Path(path).write_text(agg.to_params().model_dump_json(indent=2), encoding="utf-8")


def load_attention(path: Union[str, Path]) -> AttentionAggregator:
    try:
        params = AttentionParams.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid aggregator file: {e}") from e
    return AttentionAggregator.from_params(params)
