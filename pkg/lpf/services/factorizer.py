# lpf/services/factorizer.py

"""
Decoder and soft-factor conversion.

A posterior over the latent space becomes a label distribution by averaging the
decoder over Monte Carlo draws (or, for small d, over a Gauss-Hermite grid).
"""
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field, ValidationError
from scipy.special import softmax

from lpf.core.errors import (ConfigError, DimensionError, NumericError, RangeError,
                             UnsupportedDimensionError)
from lpf.core.prob import GaussianPosterior, LabelDist, normalize
from lpf.core.rng import StreamKey, stream

from .world import Entity, World

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 16
MAX_ORACLE_DIM = 3
MIN_ORACLE_ORDER = 20


# ============= TYPES =============


@dataclass(frozen=True, eq=False)
class Decoder:
    """Linear-softmax decoder p(y|z) mixed with the uniform distribution"""

    weight: np.ndarray
    bias: np.ndarray
    temperature: float = 1.0
    floor: float = 0.5

    def __post_init__(self):
        weight = np.array(self.weight, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise DimensionError(f"weight {weight.shape} and bias {bias.shape} do not match")
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise NumericError("decoder parameters must be finite")
        if not self.temperature > 0:
            raise RangeError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.floor < 1.0:
            raise RangeError(f"floor must lie in [0, 1), got {self.floor}")
        weight.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def num_labels(self) -> int:
        return int(self.weight.shape[0])

    @property
    def d(self) -> int:
        return int(self.weight.shape[1])

    @property
    def min_probability(self) -> float:
        """Guaranteed lower bound on every decoded entry"""
        return self.floor / self.num_labels

    def to_params(self) -> "DecoderParams":
        return DecoderParams(
            weight=self.weight.tolist(),
            bias=self.bias.tolist(),
            temperature=self.temperature,
            floor=self.floor,
        )

    @classmethod
    def from_params(cls, params: "DecoderParams") -> "Decoder":
        return cls(
            weight=params.weight,
            bias=params.bias,
            temperature=params.temperature,
            floor=params.floor,
        )


@dataclass(frozen=True, eq=False)
class SoftFactor:
    dist: LabelDist
    weight: float
    source_id: Union[int, str] = 0
    m_used: int = 0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"factor weight must lie in [0, 1], got {self.weight}")

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs


class DecoderParams(BaseModel):
    weight: List[List[float]]
    bias: List[float]
    temperature: float = Field(default=1.0, gt=0)
    floor: float = Field(default=0.5, ge=0, lt=1)


# ============= DECODING =============


def decode_batch(decoder: Decoder, z: ArrayLike) -> np.ndarray:
    """Decode a (M, d) batch of latents into (M, |Y|) probabilities"""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != decoder.d:
        raise DimensionError(f"latent has length {z.shape[1]}, decoder expects {decoder.d}")
    if not np.all(np.isfinite(z)):
        raise NumericError("latent contains non-finite values")
    logits = (z @ decoder.weight.T + decoder.bias) / decoder.temperature
    probs = softmax(logits, axis=1)
    if decoder.floor > 0:
        probs = (1.0 - decoder.floor) * probs + decoder.floor / decoder.num_labels
    return probs


def decode(decoder: Decoder, z: ArrayLike) -> LabelDist:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"expected a single latent vector, got shape {z.shape}")
    return normalize(decode_batch(decoder, z)[0])


def bayes_decoder(world: World, temperature: float = 1.0, floor: float = 0.5) -> Decoder:
    """
    Decoder equal to the class posterior of the world's isotropic latent spread:
    z | y ~ N(prototype_y, s^2 I) with s^2 = noise^2 + E[var]
    """
    cfg = world.config
    spread = cfg.evidence_noise**2 + 0.5 * (cfg.var_low + cfg.var_high)
    protos = world.prototypes
    weight = protos / spread
    bias = -np.square(protos).sum(axis=1) / (2.0 * spread) + np.log(np.clip(world.prior, 1e-12, None))
    return Decoder(weight=weight, bias=bias, temperature=temperature, floor=floor)


# ============= FACTORS =============


def sample_latents(posterior: GaussianPosterior, M: int, rng: np.random.Generator) -> np.ndarray:
    """Reparameterised draws mean + sqrt(var) * eps, shape (M, d)"""
    if M < 1:
        raise RangeError(f"M must be >= 1, got {M}")
    eps = rng.standard_normal((M, posterior.dim))
    return posterior.mean + np.sqrt(posterior.var) * eps


def confidence_weight(posterior: GaussianPosterior) -> float:
    """w = 1 / (1 + ||Sigma||_F)"""
    return 1.0 / (1.0 + posterior.frobenius)


def estimate_factor(
    decoder: Decoder, posterior: GaussianPosterior, M: int, rng: np.random.Generator
) -> SoftFactor:
    """Monte Carlo marginal of the decoder under one posterior"""
    z = sample_latents(posterior, M, rng)
    dist = normalize(decode_batch(decoder, z).mean(axis=0))
    return SoftFactor(
        dist=dist,
        weight=confidence_weight(posterior),
        source_id=posterior.source_id,
        m_used=M,
    )


def oracle_factor(decoder: Decoder, posterior: GaussianPosterior, order: int = 48) -> LabelDist:
    """
    Gauss-Hermite tensor-grid value of E_z[decode(z)], for d <= 3.

    With nodes x and weights w for the weight function exp(-x^2), the Gaussian
    expectation is sum w f(mu + sqrt(2 v) x) / sqrt(pi) per dimension.
    """
    d = posterior.dim
    if d > MAX_ORACLE_DIM:
        raise UnsupportedDimensionError(f"quadrature oracle supports d <= {MAX_ORACLE_DIM}, got {d}")
    if order < MIN_ORACLE_ORDER:
        raise RangeError(f"quadrature order must be >= {MIN_ORACLE_ORDER}, got {order}")

    nodes, weights = hermgauss(order)
    grid = np.array(list(itertools.product(nodes, repeat=d)))
    grid_weights = np.prod(np.array(list(itertools.product(weights, repeat=d))), axis=1)
    grid_weights /= math.pi ** (d / 2.0)

    z = posterior.mean + np.sqrt(2.0 * posterior.var) * grid
    return normalize(grid_weights @ decode_batch(decoder, z))


def mc_error_bound(M: int, num_labels: int = 3, delta: float = 0.05) -> float:
    """Hoeffding bound sqrt(ln(2|Y|/delta) / (2M)) on the max-class MC error"""
    if M < 1:
        raise RangeError(f"M must be >= 1, got {M}")
    if not 0.0 < delta < 1.0:
        raise RangeError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(math.log(2.0 * num_labels / delta) / (2.0 * M))


def factorize_entity(
    decoder: Decoder,
    entity: Entity,
    M: int,
    seed: int,
    keys: Sequence[StreamKey] = (),
) -> List[SoftFactor]:
    """
    One soft factor per evidence item; item i draws from stream (seed, "factor", *keys, i)
    """
    return [
        estimate_factor(decoder, posterior, M, stream(seed, "factor", *keys, i))
        for i, posterior in enumerate(entity.evidence)
    ]


def max_class_error(estimate: LabelDist, reference: LabelDist) -> float:
    """L-infinity distance between two distributions"""
    return float(np.max(np.abs(np.asarray(estimate) - np.asarray(reference))))


# ============= IMPORT / EXPORT =============


def save_decoder(decoder: Decoder, path: Union[str, Path]) -> None:
    Path(path).write_text(decoder.to_params().model_dump_json(indent=2), encoding="utf-8")


def load_decoder(path: Union[str, Path]) -> Decoder:
    try:
        params = DecoderParams.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid decoder file: {e}") from e
    return Decoder.from_params(params)
