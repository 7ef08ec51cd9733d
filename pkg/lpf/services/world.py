# lpf/services/world.py

"""
Synthetic generative world: entities with a known label and Gaussian evidence
posteriors of controlled quality, conflict and cross-item correlation.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from lpf.core.errors import ConfigError, InsufficientDataError, RangeError
from lpf.core.prob import GaussianPosterior
from lpf.core.rng import StreamKey, stream

logger = logging.getLogger(__name__)

StreamId = Union[StreamKey, Tuple[StreamKey, ...]]


def _keys(stream_id: StreamId) -> Tuple[StreamKey, ...]:
    return tuple(stream_id) if isinstance(stream_id, tuple) else (stream_id,)


# ============= CONFIG =============


class WorldConfig(BaseModel):
    """Knobs of the generative world"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = Field(default=8, ge=2)
    num_labels: int = Field(default=3, ge=2)
    prototype_scale: float = Field(default=3.0, gt=0)
    evidence_noise: float = Field(default=0.5, ge=0)
    var_low: float = Field(default=0.1, gt=0)
    var_high: float = Field(default=0.5, gt=0)
    conflict_rate: float = Field(default=0.2, ge=0, le=1)
    correlation: float = Field(default=0.12, ge=0, le=1)
    seed: int = Field(default=42, ge=0, lt=2**64)
    k_max: int = Field(default=5, ge=1)
    label_prior: Optional[List[float]] = None
    sigma_max: float = Field(default=2.5, gt=0)

    @field_validator("label_prior")
    @classmethod
    def _prior_is_distribution(cls, value):
        if value is None:
            return value
        arr = np.asarray(value, dtype=np.float64)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)) or abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError("label_prior must be a probability vector")
        return value

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.var_low > self.var_high:
            raise ValueError(f"var_low ({self.var_low}) must not exceed var_high ({self.var_high})")
        if self.label_prior is not None and len(self.label_prior) != self.num_labels:
            raise ValueError(f"label_prior has {len(self.label_prior)} entries for {self.num_labels} labels")
        return self

    def expected_frobenius(self) -> float:
        """sqrt(d * E[v^2]) for v ~ U[var_low, var_high]; upper bound on E||Sigma||_F"""
        lo, hi = self.var_low, self.var_high
        second_moment = lo * lo if hi == lo else (hi**3 - lo**3) / (3.0 * (hi - lo))
        return math.sqrt(self.d * second_moment)


# ============= TYPES =============


@dataclass(frozen=True, eq=False)
class World:
    config: WorldConfig
    prototypes: np.ndarray
    prior: np.ndarray

    @property
    def num_labels(self) -> int:
        return self.config.num_labels

    @property
    def d(self) -> int:
        return self.config.d

    @property
    def seed(self) -> int:
        return self.config.seed


@dataclass(frozen=True, eq=False)
class Entity:
    """Ground-truth label plus its evidence posteriors"""

    label: int
    evidence: Tuple[GaussianPosterior, ...]
    # generating label of each evidence item, None when unknown (imported data)
    sources: Optional[Tuple[int, ...]] = None

    @property
    def k(self) -> int:
        return len(self.evidence)


@dataclass(frozen=True)
class AggDataset:
    train: Tuple[Entity, ...] = field(default_factory=tuple)
    test: Tuple[Entity, ...] = field(default_factory=tuple)

    def split(self, tag: str) -> Tuple[Entity, ...]:
        if tag not in ("train", "test"):
            raise ValueError(f"unknown split {tag!r}")
        return getattr(self, tag)


# ============= BUILD =============


def _place_prototypes(d: int, num_labels: int, scale: float) -> np.ndarray:
    protos = np.zeros((num_labels, d))
    if d >= num_labels:
        protos[np.arange(num_labels), np.arange(num_labels)] = scale
    else:
        angles = 2.0 * np.pi * np.arange(num_labels) / num_labels
        protos[:, 0] = scale * np.cos(angles)
        protos[:, 1] = scale * np.sin(angles)
    return protos


def build_world(config: Union[WorldConfig, Mapping[str, Any], None] = None) -> World:
    """
    Validate the configuration and fix prototypes and label prior
    """
    if config is None:
        config = WorldConfig()
    elif not isinstance(config, WorldConfig):
        try:
            config = WorldConfig(**dict(config))
        except ValidationError as e:
            raise ConfigError(f"invalid world config: {e}") from e

    prototypes = _place_prototypes(config.d, config.num_labels, config.prototype_scale)
    prototypes.setflags(write=False)
    if config.label_prior is None:
        prior = np.full(config.num_labels, 1.0 / config.num_labels)
    else:
        prior = np.asarray(config.label_prior, dtype=np.float64)
    prior.setflags(write=False)

    expected = config.expected_frobenius()
    if expected > config.sigma_max:
        logger.warning(
            f"expected covariance norm {expected:.3f} exceeds sigma_max {config.sigma_max}"
        )
    logger.debug(f"world built: d={config.d} |Y|={config.num_labels} seed={config.seed}")
    return World(config=config, prototypes=prototypes, prior=prior)


# ============= SAMPLING =============


def _wrong_label(label: int, draw: int) -> int:
    return draw if draw < label else draw + 1


def _draw(world: World, K: int, rng: np.random.Generator):
    """
    Raw draw of one entity: label, generating labels, unit jitter and variances.

    Draw order is fixed so that an entity with K items is a prefix of one with
    more items on the same stream.
    """
    cfg = world.config
    label = int(rng.choice(cfg.num_labels, p=world.prior))
    shared = rng.standard_normal(cfg.d)
    a, b = math.sqrt(cfg.correlation), math.sqrt(1.0 - cfg.correlation)

    sources = np.empty(K, dtype=np.int64)
    jitter = np.empty((K, cfg.d))
    variances = np.empty((K, cfg.d))
    for i in range(K):
        flip = rng.random()
        wrong = int(rng.integers(cfg.num_labels - 1))
        own = rng.standard_normal(cfg.d)
        variances[i] = rng.uniform(cfg.var_low, cfg.var_high, size=cfg.d)
        sources[i] = _wrong_label(label, wrong) if flip < cfg.conflict_rate else label
        jitter[i] = a * shared + b * own
    return label, sources, jitter, variances


def _check_k(world: World, K: int) -> None:
    if not 1 <= K <= world.config.k_max:
        raise RangeError(f"K={K} outside [1, {world.config.k_max}]")


def sample_entity(world: World, K: int, stream_id: StreamId = 0) -> Entity:
    """Draw one entity with K evidence items from the substream `stream_id`"""
    _check_k(world, K)
    rng = stream(world.seed, "entity", *_keys(stream_id))
    label, sources, jitter, variances = _draw(world, K, rng)

    means = world.prototypes[sources] + world.config.evidence_noise * jitter
    evidence = tuple(
        GaussianPosterior(mean=means[i], var=variances[i], source_id=i) for i in range(K)
    )
    return Entity(label=label, evidence=evidence, sources=tuple(int(s) for s in sources))


def sample_entities(world: World, n: int, K: int, namespace: StreamKey = "pool") -> List[Entity]:
    return [sample_entity(world, K, (namespace, i)) for i in range(n)]


def corrupt_entity(entity: Entity, fraction: float, world: World, stream_id: StreamId = 0) -> Entity:
    """
    Replace floor(fraction*K) items' means with the prototype of a random wrong label
    """
    if not 0.0 <= fraction <= 1.0:
        raise RangeError(f"fraction must lie in [0, 1], got {fraction}")
    K = entity.k
    n_bad = math.floor(fraction * K + 1e-9)
    if n_bad == 0:
        return entity

    rng = stream(world.seed, "corrupt", *_keys(stream_id))
    chosen = np.sort(rng.choice(K, size=n_bad, replace=False))
    evidence = list(entity.evidence)
    sources = list(entity.sources) if entity.sources is not None else None
    for idx in chosen:
        wrong = _wrong_label(entity.label, int(rng.integers(world.num_labels - 1)))
        evidence[idx] = evidence[idx].with_mean(world.prototypes[wrong])
        if sources is not None:
            sources[idx] = wrong
    return Entity(
        label=entity.label,
        evidence=tuple(evidence),
        sources=tuple(sources) if sources is not None else None,
    )


def measure_correlation(world: World, n_entities: int, K: Optional[int] = None, stream_id: StreamId = 0) -> float:
    """
    Mean over entities of the mean pairwise Pearson correlation between the
    items' jitter vectors (mean minus generating prototype)
    """
    if n_entities < 30:
        raise RangeError(f"n_entities must be >= 30, got {n_entities}")
    K = world.config.k_max if K is None else K
    _check_k(world, K)
    if K < 2:
        raise InsufficientDataError("correlation needs at least two evidence items per entity")

    upper = np.triu_indices(K, k=1)
    per_entity = []
    for i in range(n_entities):
        rng = stream(world.seed, "correlation", *_keys(stream_id), i)
        _, _, jitter, _ = _draw(world, K, rng)
        if np.any(jitter.std(axis=1) == 0):
            continue
        per_entity.append(float(np.corrcoef(jitter)[upper].mean()))

    if not per_entity:
        raise InsufficientDataError("no entity had two items with non-degenerate jitter")
    rho = float(np.mean(per_entity))
    logger.debug(f"measured correlation {rho:.4f} over {len(per_entity)} entities")
    return rho


def covariance_norms(world: World, n_entities: int, K: Optional[int] = None, stream_id: StreamId = 0) -> np.ndarray:
    """Frobenius norms of every sampled posterior covariance"""
    K = world.config.k_max if K is None else K
    norms = [
        item.frobenius
        for i in range(n_entities)
        for item in sample_entity(world, K, ("norms", *_keys(stream_id), i)).evidence
    ]
    return np.asarray(norms)


def make_agg_dataset(world: World, n_train: int, n_test: int, K: int, stream_id: StreamId = 0) -> AggDataset:
    """Independent train/test entities with K items each"""
    if n_train < 1 or n_test < 1:
        raise RangeError("dataset sizes must be >= 1")
    _check_k(world, K)
    keys = _keys(stream_id)
    train = tuple(sample_entity(world, K, ("train", *keys, i)) for i in range(n_train))
    test = tuple(sample_entity(world, K, ("test", *keys, i)) for i in range(n_test))
    logger.info(f"dataset built: {n_train} train / {n_test} test entities, K={K}")
    return AggDataset(train=train, test=test)


# ============= IMPORT / EXPORT =============


class EvidenceRecord(BaseModel):
    mean: List[float]
    var: List[float]


class EntityRecord(BaseModel):
    label: int = Field(ge=0)
    evidence: List[EvidenceRecord] = Field(min_length=1)


def entity_to_record(entity: Entity) -> EntityRecord:
    return EntityRecord(
        label=entity.label,
        evidence=[EvidenceRecord(mean=p.mean.tolist(), var=p.var.tolist()) for p in entity.evidence],
    )


def entity_from_record(record: EntityRecord) -> Entity:
    evidence = tuple(
        GaussianPosterior(mean=item.mean, var=item.var, source_id=i)
        for i, item in enumerate(record.evidence)
    )
    return Entity(label=record.label, evidence=evidence)


def export_entities(entities: Iterable[Entity], path: Union[str, Path]) -> int:
    """Write one JSON object per line; returns the number written"""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for entity in entities:
            fh.write(json.dumps(entity_to_record(entity).model_dump()) + "\n")
            count += 1
    return count


def load_entities(path: Union[str, Path]) -> List[Entity]:
    entities = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entities.append(entity_from_record(EntityRecord.model_validate_json(line)))
            except ValidationError as e:
                raise ConfigError(f"{path}:{lineno}: invalid entity record: {e}") from e
    return entities


def entity_labels(entities: Sequence[Entity]) -> np.ndarray:
    return np.asarray([e.label for e in entities], dtype=np.int64)
