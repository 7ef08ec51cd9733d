# lpf/services/trainer.py

"""
Training of the attention aggregator by regularized gradient descent, plus the
generalization bounds that go with it.

Gradients are derived by hand through the scorer MLP, the attention softmax,
the convex combination of means and the floor-mixed decoder softmax.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import softmax

from lpf.core.errors import RangeError, TrainingDivergedError
from lpf.core.rng import stream

from .aggregators import AttentionAggregator, canonical_order, item_features
from .world import AggDataset, Entity

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1e-3


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=0.05, gt=0)
    epochs: int = Field(default=30, ge=0)
    l2_lambda: float = Field(default=1e-4, ge=0)
    batch_size: int = Field(default=128, ge=1)
    seed: int = Field(default=0, ge=0)
    d_eff_threshold: float = Field(default=DEFAULT_THRESHOLD, ge=0)
    delta: float = Field(default=0.05, gt=0, lt=1)


class TrainReport(BaseModel):
    train_loss: float
    test_loss: float
    gap: float
    d_eff: int
    bound: float
    test_accuracy: float
    num_params: int
    n_train: int
    loss_history: List[float] = Field(default_factory=list)
    config: TrainConfig


# ============= BATCH PREPARATION =============


@dataclass(frozen=True)
class _Group:
    """Entities with the same K, items in canonical order"""

    index: np.ndarray  # positions in the prepared set
    features: np.ndarray  # (B, K, F)
    means: np.ndarray  # (B, K, d)
    labels: np.ndarray  # (B,)


@dataclass(frozen=True)
class PreparedSet:
    groups: Tuple[_Group, ...]
    size: int

    def subset(self, positions: np.ndarray) -> "PreparedSet":
        positions = np.unique(positions)
        groups = []
        for g in self.groups:
            mask = np.isin(g.index, positions)
            if mask.any():
                groups.append(_Group(g.index[mask], g.features[mask], g.means[mask], g.labels[mask]))
        return PreparedSet(groups=tuple(groups), size=int(positions.size))


def prepare(entities: Sequence[Entity]) -> PreparedSet:
    """Precompute item features once; training only changes the scorer"""
    by_k: Dict[int, List[int]] = {}
    for i, e in enumerate(entities):
        by_k.setdefault(e.k, []).append(i)

    groups = []
    for k in sorted(by_k):
        idx = by_k[k]
        feats, means = [], []
        for i in idx:
            ordered = [entities[i].evidence[j] for j in canonical_order(entities[i].evidence)]
            feats.append(item_features(ordered))
            means.append(np.stack([p.mean for p in ordered]))
        groups.append(
            _Group(
                index=np.asarray(idx),
                features=np.stack(feats),
                means=np.stack(means),
                labels=np.asarray([entities[i].label for i in idx]),
            )
        )
    return PreparedSet(groups=tuple(groups), size=len(entities))


# ============= FORWARD / BACKWARD =============


def _forward(agg: AttentionAggregator, g: _Group):
    dec = agg.decoder
    a = np.einsum("bkf,hf->bkh", g.features, agg.w1) + agg.b1
    h = np.tanh(a)
    s = h @ agg.w2
    alpha = softmax(s, axis=1)
    z = np.einsum("bk,bkd->bd", alpha, g.means)
    q = softmax((z @ dec.weight.T + dec.bias) / dec.temperature, axis=1)
    p = (1.0 - dec.floor) * q + dec.floor / dec.num_labels
    return h, alpha, q, p


def _data_loss(agg: AttentionAggregator, data: PreparedSet) -> Tuple[float, float]:
    """Mean cross-entropy and accuracy"""
    total, correct = 0.0, 0
    for g in data.groups:
        _, _, _, p = _forward(agg, g)
        rows = np.arange(len(g.labels))
        total += float(-np.log(p[rows, g.labels]).sum())
        correct += int((np.argmax(p, axis=1) == g.labels).sum())
    return total / data.size, correct / data.size


def loss_and_grad(agg: AttentionAggregator, data: PreparedSet) -> Tuple[float, np.ndarray]:
    """
    Objective mean CE + lambda * ||theta||^2 and its gradient, flattened like
    AttentionAggregator.param_vector()
    """
    dec = agg.decoder
    gw1 = np.zeros_like(agg.w1)
    gb1 = np.zeros_like(agg.b1)
    gw2 = np.zeros_like(agg.w2)
    total = 0.0

    for g in data.groups:
        h, alpha, q, p = _forward(agg, g)
        rows = np.arange(len(g.labels))
        p_y = p[rows, g.labels]
        total += float(-np.log(p_y).sum())

        onehot = np.zeros_like(q)
        onehot[rows, g.labels] = 1.0
        c = (1.0 - dec.floor) * q[rows, g.labels] / p_y
        dlogits = c[:, None] * (q - onehot)
        dz = dlogits @ dec.weight / dec.temperature
        dalpha = np.einsum("bkd,bd->bk", g.means, dz)
        ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        gw2 += np.einsum("bk,bkh->h", ds, h)
        da = ds[:, :, None] * agg.w2 * (1.0 - h * h)
        gw1 += np.einsum("bkh,bkf->hf", da, g.features)
        gb1 += da.sum(axis=(0, 1))

    n = data.size
    theta = agg.param_vector()
    grad = np.concatenate([gw1.ravel(), gb1, gw2]) / n + 2.0 * agg.l2_lambda * theta
    objective = total / n + agg.l2_lambda * float(theta @ theta)
    return objective, grad


def gradient_check(
    agg: AttentionAggregator,
    entities: Sequence[Entity],
    n_coords: int = 10,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """
    Largest relative error between analytic and central-difference gradients
    over randomly chosen coordinates
    """
    data = prepare(entities)
    theta = agg.param_vector()
    _, grad = loss_and_grad(agg, data)
    rng = stream(seed, "gradient-check")
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)

    worst = 0.0
    for j in coords:
        bumped = theta.copy()
        bumped[j] = theta[j] + step
        up, _ = loss_and_grad(agg.with_params(bumped), data)
        bumped[j] = theta[j] - step
        down, _ = loss_and_grad(agg.with_params(bumped), data)
        numeric = (up - down) / (2.0 * step)
        denom = max(abs(grad[j]), abs(numeric), 1e-6)
        worst = max(worst, abs(grad[j] - numeric) / denom)
    return worst


# ============= TRAINING =============


def evaluate(agg: AttentionAggregator, entities: Sequence[Entity]) -> Tuple[float, float]:
    """(mean cross-entropy, accuracy) of the learned aggregator"""
    return _data_loss(agg, prepare(entities))


def train(
    dataset: AggDataset, arch: AttentionAggregator, config: Optional[TrainConfig] = None
) -> Tuple[AttentionAggregator, TrainReport]:
    """
    Mini-batch gradient descent with a constant learning rate
    """
    config = config or TrainConfig()
    if len(dataset.train) == 0:
        raise RangeError("training split is empty")

    agg = AttentionAggregator(
        w1=arch.w1, b1=arch.b1, w2=arch.w2, decoder=arch.decoder, l2_lambda=config.l2_lambda
    )
    train_set = prepare(dataset.train)
    n = train_set.size
    rng = stream(config.seed, "train-shuffle")
    history: List[float] = []

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = train_set if config.batch_size >= n else train_set.subset(order[start : start + config.batch_size])
            objective, grad = loss_and_grad(agg, batch)
            if not (math.isfinite(objective) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(f"non-finite objective at epoch {epoch}")
            agg = agg.with_params(agg.param_vector() - config.learning_rate * grad)

        epoch_loss, _ = _data_loss(agg, train_set)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"training loss became non-finite at epoch {epoch}")
        history.append(epoch_loss)
        logger.debug(f"epoch {epoch + 1}/{config.epochs}: train loss {epoch_loss:.5f}")

    train_loss, _ = _data_loss(agg, train_set)
    test_loss, test_acc = evaluate(agg, dataset.test) if dataset.test else (float("nan"), float("nan"))
    d_eff = effective_dimension(agg, config.d_eff_threshold)
    bound = pac_bayes_bound(train_loss, n, d_eff, config.delta)

    report = TrainReport(
        train_loss=train_loss,
        test_loss=test_loss,
        gap=test_loss - train_loss,
        d_eff=d_eff,
        bound=bound,
        test_accuracy=test_acc,
        num_params=agg.num_params,
        n_train=n,
        loss_history=history,
        config=config,
    )
    logger.info(
        f"trained on N={n}: train {train_loss:.4f} test {test_loss:.4f} "
        f"acc {test_acc:.3f} d_eff {d_eff}/{agg.num_params}"
    )
    return agg, report


# ============= BOUNDS =============


def effective_dimension(agg: AttentionAggregator, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Number of parameters with |theta_j| >= threshold"""
    return int(np.count_nonzero(np.abs(agg.param_vector()) >= threshold))


def pac_bayes_bound(train_loss: float, N: int, d_eff: int, delta: float = 0.05) -> float:
    """
    sqrt( 2 (L + 1/N) (d_eff ln(e N / d_eff) + ln(2/delta)) / N ), natural logs
    """
    if N <= 0:
        raise RangeError(f"N must be positive, got {N}")
    if not 0.0 < delta < 1.0:
        raise RangeError(f"delta must lie in (0, 1), got {delta}")
    d = max(int(d_eff), 1)
    complexity = d * math.log(math.e * N / d) + math.log(2.0 / delta)
    if complexity <= 0:
        return math.inf
    value = math.sqrt(2.0 * (train_loss + 1.0 / N) * complexity / N)
    if value >= 1.0:
        logger.debug(f"vacuous generalization bound {value:.3f} (N={N}, d_eff={d})")
    return value


def stability_bound(lipschitz: float, lam: float, N: int) -> float:
    """2 L / (lambda N)"""
    if lam <= 0:
        raise RangeError(f"lambda must be > 0, got {lam}")
    if N < 1:
        raise RangeError(f"N must be >= 1, got {N}")
    return 2.0 * lipschitz / (lam * N)


def loss_lipschitz(agg: AttentionAggregator) -> float:
    """|Y| / floor: cross-entropy is Lipschitz in p once every entry is >= floor/|Y|"""
    floor = agg.decoder.floor
    return math.inf if floor == 0 else agg.decoder.num_labels / floor
