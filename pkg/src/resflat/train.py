"""RMSprop training with frozen per-epoch evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset, batches
from .model import ArchitectureSpec, ModelParams, backward, build_model, forward
from .tensor import log_softmax, softmax_cross_entropy

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became NaN/Inf during training."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 1
    batch_size: int = 512
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if not self.rmsprop_epsilon > 0:
            raise ValueError("rmsprop_epsilon must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    train_accuracy: float
    val_accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def init_rmsprop_state(params: ModelParams) -> list[np.ndarray]:
    """One zero accumulator per parameter block."""
    return [np.zeros_like(b) for b in params.blocks()]


def rmsprop_step(params: ModelParams, grads: ModelParams, state: list[np.ndarray],
                 config: TrainConfig) -> tuple[ModelParams, list[np.ndarray]]:
    """One non-centred RMSprop update; inputs are left untouched.

    ``v' = rho v + (1 - rho) g^2``, ``theta' = theta - lr g / (sqrt(v') + eps)``
    """
    rho, lr, eps = config.rmsprop_decay, config.learning_rate, config.rmsprop_epsilon
    p_blocks, g_blocks = params.blocks(), grads.blocks()
    if len(p_blocks) != len(g_blocks) or len(state) != len(p_blocks):
        raise ValueError("params, grads and optimizer state have different block counts")
    new_p, new_v = [], []
    for i, (theta, g, v) in enumerate(zip(p_blocks, g_blocks, state)):
        if theta.shape != g.shape or theta.shape != v.shape:
            raise ValueError(f"block {i}: shape mismatch {theta.shape}, {g.shape}, {v.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter block {i} "
                                   f"(max |g| = {np.nanmax(np.abs(g))})")
        v = rho * v + (1.0 - rho) * (g * g)
        new_p.append(theta - lr * g / (np.sqrt(v) + eps))
        new_v.append(v)
    return ModelParams.from_blocks(new_p), new_v


def evaluate(params: ModelParams, spec: ArchitectureSpec, dataset: Dataset,
             batch_size: int = 512) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over the whole dataset (batched).

    Ties in the argmax go to the lowest class index.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total, correct = 0.0, 0
    for start, stop in batches(n, batch_size):
        logits, _ = forward(params, spec, dataset.images[start:stop], keep_cache=False)
        labels = dataset.labels[start:stop]
        total += float(-log_softmax(logits)[np.arange(stop - start), labels].sum())
        correct += int((np.argmax(logits, axis=1) == labels).sum())
    return total / n, correct / n


def train(spec: ArchitectureSpec, train_set: Dataset, val_set: Dataset, config: TrainConfig,
          params: ModelParams | None = None, return_params: bool = False):
    """Train ``spec`` from its seeded initialization and record per-epoch metrics.

    Batches follow file order every epoch. After each epoch both splits are
    evaluated with the parameters frozen. Returns the metrics list, or
    ``(metrics, final_params)`` when ``return_params`` is set.
    """
    for ds in (train_set, val_set):
        if ds.channels != spec.input_channels:
            raise ValueError(f"{ds.name}/{ds.split} has {ds.channels} channels, "
                             f"spec expects {spec.input_channels}")
    params = build_model(spec) if params is None else params
    state = init_rmsprop_state(params)
    plan = batches(len(train_set), config.batch_size)
    history: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        for step, (start, stop) in enumerate(plan):
            try:
                logits, cache = forward(params, spec, train_set.images[start:stop])
                loss, grad = softmax_cross_entropy(logits, train_set.labels[start:stop])
                params, state = rmsprop_step(params, backward(params, spec, cache, grad), state, config)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {step}: {exc}") from exc
        tl, ta = evaluate(params, spec, train_set, config.batch_size)
        vl, va = evaluate(params, spec, val_set, config.batch_size)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise TrainingDiverged(f"non-finite evaluation loss after epoch {epoch}")
        history.append(EpochMetrics(epoch, tl, vl, ta, va))
        logger.info("epoch %d: train %.4f (%.3f) val %.4f (%.3f)", epoch, tl, ta, vl, va)
    if return_params:
        return history, params
    return history
