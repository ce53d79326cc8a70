"""Short Adam fine-tuning used to score a candidate architecture."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .arch import ModelInstance, forward
from .data import WindowedDataset
from .st_ops import AdjacencySet, ConfigError, InputError

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"training loss became non-finite in epoch {epoch} (step {step})")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dropout_active: bool = True
    max_steps: int | None = None  # optional cap on optimizer steps

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ConfigError("max_steps must be positive when set")


@dataclass
class TuneResult:
    model: ModelInstance
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


def mae_loss(pred: tn.Tensor, target) -> tn.Tensor:
    return tn.mean_all(tn.absolute(tn.sub(pred, target)))


def training_loss(m: ModelInstance, data: WindowedDataset, adj: AdjacencySet,
                  batch_size: int = 256) -> float:
    """MAE over every window in normalized units, dropout off."""
    total = 0.0
    with tn.no_grad():
        for lo in range(0, len(data), batch_size):
            pred = forward(m, data.inputs[lo:lo + batch_size], adj, training=False)
            total += float(np.abs(pred.data - data.targets[lo:lo + batch_size]).sum())
    return total / data.targets.size


def quick_tune(m: ModelInstance, train: WindowedDataset, adj: AdjacencySet,
               cfg: TrainConfig) -> TuneResult:
    """Adam on the MAE loss over seeded shuffled mini-batches, in place."""
    if train.inputs.shape[1:] != (m.cfg.history, m.cfg.num_nodes, m.cfg.input_dim):
        raise InputError(f"training windows {train.inputs.shape[1:]} do not match the model")
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(m.cfg.dtype)
    inputs = train.inputs.astype(dtype, copy=False)
    targets = train.targets.astype(dtype, copy=False)
    res = TuneResult(model=m)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses, sizes = [], []
        for lo in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = order[lo:lo + cfg.batch_size]
            # overflow shows up as a non-finite loss, checked just below
            with np.errstate(over="ignore", invalid="ignore"):
                pred = forward(m, inputs[idx], adj, training=cfg.dropout_active, rng=rng)
                loss = mae_loss(pred, targets[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergence(epoch, step)
            m.params.zero_grad()
            tn.backward(loss, m.params)
            m.params.adam_step(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            losses.append(value)
            sizes.append(len(idx))
            res.step_losses.append(value)
            step += 1
        if losses:
            # weight by batch size so a partial last batch counts per window
            res.epoch_losses.append(float(np.average(losses, weights=sizes)))
            log.debug("epoch %d: mean loss %.5f over %d steps", epoch, res.epoch_losses[-1],
                      len(losses))
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return res
