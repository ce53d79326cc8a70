"""MAE, MAPE and RMSE on denormalized forecasts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .arch import ModelInstance, forward
from .data import Normalizer, WindowedDataset
from .st_ops import AdjacencySet, InputError

MAPE_THRESHOLD = 1e-4


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float | None  # percent; None when no target clears the threshold
    rmse: float
    window_count: int = field(default=0, compare=False)

    @classmethod
    def failed(cls, window_count: int = 0) -> "Metrics":
        """Sentinel for a round whose training diverged."""
        return cls(mae=math.inf, mape=None, rmse=math.inf, window_count=window_count)

    @property
    def is_failed(self) -> bool:
        return not math.isfinite(self.mae)

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mape": self.mape, "rmse": self.rmse,
                "window_count": self.window_count}


def compute_metrics(pred, target, mape_threshold: float = MAPE_THRESHOLD,
                    window_count: int | None = None) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise InputError("no entries to score")
    err = pred - target
    abs_err = np.abs(err)
    mae = float(np.mean(abs_err))
    rmse = float(np.sqrt(np.mean(err * err)))
    keep = np.abs(target) > mape_threshold
    mape = float(100.0 * np.mean(abs_err[keep] / np.abs(target[keep]))) if keep.any() else None
    if window_count is None:
        window_count = pred.shape[0] if pred.ndim > 1 else 1
    return Metrics(mae=mae, mape=mape, rmse=rmse, window_count=window_count)


def predict(m: ModelInstance, split: WindowedDataset, adj: AdjacencySet,
            batch_size: int = 256) -> np.ndarray:
    """Normalized predictions for every window, ``(M, P, N)``."""
    outs = []
    with tn.no_grad():
        for lo in range(0, len(split), batch_size):
            outs.append(forward(m, split.inputs[lo:lo + batch_size], adj, training=False).data)
    return np.concatenate(outs, axis=0)


def evaluate(m: ModelInstance, split: WindowedDataset, norm: Normalizer, adj: AdjacencySet,
             mape_threshold: float = MAPE_THRESHOLD) -> Metrics:
    if len(split) == 0:
        raise InputError(f"{split.split} split is empty")
    pred = norm.invert(predict(m, split, adj))
    target = norm.invert(split.targets)
    return compute_metrics(pred, target, mape_threshold, window_count=len(split))
