"""Dataset ingestion, synthetic traffic-like data and sliding-window splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .st_ops import InputError, _row_normalize


class DataParseError(InputError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


@dataclass
class RawDataset:
    readings: np.ndarray  # steps x N
    adjacency: np.ndarray  # N x N
    name: str = "dataset"

    def __post_init__(self):
        r = np.asarray(self.readings, dtype=np.float64)
        a = np.asarray(self.adjacency, dtype=np.float64)
        if r.ndim != 2:
            raise InputError(f"readings must be steps x nodes, got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise InputError("readings contain non-finite values")
        if a.shape != (r.shape[1], r.shape[1]):
            raise InputError(f"adjacency shape {a.shape} does not match {r.shape[1]} nodes")
        if np.any(a < 0):
            raise InputError("adjacency has negative weights")
        self.readings = r
        self.adjacency = a

    @property
    def node_count(self) -> int:
        return self.readings.shape[1]

    @property
    def step_count(self) -> int:
        return self.readings.shape[0]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_dataset(readings_path, adjacency_path, name: str | None = None) -> RawDataset:
    """Read a readings CSV (rows = steps, columns = nodes, optional header)
    and an edge-list CSV of ``src,dst,weight`` with 0-based node ids."""
    rows = []
    width = None
    with open(readings_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if lineno == 1 and not all(_is_number(c) for c in cells):
                width = len(cells)
                continue  # header
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise DataParseError(readings_path, lineno,
                                     f"expected {width} columns, found {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataParseError(readings_path, lineno, "non-numeric cell") from None
    if not rows:
        raise DataParseError(readings_path, 1, "no readings")
    readings = np.array(rows)
    n = readings.shape[1]

    A = np.zeros((n, n))
    with open(adjacency_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if lineno == 1 and not all(_is_number(c) for c in cells):
                continue
            if len(cells) != 3:
                raise DataParseError(adjacency_path, lineno, "expected src,dst,weight")
            try:
                src, dst, w = int(cells[0]), int(cells[1]), float(cells[2])
            except ValueError:
                raise DataParseError(adjacency_path, lineno, "non-numeric edge") from None
            if not (0 <= src < n and 0 <= dst < n):
                raise DataParseError(adjacency_path, lineno,
                                     f"node id out of range for {n} nodes")
            if w < 0 or not np.isfinite(w):
                raise DataParseError(adjacency_path, lineno, "edge weight must be finite and >= 0")
            A[src, dst] = w
    return RawDataset(readings=readings, adjacency=A, name=name or str(readings_path))


def synthesize_dataset(seed: int, N: int, steps: int, history: int = 12, horizon: int = 12,
                       period: int = 288, noise: float = 0.5, base_level: float = 50.0,
                       radius: float = 0.5) -> RawDataset:
    """Seeded traffic-like series on a random geometric graph.

    ``x[t+1] = 0.6 x[t] + 0.3 P_f x[t] + seasonal(t) + noise`` with a daily
    cycle of ``period`` steps (5-minute sampling), shifted by ``base_level``
    so readings stay positive.
    """
    if N < 2:
        raise InputError("need at least 2 nodes")
    if steps < 10 * (history + horizon):
        raise InputError(f"need at least {10 * (history + horizon)} steps, got {steps}")
    rng = np.random.default_rng(seed)
    pos = rng.random((N, 2))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    A = np.where((dist < radius) & ~np.eye(N, dtype=bool), np.exp(-(dist / radius) ** 2), 0.0)
    P_f = _row_normalize(A)
    amp = rng.uniform(5.0, 15.0, size=N)
    phase = rng.uniform(0.0, 2 * np.pi, size=N)
    x = np.zeros((steps, N))
    x[0] = rng.normal(0.0, 1.0, size=N)
    for t in range(steps - 1):
        seasonal = amp * np.sin(2 * np.pi * t / period + phase) * 0.1
        x[t + 1] = 0.6 * x[t] + 0.3 * (P_f @ x[t]) + seasonal + rng.normal(0.0, noise, size=N)
    return RawDataset(readings=x + base_level, adjacency=A, name=f"synthetic-{N}x{steps}-s{seed}")


@dataclass(frozen=True)
class Normalizer:
    mean: float
    std: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        mean = float(np.mean(values))
        std = float(np.std(values))
        return cls(mean=mean, std=std if std > 0 else 1.0)

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # M x S x N x 1, normalized
    targets: np.ndarray  # M x P x N, normalized
    starts: np.ndarray  # absolute index of each window's first input step
    S: int
    P: int
    split: str

    def __len__(self) -> int:
        return self.inputs.shape[0]


def split_lengths(steps: int, ratios=(0.7, 0.1, 0.2)) -> tuple:
    """Step counts of the train/valid/test segments, in time order."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InputError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = int(round(steps * ratios[0]))
    n_valid = int(round(steps * ratios[1]))
    return n_train, n_valid, steps - n_train - n_valid


def window_count(steps: int, S: int, P: int) -> int:
    return max(steps - S - P + 1, 0)


def _windows(z: np.ndarray, offset: int, S: int, P: int, split: str) -> WindowedDataset:
    m = window_count(len(z), S, P)
    if m < 1:
        raise InputError(f"{split} split has {len(z)} steps, too few for one window of {S}+{P}")
    idx = np.arange(m)[:, None]
    inputs = z[idx + np.arange(S)[None, :]][..., None]
    targets = z[idx + S + np.arange(P)[None, :]]
    return WindowedDataset(inputs=inputs, targets=targets, starts=offset + np.arange(m),
                           S=S, P=P, split=split)


def window_split(raw: RawDataset, S: int = 12, P: int = 12, ratios=(0.7, 0.1, 0.2)):
    """Temporal train/valid/test split; windows never straddle a boundary.

    Returns ``(train, valid, test, normalizer)``; the normalizer is fit on
    training readings only.
    """
    n_train, n_valid, _ = split_lengths(raw.step_count, ratios)
    norm = Normalizer.fit(raw.readings[:n_train])
    z = norm.apply(raw.readings)
    train = _windows(z[:n_train], 0, S, P, "train")
    valid = _windows(z[n_train:n_train + n_valid], n_train, S, P, "valid")
    test = _windows(z[n_train + n_valid:], n_train + n_valid, S, P, "test")
    return train, valid, test, norm
