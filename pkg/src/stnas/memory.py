"""The sorted experience bank of evaluated architectures."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass

from .arch import ArchSpec, SpecError
from .metrics import Metrics

HISTORY_ORDERS = ("worst_first", "best_first")
EMPTY_HISTORY = "(no samples yet)"


class BankError(RuntimeError):
    """Contract violation on the bank (duplicate round, empty best)."""


class BankParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class EvalRecord:
    round: int
    spec: ArchSpec
    metrics: Metrics
    stage: str = "explore"

    @property
    def mae(self) -> float:
        return self.metrics.mae

    def sort_key(self):
        # descending MAE, then ascending round
        return (-self.metrics.mae, self.round)

    def to_json(self) -> str:
        obj = {
            "round": self.round,
            "stage": self.stage,
            "layers": self.spec.to_dict(),
            "mae": self.metrics.mae,
            "mape": self.metrics.mape,
            "rmse": self.metrics.rmse,
        }
        return json.dumps(obj)


def _fmt(x: float, spec: str) -> str:
    return format(x, spec) if math.isfinite(x) else "inf"


class Bank:
    """Records kept worst-first (descending validation MAE); ties by round."""

    def __init__(self, records=()):
        self.records: list[EvalRecord] = []
        self._rounds: set[int] = set()
        for rec in records:
            self.insert(rec)

    def insert(self, rec: EvalRecord) -> "Bank":
        if rec.round in self._rounds:
            raise BankError(f"round {rec.round} is already in the bank")
        keys = [r.sort_key() for r in self.records]
        self.records.insert(bisect.bisect_right(keys, rec.sort_key()), rec)
        self._rounds.add(rec.round)
        return self

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, Bank) and self.records == other.records

    def contains(self, spec: ArchSpec) -> bool:
        return any(r.spec == spec for r in self.records)

    def count(self, spec: ArchSpec) -> int:
        return sum(r.spec == spec for r in self.records)

    def best(self) -> EvalRecord:
        if not self.records:
            raise BankError("the bank is empty")
        return self.records[-1]

    def render_history(self, order: str = "worst_first") -> str:
        if order not in HISTORY_ORDERS:
            raise ValueError(f"history order must be one of {HISTORY_ORDERS}")
        if not self.records:
            return EMPTY_HISTORY
        recs = self.records if order == "worst_first" else self.records[::-1]
        lines = []
        for r in recs:
            mape = "n/a" if r.metrics.mape is None else _fmt(r.metrics.mape, ".2f")
            lines.append(f"Round {r.round}: {r.spec.to_json()} -> MAE {_fmt(r.mae, '.4f')}, "
                         f"MAPE {mape}%, RMSE {_fmt(r.metrics.rmse, '.4f')}")
        return "\n".join(lines)

    def persist(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Bank":
        bank = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise BankParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
                if not isinstance(obj, dict):
                    raise BankParseError(path, lineno, "record must be a JSON object")
                for key in ("round", "stage", "layers", "mae", "mape", "rmse"):
                    if key not in obj:
                        raise BankParseError(path, lineno, f"missing field {key!r}")
                try:
                    spec = ArchSpec.from_dict(obj["layers"])
                    rec = EvalRecord(round=int(obj["round"]), spec=spec, stage=str(obj["stage"]),
                                     metrics=Metrics(mae=float(obj["mae"]),
                                                     mape=None if obj["mape"] is None
                                                     else float(obj["mape"]),
                                                     rmse=float(obj["rmse"])))
                    bank.insert(rec)
                except (SpecError, TypeError, ValueError, BankError) as exc:
                    raise BankParseError(path, lineno, str(exc)) from None
        return bank
