"""The search loop, run persistence, log replay and the exhaustive sweep."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .arch import ArchSpec, ModelConfig, enumerate_space, init_model
from .backends import PolicyBackend, RemoteBackend, ScriptedBackend
from .data import Normalizer, WindowedDataset, load_dataset, synthesize_dataset, window_split
from .memory import Bank, EvalRecord
from .metrics import Metrics, evaluate
from .policy import (
    PolicyConfig,
    StagePlan,
    ThoughtMode,
    derive_seed,
    generate_cot,
    generate_tot,
    render_exchange,
    stage_for_round,
)
from .prompts import Stage
from .st_ops import AdjacencySet, ConfigError, build_adjacency_set
from .training import TrainConfig, TrainingDivergence, quick_tune

log = logging.getLogger(__name__)

SWEEP_HEADER = ["layer1", "layer2", "layer3", "layer4", "layer5", "layer6", "mae", "mape", "rmse"]


@dataclass(frozen=True)
class DataSource:
    readings_path: str | None = None
    adjacency_path: str | None = None
    synthetic_nodes: int | None = None
    synthetic_steps: int | None = None

    def __post_init__(self):
        has_files = self.readings_path is not None or self.adjacency_path is not None
        has_synth = self.synthetic_nodes is not None or self.synthetic_steps is not None
        if has_files == has_synth:
            raise ConfigError("give either --data/--adj files or --synthetic N:steps")
        if has_files:
            for p in (self.readings_path, self.adjacency_path):
                if p is None or not os.path.exists(p):
                    raise ConfigError(f"data file not found: {p}")
        elif self.synthetic_nodes is None or self.synthetic_steps is None:
            raise ConfigError("synthetic data needs both a node count and a step count")

    @classmethod
    def synthetic(cls, spec: str) -> "DataSource":
        try:
            n, steps = (int(x) for x in spec.split(":"))
        except ValueError:
            raise ConfigError(f"--synthetic expects N:steps, got {spec!r}") from None
        return cls(synthetic_nodes=n, synthetic_steps=steps)


@dataclass(frozen=True)
class BackendConfig:
    scripted_path: str | None = None
    base_url: str | None = None
    model: str = "llama3"
    api_key_env: str = "LLM_API_KEY"
    temperature: float = 0.7
    timeout: float = 120.0
    max_retries: int = 3

    def build(self, seed: int) -> PolicyBackend:
        if self.scripted_path is not None:
            if not os.path.exists(self.scripted_path):
                raise ConfigError(f"scripted policy not found: {self.scripted_path}")
            return ScriptedBackend.from_file(self.scripted_path, seed=seed)
        if self.base_url:
            return RemoteBackend(self.base_url, self.model, self.api_key_env, self.temperature,
                                 self.timeout, self.max_retries)
        raise ConfigError("no policy backend: give --scripted or --llm-url")


@dataclass(frozen=True)
class RunConfig:
    data: DataSource
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    plan: StagePlan = field(default_factory=StagePlan)
    mode: ThoughtMode = ThoughtMode.COT
    backend: BackendConfig = field(default_factory=BackendConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    out_dir: str | None = None


@dataclass
class Prepared:
    train: WindowedDataset
    valid: WindowedDataset
    test: WindowedDataset
    norm: Normalizer
    adj: AdjacencySet
    name: str


def prepare_data(source: DataSource, seed: int, model: ModelConfig) -> Prepared:
    if source.synthetic_nodes is not None:
        raw = synthesize_dataset(seed, source.synthetic_nodes, source.synthetic_steps,
                                 history=model.history, horizon=model.horizon)
    else:
        raw = load_dataset(source.readings_path, source.adjacency_path)
    train, valid, test, norm = window_split(raw, model.history, model.horizon)
    return Prepared(train, valid, test, norm, build_adjacency_set(raw.adjacency), raw.name)


def model_seed(seed: int, spec: ArchSpec, occurrence: int) -> int:
    """Seed for the ``occurrence``-th evaluation of ``spec`` within a run."""
    return derive_seed(seed, str(spec), occurrence)


def evaluate_spec(spec: ArchSpec, prep: Prepared, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  seed: int, occurrence: int = 0, split: str = "valid"):
    """Quick-tune a fresh model for ``spec`` and score it; returns (metrics, model)."""
    s = model_seed(seed, spec, occurrence)
    cfg = dataclasses.replace(model_cfg, num_nodes=prep.adj.n)
    m = init_model(spec, cfg, s)
    data = getattr(prep, split)
    try:
        quick_tune(m, prep.train, prep.adj, dataclasses.replace(train_cfg, seed=s))
    except TrainingDivergence as exc:
        log.warning("%s diverged: %s", spec, exc)
        return Metrics.failed(len(data)), None
    met = evaluate(m, data, prep.norm, prep.adj)
    if not math.isfinite(met.mae):
        return Metrics.failed(len(data)), None
    return met, m


# --------------------------------------------------------------------------
# run log


def _metrics_dict(met: Metrics) -> dict:
    return {"mae": met.mae, "mape": met.mape, "rmse": met.rmse}


@dataclass
class RunLog:
    entries: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def lines(self) -> list:
        return [json.dumps(e) for e in self.entries] + ([json.dumps(self.final)] if self.final
                                                          else [])

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read(cls, path) -> "RunLog":
        out = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
                if obj.get("final"):
                    out.final = obj
                else:
                    out.entries.append(obj)
        return out


def transcript_digest(exchanges) -> str:
    h = hashlib.sha256()
    for ex in exchanges:
        h.update(json.dumps(ex, sort_keys=True).encode())
    return h.hexdigest()


@dataclass
class SearchResult:
    best: ArchSpec
    metrics: Metrics
    log: RunLog
    bank: Bank
    test_metrics: Metrics | None = None


def run_search(cfg: RunConfig, backend: PolicyBackend | None = None) -> SearchResult:
    """Propose, tune and score one architecture per round; return the bank's best."""
    prep = prepare_data(cfg.data, cfg.seed, cfg.model)
    backend = backend if backend is not None else cfg.backend.build(cfg.seed)
    plan, T = cfg.plan, cfg.plan.total_rounds
    bank = Bank()
    runlog = RunLog()
    seen: dict = {}
    best_model, best_round = None, None
    generate = generate_cot if cfg.mode is ThoughtMode.COT else generate_tot

    for t in range(1, T + 1):
        stage = stage_for_round(t, plan)
        start = time.perf_counter()
        gen = generate(backend, stage, bank, t, T, cfg.policy, seed=cfg.seed)
        occurrence = seen.get(gen.spec, 0)
        seen[gen.spec] = occurrence + 1
        met, model = evaluate_spec(gen.spec, prep, cfg.model, cfg.train, cfg.seed, occurrence)
        rec = EvalRecord(round=t, spec=gen.spec, metrics=met, stage=stage.value)
        bank.insert(rec)
        if bank.best() is rec:
            best_model, best_round = model, t
        transcript = [ex.to_dict() for ex in gen.transcript]
        runlog.entries.append({
            "round": t,
            "stage": stage.value,
            "spec": gen.spec.to_dict(),
            "metrics": _metrics_dict(met),
            "llm_call_count": gen.call_count,
            "fallback": gen.fallback,
            "wall_time_ms": round((time.perf_counter() - start) * 1000.0, 3),
            "transcript_digest": transcript_digest(transcript),
            "transcript": transcript,
        })
        log.info("round %d/%d [%s] %s -> MAE %.4f (%d calls)", t, T, stage.value, gen.spec,
                 met.mae, gen.call_count)

    best = bank.best()
    test_met = None
    if best_model is not None and best.round == best_round:
        test_met = evaluate(best_model, prep.test, prep.norm, prep.adj)
    runlog.final = {
        "final": True,
        "best_round": best.round,
        "best_spec": best.spec.to_dict(),
        "best_metrics": _metrics_dict(best.metrics),
        "best_test_metrics": _metrics_dict(test_met) if test_met else None,
        "total_rounds": T,
        "explore_ratio": plan.explore_ratio,
        "mode": cfg.mode.value,
        "history_order": cfg.policy.history_order,
        "dataset_description": cfg.policy.dataset_description,
        "normalizer": prep.norm.to_dict(),
        "seed": cfg.seed,
    }
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        runlog.write(os.path.join(cfg.out_dir, "log.jsonl"))
        bank.persist(os.path.join(cfg.out_dir, "bank.jsonl"))
    return SearchResult(best.spec, best.metrics, runlog, bank, test_met)


def replay(runlog: RunLog) -> list:
    """Re-render every logged prompt and list the mismatches (empty when faithful)."""
    fin = runlog.final
    if not fin:
        raise ValueError("run log has no final entry")
    pcfg = PolicyConfig(history_order=fin["history_order"],
                        dataset_description=fin["dataset_description"])
    T = fin["total_rounds"]
    bank = Bank()
    problems = []
    for entry in runlog.entries:
        t = entry["round"]
        stage = Stage(entry["stage"])
        for i, ex in enumerate(entry["transcript"]):
            system, user = render_exchange(ex["kind"], stage, t, T, ex["prefix"], ex["note"],
                                           bank, pcfg)
            if system != ex["system"]:
                problems.append(f"round {t} exchange {i}: background differs")
            if user != ex["user"]:
                problems.append(f"round {t} exchange {i}: instruction differs")
        if transcript_digest(entry["transcript"]) != entry["transcript_digest"]:
            problems.append(f"round {t}: transcript digest differs")
        m = entry["metrics"]
        bank.insert(EvalRecord(round=t, spec=ArchSpec.from_dict(entry["spec"]), stage=stage.value,
                               metrics=Metrics(mae=m["mae"], mape=m["mape"], rmse=m["rmse"])))
    return problems


# --------------------------------------------------------------------------
# exhaustive sweep

_WORKER = {}


def _sweep_init(prep, model_cfg, train_cfg, seed):
    _WORKER.update(prep=prep, model_cfg=model_cfg, train_cfg=train_cfg, seed=seed)


def _sweep_one(spec: ArchSpec):
    w = _WORKER
    met, _ = evaluate_spec(spec, w["prep"], w["model_cfg"], w["train_cfg"], w["seed"])
    return spec, met


def sweep(prep: Prepared, model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int,
          specs=None, workers: int = 1, progress=None) -> list:
    """Evaluate every spec (default: the whole space) exactly as round 1 of a run would."""
    specs = enumerate_space() if specs is None else list(specs)
    results = []
    if workers <= 1:
        _sweep_init(prep, model_cfg, train_cfg, seed)
        for i, spec in enumerate(specs):
            results.append(_sweep_one(spec))
            if progress:
                progress(i + 1, len(specs))
        return results
    with ProcessPoolExecutor(workers, initializer=_sweep_init,
                             initargs=(prep, model_cfg, train_cfg, seed)) as pool:
        for i, res in enumerate(pool.map(_sweep_one, specs, chunksize=4)):
            results.append(res)
            if progress:
                progress(i + 1, len(specs))
    return results


def _fmt_float(x) -> str:
    return "" if x is None else repr(float(x))


def write_sweep_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for spec, met in results:
            w.writerow([k.value for k in spec.layers]
                       + [_fmt_float(met.mae), _fmt_float(met.mape), _fmt_float(met.rmse)])


def read_sweep_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != SWEEP_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in rows:
            spec = ArchSpec(tuple(row[:6]))
            mape = float(row[7]) if row[7] else None
            out.append((spec, Metrics(mae=float(row[6]), mape=mape, rmse=float(row[8]))))
    return out
