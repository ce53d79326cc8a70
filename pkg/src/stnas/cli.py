"""Command-line entry point: search, enumerate, evaluate, replay."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .arch import ArchSpec, ModelConfig, SpecError
from .backends import BackendError, ScriptError
from .memory import HISTORY_ORDERS
from .metrics import evaluate
from .policy import PolicyConfig, StagePlan, ThoughtMode
from .search import (
    BackendConfig,
    DataSource,
    RunConfig,
    RunLog,
    evaluate_spec,
    prepare_data,
    replay,
    run_search,
    sweep,
    write_sweep_csv,
)
from .st_ops import ConfigError, InputError
from .training import TrainConfig

log = logging.getLogger("stnas")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_data_args(p):
    p.add_argument("--data", help="readings CSV (rows are steps, columns are nodes)")
    p.add_argument("--adj", help="edge list CSV: src,dst,weight")
    p.add_argument("--synthetic", metavar="N:STEPS", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)


def _add_model_args(p):
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-steps", type=int, default=None, help="cap on optimizer steps")
    p.add_argument("--hidden-size", type=int, default=16)
    p.add_argument("--attn-heads", type=int, default=2)
    p.add_argument("--graph-order", type=int, default=2)
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stnas", description="LLM-guided architecture search for "
                                               "spatial-temporal forecasting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("search", help="run the search loop")
    _add_data_args(s)
    _add_model_args(s)
    s.add_argument("--config", help="key=value file; command-line flags override it")
    s.add_argument("--rounds", type=int, default=15)
    s.add_argument("--explore-ratio", type=float, default=0.6)
    s.add_argument("--mode", choices=["cot", "tot"], default="cot")
    s.add_argument("--llm-url")
    s.add_argument("--llm-model", default="llama3")
    s.add_argument("--api-key-env", default="LLM_API_KEY")
    s.add_argument("--temperature", type=float, default=0.7)
    s.add_argument("--scripted", help="scripted policy JSON file")
    s.add_argument("--history-order", choices=HISTORY_ORDERS, default="worst_first")
    s.add_argument("--out", default="run")

    e = sub.add_parser("enumerate", help="score all 729 architectures into a CSV")
    _add_data_args(e)
    _add_model_args(e)
    e.add_argument("--config")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", default="sweep.csv")

    v = sub.add_parser("evaluate", help="score one architecture")
    _add_data_args(v)
    _add_model_args(v)
    v.add_argument("--config")
    v.add_argument("--spec", required=True,
                   help='six codes like "STP,STT,TTS,STP,STT,TTS" or an architecture JSON object')

    r = sub.add_parser("replay", help="re-render the prompts of a logged run")
    r.add_argument("log", help="path to log.jsonl")
    return parser


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, argv, args):
    """Reparse with config-file values as defaults so explicit flags win."""
    if not getattr(args, "config", None):
        return args
    values = read_config_file(args.config)
    sp = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in known or key in ("help", "config"):
            raise ConfigError(f"unknown config key {key!r}")
        action = known[key]
        try:
            defaults[key] = action.type(raw) if action.type else raw
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
        if action.choices and defaults[key] not in action.choices:
            raise ConfigError(f"{key} must be one of {list(action.choices)}")
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _source(args) -> DataSource:
    if args.synthetic:
        if args.data or args.adj:
            raise ConfigError("give either --synthetic or --data/--adj, not both")
        return DataSource.synthetic(args.synthetic)
    if not args.data and not args.adj:
        raise ConfigError("no dataset: give --synthetic N:steps or --data and --adj")
    return DataSource(readings_path=args.data, adjacency_path=args.adj)


def _model_train(args):
    mc = ModelConfig(hidden_size=args.hidden_size, attn_dim=args.hidden_size,
                     attn_heads=args.attn_heads, ffn_dim=2 * args.hidden_size,
                     graph_order=args.graph_order, max_graph_order=max(2, args.graph_order),
                     dtype=args.dtype)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                     max_steps=args.max_steps)
    return mc, tc


def _parse_spec(text: str) -> ArchSpec:
    text = text.strip()
    if text.startswith("{"):
        obj = json.loads(text)
        return ArchSpec.from_dict(obj.get("Combination of modules", obj))
    return ArchSpec.from_codes(text)


def _cmd_search(args) -> int:
    mc, tc = _model_train(args)
    cfg = RunConfig(
        data=_source(args), model=mc, train=tc,
        plan=StagePlan(args.rounds, args.explore_ratio),
        mode=ThoughtMode(args.mode),
        backend=BackendConfig(scripted_path=args.scripted, base_url=args.llm_url,
                              model=args.llm_model, api_key_env=args.api_key_env,
                              temperature=args.temperature),
        policy=PolicyConfig(history_order=args.history_order),
        seed=args.seed, out_dir=args.out)
    cfg.backend.build(cfg.seed)  # fail fast before any data work
    res = run_search(cfg)
    print(json.dumps({"best": res.best.to_dict(), "mae": res.metrics.mae,
                      "mape": res.metrics.mape, "rmse": res.metrics.rmse}))
    return EXIT_OK


def _cmd_enumerate(args) -> int:
    mc, tc = _model_train(args)
    source = _source(args)
    prep = prepare_data(source, args.seed, mc)

    def progress(done, total):
        if done % 50 == 0 or done == total:
            log.info("swept %d/%d", done, total)

    results = sweep(prep, mc, tc, args.seed, workers=args.workers, progress=progress)
    write_sweep_csv(results, args.out)
    best = min(results, key=lambda r: r[1].mae)
    print(json.dumps({"rows": len(results), "best": str(best[0]), "mae": best[1].mae}))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    mc, tc = _model_train(args)
    prep = prepare_data(_source(args), args.seed, mc)
    spec = _parse_spec(args.spec)
    met, model = evaluate_spec(spec, prep, mc, tc, args.seed)
    out = {"spec": spec.to_dict(), "valid": dataclasses.asdict(met)}
    if model is not None:
        out["test"] = dataclasses.asdict(evaluate(model, prep.test, prep.norm, prep.adj))
    print(json.dumps(out))
    return EXIT_OK


def _cmd_replay(args) -> int:
    problems = replay(RunLog.read(args.log))
    for p in problems:
        print(p)
    if problems:
        return EXIT_FAIL
    print("all prompts reproduced")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, argv, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    handler = {"search": _cmd_search, "enumerate": _cmd_enumerate,
               "evaluate": _cmd_evaluate, "replay": _cmd_replay}[args.command]
    try:
        return handler(args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, InputError, ScriptError, SpecError, OSError,
            json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
