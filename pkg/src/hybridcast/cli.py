"""Command-line entry point: ingest, synth, backtest, calibrate.

Exit codes: 0 success (possibly with warnings), 1 usage or config error,
2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import pandas as pd
import yaml

from .backtest import emit_plots, emit_report, intervals_to_csv, run_backtest
from .config import METHODS, BacktestConfig, load_config
from .errors import CalibrationError, ConfigError, HybridcastError
from .intervals import calibrate_inflation
from .residual import trace_to_csv
from .series import interpolate_missing, parse_csv, to_csv
from .stacking import weights_to_csv
from .synthetic import synthetic_load

log = logging.getLogger("hybridcast")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SYNTHETIC = "synthetic"
SNAPSHOT = "config.resolved.yaml"


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("FF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p.read_bytes()


def load_series(path: str):
    if path == SYNTHETIC:
        return synthetic_load()
    series = parse_csv(_read_bytes(path), name=Path(path).stem)
    return interpolate_missing(series)


# --- subcommands ----------------------------------------------------------------


def cmd_ingest(args) -> int:
    raw = parse_csv(_read_bytes(args.input), name=Path(args.input).stem)
    gaps = raw.n_missing
    clean = interpolate_missing(raw)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_csv(clean))
    noun = "gap" if gaps == 1 else "gaps"
    print(f"{len(clean)} rows, {gaps} {noun} filled -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    series = synthetic_load(length=args.length, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_csv(series))
    print(f"{len(series)} rows -> {out}")
    return EXIT_OK


def _resolve(args) -> tuple[str, BacktestConfig]:
    doc: dict = {}
    if args.config:
        try:
            doc = yaml.safe_load(_read_bytes(args.config)) or {}
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {args.config} must be a key/value mapping")
    doc = dict(doc)
    input_path = args.input or doc.pop("input", None)
    doc.pop("input", None)
    if not input_path:
        raise UsageError("no input given: pass --input or set 'input' in the config")
    cfg = load_config(
        doc,
        seed=args.seed,
        methods=args.methods,
        context_lens=args.context_hours,
        horizon=args.horizon,
    )
    return input_path, cfg


def cmd_backtest(args) -> int:
    input_path, cfg = _resolve(args)
    series = load_series(input_path)
    report = run_backtest(series, cfg, workers=args.workers)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_bytes(emit_report(report, "csv"))
    (out / "report.json").write_bytes(emit_report(report, "json"))
    if report.weights:
        (out / "stack_weights.csv").write_text(weights_to_csv(report.weights))
    for ctx, df in sorted(report.test_intervals.items()):
        (out / f"intervals_test_{ctx}h.csv").write_text(intervals_to_csv(df))
    for ctx, df in sorted(report.validation_intervals.items()):
        (out / f"intervals_validation_{ctx}h.csv").write_text(intervals_to_csv(df))
    for ctx, trace in sorted(report.feedback_traces.items()):
        (out / f"feedback_trace_{ctx}h.csv").write_text(trace_to_csv(trace))
    emit_plots(report, out)
    snapshot = {"input": input_path, **cfg.dump()}
    (out / SNAPSHOT).write_text(yaml.safe_dump(snapshot, sort_keys=True))

    for g in report.gaps:
        print(f"warning: {g.method} @ {g.context_hours}h: {g.reason}", file=sys.stderr)
    n_ok = sum(not r.is_gap for r in report.rows)
    print(f"{n_ok} report rows ({len(report.gaps)} gap(s)) -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    run = Path(args.run)
    files = sorted(run.glob("intervals_validation_*h.csv"))
    if not files:
        print(f"error: no validation interval files (intervals_validation_*h.csv) in {run}", file=sys.stderr)
        return EXIT_DATA
    result = {"target": args.target, "max_factor": args.max_factor, "contexts": {}}
    for path in files:
        ctx = path.stem.removeprefix("intervals_validation_").removesuffix("h")
        df = pd.read_csv(path)
        entry: dict = {"n": len(df)}
        try:
            factor, cov = calibrate_inflation((df["lower"], df["upper"]), df["actual"], args.target, args.max_factor)
            entry.update(factor=factor, coverage=cov, reached=True)
        except CalibrationError as exc:
            print(f"warning: {ctx}h: {exc}", file=sys.stderr)
            entry.update(factor=exc.factor, coverage=exc.achieved_coverage, reached=False)
        result["contexts"][ctx] = entry
        print(f"{ctx}h: inflation {entry['factor']:.2f}, validation coverage {entry['coverage']:.4f}")
    out = Path(args.out) if args.out else run / "inflation.json"
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def _csv_list(conv):
    def parse(text: str):
        try:
            return [conv(x.strip()) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list {text!r}") from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridcast", description="Hourly load forecast backtesting with bagging, stacking and residual correction.")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="parse, regularize and interpolate a timestamp,value CSV")
    ing.add_argument("--input", required=True)
    ing.add_argument("--out", required=True, help="cleaned CSV path")
    ing.set_defaults(func=cmd_ingest)

    syn = sub.add_parser("synth", help="write the bundled synthetic load series")
    syn.add_argument("--out", required=True)
    syn.add_argument("--length", type=int, default=5000)
    syn.add_argument("--seed", type=int, default=0)
    syn.set_defaults(func=cmd_synth)

    bt = sub.add_parser("backtest", help="run the sliding-window backtest grid")
    bt.add_argument("--input", help=f"series CSV, or '{SYNTHETIC}' for the bundled series")
    bt.add_argument("--config", help="YAML file of BacktestConfig fields (flags override)")
    bt.add_argument("--out", required=True, help="output directory")
    bt.add_argument("--seed", type=int)
    bt.add_argument("--workers", type=int, default=1)
    bt.add_argument("--methods", type=_csv_list(str), help=f"comma list from {','.join(METHODS)}")
    bt.add_argument("--context-hours", type=_csv_list(int), help="comma list, e.g. 168,504,840")
    bt.add_argument("--horizon", type=int)
    bt.set_defaults(func=cmd_backtest)

    cal = sub.add_parser("calibrate", help="fit interval inflation on a backtest's validation intervals")
    cal.add_argument("--run", required=True, help="backtest output directory")
    cal.add_argument("--out", help="defaults to <run>/inflation.json")
    cal.add_argument("--target", type=float, default=0.95)
    cal.add_argument("--max-factor", type=float, default=2.0)
    cal.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, HybridcastError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
