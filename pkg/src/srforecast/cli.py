"""Command-line entry point: simulate, train, evaluate and reproduce."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .config import DEFAULTS, METHODS, ConfigError, dump_config, load_config
from .dataset import build_windows, format_series
from .models import load_checkpoint, save_checkpoint
from .simulators import PRESETS, SimulationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TOLERANCE = 4



def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="TOML run configuration")
    p.add_argument("--output-dir", "-o", help="directory for output files")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--input", "-i", help="series file (overrides the preset)")
    p.add_argument("--duration", type=float, help="simulated time units, including burn-in")
    p.add_argument("--no-normalize", action="store_true", help="train on raw rather than standardised data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srforecast",
        description="Probabilistic forecasting with generative networks trained by scoring rules.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="integrate a Lorenz preset and write the series file")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--duration", type=float)
    p.add_argument("--out", help="series file path (default: <output-dir>/series.txt)")

    p = sub.add_parser("train", help="fit a generator (optionally sweeping learning rates)")
    _common(p)
    _data_flags(p)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--sweep", action="store_true", help="sweep the learning-rate grid")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-disc", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--m", type=int, help="ensemble members per training window")
    p.add_argument("--jobs", type=int, help="parallel sweep workers")

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _common(p)
    _data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--m-eval", type=int)

    p = sub.add_parser("reproduce", help="run a whole Lorenz experiment and compare with published values")
    _common(p)
    p.add_argument("table", choices=sorted(pipeline.PAPER_TABLES))
    p.add_argument("--budget", choices=sorted(pipeline.BUDGETS), default="desk")
    p.add_argument("--methods", nargs="+", help="subset of methods to run")
    p.add_argument("--jobs", type=int)
    p.add_argument(
        "--accept-compute",
        action="store_true",
        help="acknowledge that desk and full budgets take hours of CPU time",
    )
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {"data": {}, "method": {}, "train": {}, "eval": {}}
    if args.output_dir:
        o["output_dir"] = args.output_dir
    if args.seed is not None:
        o["seed"] = args.seed
    g = vars(args)
    for flag, key in (("preset", "preset"), ("input", "input"), ("duration", "duration")):
        if g.get(flag) is not None:
            o["data"][key] = g[flag]
    if g.get("input"):
        o["data"]["preset"] = DEFAULTS["data"]["preset"]
    if g.get("no_normalize"):
        o["data"]["normalize"] = False
    if g.get("method"):
        o["method"]["name"] = g["method"]
    if g.get("sweep"):
        o["train"]["sweep"] = True
    for flag in ("lr", "lr_disc", "epochs", "patience", "batch_size", "m", "jobs"):
        if g.get(flag) is not None:
            o["train"][flag] = g[flag]
    if g.get("m_eval") is not None:
        o["eval"]["m_eval"] = g["m_eval"]
    return {k: v for k, v in o.items() if v != {}}


def _write_atomic(files: dict[Path, str]) -> None:
    """Write every file only once all contents are known."""
    for path, text in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)


def cmd_simulate(cfg: dict, args) -> int:
    ts = pipeline.load_series(cfg)
    out = Path(args.out) if args.out else Path(cfg["output_dir"]) / "series.txt"
    _write_atomic({out: format_series(ts)})
    v = ts.values
    print(f"wrote {out}: {len(ts)} rows x {ts.dim} components, dt {ts.dt_record:g}")
    print(f"  mean {np.array2string(v.mean(axis=0), precision=4)}  std {np.array2string(v.std(axis=0), precision=4)}")
    print(f"  min  {np.array2string(v.min(axis=0), precision=4)}  max {np.array2string(v.max(axis=0), precision=4)}")
    return EXIT_OK


def cmd_train(cfg: dict, args) -> int:
    ts = pipeline.load_series(cfg)
    prep = pipeline.prepare(cfg, ts)
    outcome = pipeline.run_training(cfg, prep)
    out = Path(cfg["output_dir"])
    rep = outcome.report
    files = {
        out / "train_log.json": pipeline.train_log_json(outcome),
        out / "val_curve.csv": pipeline.val_curve_csv(rep),
        out / "config.toml": dump_config(cfg),
    }
    if outcome.sweep is not None:
        files[out / "sweep.csv"] = pipeline.sweep_csv(outcome.sweep)
        for cand, score, err in outcome.sweep.candidates:
            status = f"best val {score:.6g}" if err is None else f"diverged ({err})"
            print(f"  lr {cand}: {status}")
    _write_atomic(files)
    save_checkpoint(outcome.gen, out / "checkpoint.txt", outcome.disc)
    for w in rep.warnings[:5]:
        print(f"warning: {w}", file=sys.stderr)
    lr = f"lr {rep.lr:g}" + (f", lr_disc {rep.lr_disc:g}" if rep.lr_disc is not None else "")
    print(
        f"trained {cfg['method']['name']} ({lr}): best validation score {rep.best_score:.6g} "
        f"at epoch {rep.best_epoch} of {len(rep.val_score)}"
    )
    print(f"wrote {out / 'checkpoint.txt'}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, args) -> int:
    try:
        gen = load_checkpoint(args.checkpoint)
    except (OSError, KeyError) as exc:
        raise ConfigError(f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    ts = pipeline.load_series(cfg)
    k = cfg["data"]["k"]
    if (gen.k, gen.d) != (k, ts.dim):
        raise ConfigError(
            f"checkpoint expects windows of shape ({gen.k}, {gen.d}) but the data gives ({k}, {ts.dim})"
        )
    # standardise with the statistics stored in the checkpoint
    train_s, val_s, test_s = pipeline.split(cfg, ts)
    test = build_windows(gen.normalizer.apply_series(test_s), k, cfg["data"]["lead"])
    rows = pipeline.target_rows(test, len(train_s) + len(val_s))
    method = gen.meta.get("method", "")
    rep, ens, truth = pipeline.evaluate(cfg, gen, test, method)
    out = Path(cfg["output_dir"])
    pipeline.write_evaluation(out, rep, ens, truth, rows, cfg["eval"]["interval"])
    print(pipeline.CSV_HEADER)
    print(rep.csv_row())
    return EXIT_OK


def cmd_reproduce(cfg: dict, args) -> int:
    if args.budget != "quick" and not args.accept_compute:
        raise ConfigError(
            f"the '{args.budget}' budget trains every method for up to hours of CPU time; "
            "pass --accept-compute to proceed (or use --budget quick)"
        )
    methods = args.methods
    if methods:
        unknown = [m for m in methods if m not in pipeline.PAPER_TABLES[args.table]]
        if unknown:
            raise ConfigError(f"methods {unknown} are not part of the {args.table} table")
    out = Path(cfg["output_dir"]) / f"reproduce-{args.table}"
    text, checks, _ = pipeline.reproduce(cfg, args.table, args.budget, out, methods=methods)
    print(text, end="")
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {out / 'comparison.csv'}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_TOLERANCE


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(dump_config(DEFAULTS))
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
