#!/usr/bin/env python3
"""
main.py - Interference Channel Autoencoder Toolkit

Command-line entry point for training, evaluating and analyzing two-user
encoder/decoder pairs.

Usage:
    python main.py train    [--config PATH] [--set key=value ...] [--out DIR] [--seed N]
    python main.py evaluate --model PATH [--config PATH] [--set ...] [--out DIR] [--threads N]
    python main.py sweep    --model PATH [--set mismatch_alphas=1,10,20] [--threads N]
    python main.py analyze  --model PATH [--out DIR]
    python main.py baseline [--set eval_snrs_db=0,1,2,3,4,5,6,7,8] [--set k=4]

Outputs (inside the run directory, default output/):
- train    -> model.json, loss_trace.csv
- evaluate -> bler.csv, bler_summary.json
- sweep    -> sweep.csv
- analyze  -> distances.csv, correlations.csv, analysis_summary.json
- baseline -> baseline.csv
Every run also writes effective_config.env.

Exit codes: 0 success, 2 configuration/usage error, 3 model file error,
4 numerical failure, 1 unexpected error.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from config import ExperimentConfig, parse_config, write_config_echo
from errors import IfcaeError, TrainingDivergedError, UsageError
from evaluation import evaluate_matched, horizontal_gain_db, mismatch_sweep
from latent_analysis import analysis_report
from model_io import load_model, save_model
from reports import (TDMA_CONVENTION, write_baseline_csv, write_bler_csv, write_correlations_csv,
                     write_distances_csv, write_json, write_trace_csv)
from training import train_pair


COMMANDS = ("train", "evaluate", "sweep", "analyze", "baseline")
MODEL_COMMANDS = ("evaluate", "sweep", "analyze")

logger = logging.getLogger("Main")


###############################################################
# Logging
###############################################################

def configure_logging(log_dir: str = "logs", level: int = logging.INFO) -> None:
    """Log to logs/ifcae.log and the console."""
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=level,
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(log_dir, "ifcae.log"), encoding="utf-8"),
            logging.StreamHandler(),
        ],
    )


def report_failure(error: BaseException) -> int:
    """Print the one-line error and return the exit code for it."""
    if isinstance(error, IfcaeError):
        print(f"error: {error.category}: {error}", file=sys.stderr)
        return error.exit_code
    logger.error(f"Unexpected failure: {error}", exc_info=True)
    print(f"error: internal: {error}", file=sys.stderr)
    return 1


###############################################################
# Commands
###############################################################

def _require_model(command: str, model_path: Optional[str]) -> Path:
    if not model_path:
        raise UsageError(f"'{command}' needs --model PATH")
    return Path(model_path)


def cmd_train(config: ExperimentConfig, out_dir: Path, model_path: Optional[str]) -> None:
    training = config.training_config()
    print(f"🚀 Training {training.model_kind} pair at alpha={training.alpha} (seed {training.seed})")
    try:
        pair, trace = train_pair(training)
    except TrainingDivergedError as e:
        if e.trace is not None and e.trace.epochs:
            write_trace_csv(e.trace, out_dir / "loss_trace.csv")
        raise
    target = Path(model_path) if model_path else out_dir / "model.json"
    checksum = save_model(pair, target)
    write_trace_csv(trace, out_dir / "loss_trace.csv")
    print(f"✅ Model saved to {target} ({checksum})")


def cmd_evaluate(config: ExperimentConfig, out_dir: Path, model_path: Path) -> None:
    pair = load_model(model_path)
    print(f"🚀 Evaluating {pair.model_kind} pair at its training alpha={pair.train_alpha}")
    sweep = evaluate_matched(pair, config.eval_snrs_db, config.stop_rule(), config.seed, config.threads)
    write_bler_csv(sweep, pair.arch.k, out_dir / "bler.csv")

    curve = sweep.curve(pair.train_alpha)
    summary = {"model_kind": pair.model_kind, "train_alpha": pair.train_alpha, "k": pair.arch.k,
               "n": pair.arch.n, "tdma_convention": TDMA_CONVENTION}
    for user in (1, 2):
        blers = [p.bler_user1 if user == 1 else p.bler_user2 for p in curve]
        try:
            gain = horizontal_gain_db([p.eb_n0_db for p in curve], blers, pair.arch.k)
        except UsageError:
            gain = None
        summary[f"gain_db_at_bler_1e-2_user{user}"] = gain
    write_json(out_dir / "bler_summary.json", summary)
    print(f"✅ BLER curve written to {out_dir / 'bler.csv'}")


def cmd_sweep(config: ExperimentConfig, out_dir: Path, model_path: Path) -> None:
    pair = load_model(model_path)
    print(f"🚀 Sweeping alpha {list(config.mismatch_alphas)} for {pair.model_kind} pair trained at "
          f"alpha={pair.train_alpha}")
    sweep = mismatch_sweep(pair, config.mismatch_alphas, config.eval_snrs_db, config.stop_rule(),
                           config.seed, config.threads)
    write_bler_csv(sweep, pair.arch.k, out_dir / "sweep.csv")
    print(f"✅ Sweep grid written to {out_dir / 'sweep.csv'}")


def cmd_analyze(config: ExperimentConfig, out_dir: Path, model_path: Path) -> None:
    pair = load_model(model_path)
    report = analysis_report(pair)
    write_distances_csv(report, out_dir / "distances.csv")
    write_correlations_csv(report, out_dir / "correlations.csv")
    write_json(out_dir / "analysis_summary.json", report.summary())
    print(f"✅ min d_cross={report.distances.min_cross:.3f}  min d_self={report.distances.min_self:.3f}")


def cmd_baseline(config: ExperimentConfig, out_dir: Path) -> None:
    write_baseline_csv(config.eval_snrs_db, config.k, out_dir / "baseline.csv")
    print(f"✅ TDMA baseline written to {out_dir / 'baseline.csv'}")


def run(command: str, config: ExperimentConfig, model_path: Optional[str] = None) -> int:
    """
    Execute one command. Returns the process exit status; failures print a
    single 'error: <category>: <message>' line to stderr.
    """
    try:
        if command not in COMMANDS:
            raise UsageError(f"Unknown command '{command}' (expected one of {', '.join(COMMANDS)})")
        out_dir = Path(config.out_dir)
        model = _require_model(command, model_path) if command in MODEL_COMMANDS else None
        write_config_echo(config, out_dir)
        logger.info(f"Running '{command}' into {out_dir}")
        if command == "train":
            cmd_train(config, out_dir, model_path)
        elif command == "evaluate":
            cmd_evaluate(config, out_dir, model)
        elif command == "sweep":
            cmd_sweep(config, out_dir, model)
        elif command == "analyze":
            cmd_analyze(config, out_dir, model)
        else:
            cmd_baseline(config, out_dir)
    except Exception as e:
        print(f"❌ {command} failed")
        return report_failure(e)
    return 0


###############################################################
# Argument parsing
###############################################################

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Two-user interference channel autoencoder toolkit")
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--config", help="Config file (key=value lines)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key (repeatable)")
    parser.add_argument("--model", help="Model file to read (evaluate/sweep/analyze) or write (train)")
    parser.add_argument("--out", help="Run directory for all outputs")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--threads", type=int, help="Worker threads for BLER grids")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config, args.overrides)
    flags = {name: value for name, value in (("seed", args.seed), ("threads", args.threads),
                                              ("out_dir", args.out)) if value is not None}
    return replace(config, **flags) if flags else config


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = resolve_config(args)
    except Exception as e:
        return report_failure(e)
    return run(args.command, config, args.model)


if __name__ == "__main__":
    sys.exit(main())
