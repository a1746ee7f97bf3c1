# app.py - Main entry point for the spikex command line.

from argparse import ArgumentParser
from dataclasses import replace
from typing import List, Optional
import json
import logging
import sys

from config import PRESETS, RunConfig, default_log_level, load_run_config
from commands import METHODS, UsageError, cmd_evaluate, cmd_explain, cmd_gen_data, cmd_render, cmd_train
from eval_utils import METRICS

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def create_parser() -> ArgumentParser:
    """Global flags plus one subparser per command."""
    parser = ArgumentParser(prog="spikex", description="Train spiking networks and explain their predictions.")
    parser.add_argument("--config", help="JSON run configuration (overrides the preset)")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="hyperparameter preset (default synthetic-1l)")
    parser.add_argument("--seed", type=int, help="seed for every stochastic step")
    parser.add_argument("--out", help="output directory (default SPIKEX_OUT_DIR or runs)")
    parser.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging level (default SPIKEX_LOG_LEVEL or INFO)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", help="generate or ingest a dataset")
    gen.add_argument("--mode", choices=["synthetic", "adl"])
    gen.add_argument("--steps", type=int, help="synthetic series length")
    gen.add_argument("--subject", choices=["A", "B"])
    gen.add_argument("--adl-dir", help="directory with the OrdonezA/B text files")
    gen.add_argument("--description", help="ADL description file (sensor catalogue)")
    gen.add_argument("--sensors", help="ADL sensor events file")
    gen.add_argument("--adls", help="ADL activity labels file")
    gen.add_argument("--output", "-o")

    train = subparsers.add_parser("train", help="train a network with surrogate gradients")
    train.add_argument("--dataset", required=True)
    train.add_argument("--epochs", type=int, help="maximum number of epochs")
    train.add_argument("--model-name", help="label stored in the report, e.g. SNN-1L")
    train.add_argument("--output", "-o", help="model JSON path")

    explain = subparsers.add_parser("explain", help="attribute the prediction at one step")
    explain.add_argument("--model", required=True)
    explain.add_argument("--dataset", required=True)
    explain.add_argument("--t", type=int, required=True, help="absolute step to explain")
    explain.add_argument("--method", choices=METHODS, default="tsa-ns")
    explain.add_argument("--class", dest="class_index", type=int, help="class slice to render (default predicted)")
    explain.add_argument("--render", action="store_true", help="also write an SVG heatmap")
    explain.add_argument("--output", "-o", help="attribution CSV path")

    evaluate = subparsers.add_parser("evaluate", help="score explanation methods on the test split")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--methods", nargs="+", choices=METHODS)
    evaluate.add_argument("--metrics", nargs="+", choices=METRICS)
    evaluate.add_argument("--per-class", type=int, default=25, help="synthetic samples per class")
    evaluate.add_argument("--model-name")
    evaluate.add_argument("--output", "-o", help="results CSV path")

    render = subparsers.add_parser("render", help="render an attribution CSV as SVG")
    render.add_argument("--attribution", required=True)
    render.add_argument("--dataset", required=True)
    render.add_argument("--class", dest="class_index", type=int)
    render.add_argument("--model", help="pick the predicted class when --class is absent")
    render.add_argument("--output", "-o", help="SVG path")
    return parser


def resolve_config(args) -> RunConfig:
    """Preset, then config file, then command-line flags."""
    try:
        config = load_run_config(args.config, args.preset)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        if args.out:
            config = replace(config, out_dir=args.out)
        if getattr(args, "epochs", None):
            # Patience may not exceed the epoch cap.
            config = replace(config, train=replace(config.train, max_epochs=args.epochs,
                                                   patience=min(config.train.patience, args.epochs)))
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(args.log_level or default_log_level()).upper(), format=LOG_FORMAT,
                        stream=sys.stderr, force=True)

    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logging.getLogger("spikex").debug("Command failed", exc_info=True)
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
