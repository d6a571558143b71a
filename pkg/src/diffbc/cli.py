"""Command-line interface.

Subcommands: train, sample, eval, sweep-guidance, reproduce, gen-data.
Configuration comes from --config (key=value or JSON file) plus flags that
mirror the dotted config keys.  Exit codes: 0 success, 2 config error,
3 I/O or corrupt artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import FIELDS, parse_config
from .errors import DiffbcError
from . import pipeline


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="config file (flat key=value lines or a JSON object)")
    for key in FIELDS:
        parser.add_argument(f"--{key}", dest=key.replace(".", "__"),
                            metavar="V", default=None,
                            help=f"override config key {key}")


def _config_from_args(args) -> "pipeline.RunConfig":
    overrides = {}
    for key in FIELDS:
        value = getattr(args, key.replace(".", "__"), None)
        if value is not None:
            overrides[key] = value
    return parse_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffbc",
                                     description="Train, sample and evaluate "
                                                 "behaviour-cloning policies on the "
                                                 "synthetic claw and grid-world tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="generate data, train, write a checkpoint")
    _add_config_flags(p)

    p = sub.add_parser("sample", help="draw actions from a checkpoint (JSON arrays, one per line)")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True, help="samples per condition")
    p.add_argument("--condition", type=int, default=None,
                   help="scene/state id; omit to sample every condition")
    p.add_argument("--out", required=True,
                   help="output file (single condition) or directory (all conditions)")

    p = sub.add_parser("eval", help="compute metrics for sample files")
    _add_config_flags(p)
    p.add_argument("--samples", required=True,
                   help="samples_*.jsonl directory or a single sample file")
    p.add_argument("--condition", type=int, default=None,
                   help="condition id when --samples is a single file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep-guidance", help="sample under several guidance weights")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--weights", default="0,1,4,8",
                   help="comma-separated guidance weights (default 0,1,4,8)")
    p.add_argument("--n", type=int, default=1000, help="samples per (weight, condition)")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("reproduce", help="emit the data behind a published panel")
    p.add_argument("figure", help=f"one of: {', '.join(pipeline.FIGURES)}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--demos", type=int, default=20000)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--samples", type=int, default=1000)

    p = sub.add_parser("gen-data", help="generate and store a demonstration dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--jsonl", default=None, help="also export rows as JSON lines")
    return parser


def _run(args) -> int:
    if args.command == "train":
        cfg = _config_from_args(args)
        paths = pipeline.train_run(cfg)
        print(f"checkpoint: {paths['checkpoint']}")
        return 0
    if args.command == "sample":
        cfg = _config_from_args(args)
        result = pipeline.sample_run(cfg, args.checkpoint, args.n, args.out,
                                     condition=args.condition)
        for label, path in result["files"].items():
            print(f"{label}: {path}")
        return 0
    if args.command == "eval":
        cfg = _config_from_args(args)
        result = pipeline.eval_run(cfg, args.samples, args.out, condition=args.condition)
        print(f"metrics: {result['json']}")
        return 0
    if args.command == "sweep-guidance":
        cfg = _config_from_args(args)
        weights = [float(w) for w in args.weights.split(",") if w.strip()]
        result = pipeline.sweep_run(cfg, args.checkpoint, weights, args.n, args.out)
        if result is not None:
            print(f"sweep: {result['sweep']}")
        return 0
    if args.command == "reproduce":
        result = pipeline.reproduce(args.figure, args.out, seed=args.seed,
                                    demos=args.demos, epochs=args.epochs,
                                    samples=args.samples)
        for label, path in result["files"].items():
            print(f"{label}: {path}")
        return 0
    if args.command == "gen-data":
        cfg = _config_from_args(args)
        dataset = pipeline.generate_dataset(cfg)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        dataset.save(out)
        if args.jsonl:
            dataset.export_jsonl(args.jsonl)
        print(f"dataset: {out} ({len(dataset)} rows)")
        return 0
    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except DiffbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
