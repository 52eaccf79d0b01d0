"""Command-line entry point: erag annotate|evaluate|e2e|correlate|report."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import RunConfig
from .errors import EragError


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the run config (YAML)")
    parser.add_argument("--scheme", action="append", dest="schemes", default=None,
                        metavar="SCHEME",
                        help="override configured schemes (repeatable or comma-separated)")
    parser.add_argument("--metrics", default=None,
                        help="override metric list, e.g. 'ndcg@10,map,precision@full'")
    parser.add_argument("--depth", type=int, default=None,
                        help="override retrieval depth k")
    parser.add_argument("--backend-url", default=None, help="override backend endpoint URL")
    parser.add_argument("--model", default=None, help="override backend model name")
    parser.add_argument("--cache-dir", default=None, help="override response cache directory")
    parser.add_argument("--out-dir", default=None, help="override output directory")
    parser.add_argument("--fail-fast", action="store_true", default=None,
                        help="abort a batch on the first backend error")
    parser.add_argument("--binarize-threshold", type=float, default=None,
                        help="convert graded labels to binary (label > t) before aggregation")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    schemes = None
    if args.schemes:
        schemes = [s for chunk in args.schemes for s in chunk.split(",") if s]
    metrics = None
    if args.metrics:
        metrics = [m for m in args.metrics.split(",") if m]
    return cfg.with_overrides(
        schemes=schemes,
        metrics=metrics,
        depth=args.depth,
        backend_url=args.backend_url,
        model=args.model,
        cache_dir=args.cache_dir,
        out_dir=args.out_dir,
        fail_fast=args.fail_fast,
        binarize_threshold=args.binarize_threshold,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="erag",
        description="Score retrieval result lists by what the downstream "
                    "generator can do with each document, and correlate "
                    "retrieval metrics with end-to-end performance.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("annotate", "produce per-document relevance labels for each scheme"),
        ("evaluate", "aggregate labels into per-query retrieval scores"),
        ("e2e", "run full-list generation and score it downstream"),
        ("correlate", "correlate retrieval scores with downstream scores"),
        ("report", "print the final report"),
    ):
        _add_common_flags(sub.add_parser(name, help=text))
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "annotate":
            produced = pipeline.cmd_annotate(cfg)
            for scheme, path in produced.items():
                print(f"annotations[{scheme}]: {path}")
        elif args.command == "evaluate":
            print(f"retrieval scores: {pipeline.cmd_evaluate(cfg)}")
        elif args.command == "e2e":
            print(f"e2e results: {pipeline.cmd_e2e(cfg)}")
        elif args.command == "correlate":
            print(f"report: {pipeline.cmd_correlate(cfg)}")
        elif args.command == "report":
            print(pipeline.cmd_report(cfg), end="")
    except (EragError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
