"""Command-line entry point orchestrating the pipeline stages."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config
from .gradsuite import run_gradient_suite

STAGES = ["synth", "ingest", "stats", "build-ekg", "train-ekg", "train-g2s",
          "generate", "evaluate", "grad-check"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ekgen",
        description="Evolutionary-knowledge-graph comment generation pipeline")
    parser.add_argument("subcommand", choices=STAGES)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--workspace", default="workspace",
                        help="run directory (default: ./workspace)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--preset", choices=["desk", "paper"], default="desk")
    parser.add_argument("--novel", help="novel JSON (ingest)")
    parser.add_argument("--lexicon", help="lexicon JSON (ingest)")
    parser.add_argument("--passages", help="passages JSONL (ingest)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, preset=args.preset,
                          overrides=args.overrides, seed=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    if args.subcommand == "grad-check":
        results = run_gradient_suite(cfg.seed)
        worst = 0.0
        failed = 0
        for r in results:
            status = "ok" if r.passed else "FAIL"
            print(f"[{status}] {r.name}: rel_err={r.rel_err:.3e} "
                  f"(tol {r.tolerance:.0e})")
            worst = max(worst, r.rel_err)
            failed += 0 if r.passed else 1
        print(f"{len(results) - failed}/{len(results)} checks passed "
              f"(worst rel_err {worst:.3e})")
        return 0 if failed == 0 else 1

    ws = Path(args.workspace)
    try:
        with pipeline.workspace_lock(ws):
            if args.subcommand == "synth":
                info = pipeline.run_synth(ws, cfg)
                print(f"wrote synthetic corpus: {info['counts']}")
            elif args.subcommand == "ingest":
                out = pipeline.run_ingest(ws, cfg, args.novel, args.lexicon,
                                          args.passages)
                print(f"ingested corpus -> {out}")
            elif args.subcommand == "stats":
                print(pipeline.run_stats(ws, cfg))
            elif args.subcommand == "build-ekg":
                out = pipeline.run_build_ekg(ws, cfg)
                print(f"built global EKG -> {out}")
            elif args.subcommand == "train-ekg":
                out = pipeline.run_train_ekg(ws, cfg)
                print(f"trained EKG embeddings -> {out}")
            elif args.subcommand == "train-g2s":
                out = pipeline.run_train_g2s(ws, cfg)
                print(f"trained generator -> {out}")
            elif args.subcommand == "generate":
                out = pipeline.run_generate(ws, cfg)
                print(f"generated comments -> {out}")
            elif args.subcommand == "evaluate":
                report = pipeline.run_evaluate(ws, cfg)
                print(f"BLEU {report['bleu']:.2f}  ROUGE-L {report['rouge_l']:.4f}")
    except pipeline.MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
