"""Command line: rfslope {generate,train-eval,report,timing}.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import pipeline
from .config import ConfigError, DEFAULT_CONFIG, load_config, resolve
from .montecarlo import DataError
from .randfield import DomainError, FactorizationError
from .slope_oracle import GeometryError, SearchConfigError
from .surrogates import ConvergenceError, ModelError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfslope",
        description="Random-field slope reliability with surrogate classifiers.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  rfslope generate --config configs/desk.json --workers 4
  rfslope train-eval --config configs/desk.json
  rfslope report --out out/desk
  rfslope timing --config configs/desk.json
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", help="experiment JSON" + ("" if needs_config else " (default: read resolved_config.json from --out)"))
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="worker processes for the Monte Carlo stage (default: 1)")
        p.add_argument("--seed", type=_seed, help="campaign seed (overrides the config)")
        p.add_argument("--scale", type=float, help="multiply n_per_mu, e.g. 0.1 for a desk-scale run")

    common(sub.add_parser("generate", help="sample fields, label them, write RFMC datasets"))
    common(sub.add_parser("train-eval", help="train surrogates, evaluate, run repeated CV"))
    common(sub.add_parser("report", help="draw SVG figures from a train-eval bundle"), needs_config=False)
    common(sub.add_parser("timing", help="timing table with the full-scale extrapolation"))
    return parser


def _config(args) -> dict:
    overrides = {"seed": args.seed, "scale": args.scale, "output_dir": args.out}
    if args.config:
        return load_config(args.config, **overrides)
    if args.out and args.command in ("report", "timing"):
        try:
            return resolve(pipeline.resolved_config_of(args.out), output_dir=args.out)
        except DataError:
            pass
    if args.command == "report" and not args.out:
        raise ConfigError("report needs --out (a train-eval bundle) or --config")
    # report without a resolved config only needs the bundle path; a missing bundle is a data error
    return resolve(dict(DEFAULT_CONFIG), **overrides)


def run(args) -> int:
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    cfg = _config(args)
    if args.command == "generate":
        pipeline.generate(cfg, workers=args.workers)
    elif args.command == "train-eval":
        pipeline.train_eval(cfg)
    elif args.command == "report":
        from .report import write_report

        for path in write_report(cfg["output_dir"]):
            print(path)
    elif args.command == "timing":
        rows = pipeline.timing_table(cfg)
        print(f"{'method':<28s}{'MC samples':>12s}{'CPU time':>14s}{'ACC':>8s}{'F1':>8s}{'AUC':>8s}{'p_f err':>9s}")
        for r in rows:
            metr = "".join(f"{r[k]:>8.3f}" if r[k] != "" else f"{'-':>8s}" for k in ("acc", "f1", "auc"))
            pfe = f"{r['pf_error']:>9.4f}" if r["pf_error"] != "" else f"{'-':>9s}"
            print(f"{r['method']:<28s}{r['mc_samples']:>12d}{pipeline.format_duration(r['cpu_seconds']):>14s}{metr}{pfe}")
        lo, hi = pipeline.REFERENCE_SOLVER_SECONDS
        print(f"(for context: reference solver runs took {lo:g}-{hi:g} s each)")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, GeometryError, SearchConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelError, DomainError, FileNotFoundError) as exc:
        if isinstance(exc, ConvergenceError):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FactorizationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
