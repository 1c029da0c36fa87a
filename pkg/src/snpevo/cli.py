"""Command-line entry point: ``snpevo {run,sweep,synth,report}``.

Exit status is 0 on success, 2 on configuration errors and 3 when a run
aborts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import MODES, ConfigError, load_config
from .evolution import RunAborted
from .snpdb import SnpExhaustedError

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--data", dest="dataset", help="genotype matrix (tsv or csv)")
    p.add_argument("--targets", help="QTL targets file (snp, window_bp)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, help="evaluation processes (default: all CPUs)")
    p.add_argument("--population-size", dest="population_size", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--budget", type=int, help="random mode only: pipelines to evaluate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snpevo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one replicate")
    _add_run_flags(run)

    sw = sub.add_parser("sweep", help="run replicates with derived seeds and aggregate")
    _add_run_flags(sw)
    sw.add_argument("--replicates", type=int)

    syn = sub.add_parser("synth", help="write a synthetic cohort with planted QTLs")
    syn.add_argument("--out", required=True)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--samples", type=int, default=1000)
    syn.add_argument("--snps", type=int, default=2000)

    rep = sub.add_parser("report", help="aggregate finished replicate directories")
    rep.add_argument("dirs", nargs="+", help="replicate output directories")
    rep.add_argument("--out", required=True)
    rep.add_argument("--top", type=int, default=50)
    return parser


def _load(args) -> object:
    keys = ("dataset", "targets", "mode", "seed", "out", "workers", "population_size",
            "generations", "budget", "replicates")
    overrides = {k: getattr(args, k, None) for k in keys}
    cfg = load_config(args.config, **overrides)
    if not cfg.dataset:
        raise ConfigError("no dataset given (use --data or 'dataset =' in the config)")
    if not Path(cfg.dataset).is_file():
        raise ConfigError(f"dataset {cfg.dataset} not found")
    if cfg.targets and not Path(cfg.targets).is_file():
        raise ConfigError(f"targets file {cfg.targets} not found")
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    from . import runner
    from .synth import desk_spec, generate_synthetic, write_synthetic

    try:
        if args.command == "synth":
            spec = desk_spec(args.seed, n_samples=args.samples, n_snps=args.snps)
            paths = write_synthetic(generate_synthetic(spec), args.out)
            print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
            return EXIT_OK
        if args.command == "report":
            summary = runner.report(args.dirs, args.out, k=args.top)
            print(f"overall accuracy: {summary['overall_accuracy']}")
            return EXIT_OK
        cfg = _load(args)
        if args.command == "run":
            res = runner.run_replicate(cfg)
            print(json.dumps(res.metrics, indent=2, default=str))
            return EXIT_OK
        summary = runner.sweep(cfg)
        print(f"completed {summary['completed']} replicate(s), {summary['failed']} failed")
        return EXIT_OK if summary["completed"] else EXIT_ABORT
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunAborted, SnpExhaustedError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (OSError, ValueError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
