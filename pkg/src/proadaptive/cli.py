"""
Command line entry point.

    proadaptive simulate --out runs/sim --seed 7
    proadaptive run --config pipeline.toml --replicas 25 --delta 2,4
    proadaptive report --out runs/sim

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import pipeline as pl

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("simulate", "ingest", "run", "train", "forecast", "evaluate", "characterize", "report")


def _deltas(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proadaptive", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML or JSON pipeline config")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--delta", type=_deltas, help="comma-separated horizons, e.g. 2,4")
        p.add_argument("--replicas", type=int, help="bootstrap replicas per batch")
    return parser


def load_config(args) -> pl.PipelineConfig:
    config = pl.PipelineConfig.load(args.config) if args.config else pl.PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.delta is not None:
        overrides["deltas"] = args.delta
    if args.replicas is not None:
        overrides["replicas"] = args.replicas
    return dataclasses.replace(config, **overrides)


def dispatch(command: str, config: pl.PipelineConfig) -> str:
    if command == "simulate":
        return f"wrote {pl.cmd_simulate(config)}"
    if command == "ingest":
        return f"wrote {pl.cmd_ingest(config)}"
    if command == "train":
        art = pl.cmd_train(config)
        return f"trained {len(art.snapshots)} replicas over {len(art.splits)} batches"
    if command == "forecast":
        return f"wrote {len(pl.cmd_forecast(config))} forecasts"
    if command == "evaluate":
        rep = pl.cmd_evaluate(config, config.deltas)
        return f"evaluated {len(rep.rows)} cells ({len(rep.skipped)} skipped)"
    if command == "characterize":
        ch = pl.cmd_characterize(config)
        return f"characterized {len(ch.period_labels)} batches"
    if command == "run":
        res = pl.cmd_run(config)
        return pl.summarize(f"{config.out_dir}/{pl.REPORT}") + \
            f"\n{len(res.report.skipped)} cells skipped; artifacts in {config.out_dir}"
    if command == "report":
        from pathlib import Path
        path = Path(config.out_dir) / pl.REPORT
        if not path.exists():
            raise pl.MissingArtifactError(f"{path} not found: run 'evaluate' or 'run' first")
        return pl.summarize(path)
    raise ValueError(f"unknown command {command}")


def _unwrap(exc: BaseException) -> BaseException:
    return exc.cause if isinstance(exc, pl.StageError) else exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        config.validate()
        print(dispatch(args.command, config))
    except Exception as exc:  # mapped to exit codes below
        cause = _unwrap(exc)
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, (pl.IntegrityError,)):
            return EXIT_RUNTIME
        if isinstance(cause, OSError):
            return EXIT_IO
        if isinstance(cause, (ValueError, TypeError, KeyError)):
            return EXIT_VALIDATION
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
