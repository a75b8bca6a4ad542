"""Command line: ``run``, ``sweep`` and ``report``.

Exit status is 0 on success, 2 for an invalid config and 1 for any other
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import ConfigError, emit_reports, format_report, load_config, run_experiment, run_sweep

log = logging.getLogger("fedpop")


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedpop", description="Federated HP tuning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config over its seeds")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 1,2,3")

    sweep = sub.add_parser("sweep", help="run a config once per grid point")
    sweep.add_argument("config")
    sweep.add_argument("--grid", required=True, help="JSON object of dotted config paths to value lists")
    sweep.add_argument("--out", help="output directory (overrides output_dir)")

    report = sub.add_parser("report", help="print the summary table of a run or sweep directory")
    report.add_argument("run_dir")
    return parser


def _outdir(args, config) -> Path:
    out = args.out or config.output_dir
    if not out:
        raise ConfigError("output_dir", "no output directory; pass --out or set output_dir")
    return Path(out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            print(format_report(args.run_dir))
            return 0
        config = load_config(args.config)
        if args.command == "run":
            if args.seeds:
                config = config.with_overrides(seeds=args.seeds)
            out = _outdir(args, config)
            report = run_experiment(config)
            emit_reports(report, config, out)
            print(format_report(out))
        else:
            try:
                grid = json.loads(Path(args.grid).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("grid", f"cannot load {args.grid}: {exc}") from None
            out = _outdir(args, config)
            run_sweep(config, grid, out)
            print(format_report(out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as status 1
        print(f"error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
