"""Command-line entry point: ``hostdeepc <experiment> [options]``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .bench import RUNNERS, report_csv, report_table, reports_from_csv, run_experiment
from .config import CONTROLLERS, ConfigError, ExperimentConfig, is_provenance, read_provenance
from .params import CellParams, ParameterError, load_params

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", help="parameter file (key = value); defaults to the shipped set")
    p.add_argument("--config", help="experiment config, or a result file whose provenance header is replayed")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--controller", choices=CONTROLLERS, help="controller for single-controller experiments")
    p.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hostdeepc", description="Closed-loop experiments on a host-aware cell model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "sweep": "steady-state reachable set, evaluation points and model-reduction curves",
        "collect-data": "random-walk plus constant-input data record",
        "track": "closed-loop tracking over the step suite or a sinusoid",
        "robust-noise": "step suite over measurement-noise levels",
        "robust-params": "step suite over basis-parameter errors",
        "benchmark": "step suite for several controllers",
    }
    for name in RUNNERS:
        _add_common(sub.add_parser(name, help=helps[name]))
    rep = sub.add_parser("report", help="comparison table from responses.csv files")
    rep.add_argument("files", nargs="+", help="responses.csv files written by earlier runs")
    rep.add_argument("--out", help="write report.csv and report.txt here")
    return parser


def resolve(args) -> tuple[ExperimentConfig, CellParams]:
    """Config and parameters from files and flags; flags win over files."""
    params = None
    if args.config:
        text = Path(args.config).read_text()
        if is_provenance(text):
            config, params = read_provenance(text)
        else:
            config = ExperimentConfig.from_text(text, args.config)
    else:
        config = ExperimentConfig()
    if args.params or params is None:
        params = load_params(args.params)
    changes = {"kind": args.command}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.controller is not None:
        changes["controller"] = args.controller
    if args.workers is not None:
        changes["workers"] = args.workers
    return config.replace(**changes), params


def write_files(out: Path, files: dict[str, str]) -> None:
    for name, text in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def cmd_report(args) -> int:
    reports = []
    for f in args.files:
        reports.extend(reports_from_csv(Path(f).read_text()))
    if not reports:
        print("no responses found", file=sys.stderr)
        return EXIT_ERROR
    table = report_table(reports)
    sys.stdout.write(table)
    if args.out:
        write_files(Path(args.out), {"report.csv": report_csv(reports), "report.txt": table})
    return EXIT_PARTIAL if any(r.failures for r in reports) else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(args)
    try:
        config, params = resolve(args)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        result = run_experiment(config, params)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    write_files(out, result.files)
    sys.stdout.write(result.summary)
    print(f"wrote {len(result.files)} file(s) to {out}")
    if result.failures:
        print(f"{result.failures} response(s) failed; see the report", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
