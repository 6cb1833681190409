"""Command-line entry point: ``uwbsim {validate,run,sweep,table,stats}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import report
from .report import ReportError
from .scenario import Scenario, ScenarioError, line_index, load_document, load_scenario, validate_data
from .simulator import MEASUREMENT_COLUMNS, POSITION_COLUMNS, Simulator, jsonable
from .sweep import SweepError, set_path, sweep


def _parse_assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected PATH=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8", newline="\n")


def _load(args) -> Scenario:
    if not args.set:
        return load_scenario(args.scenario, {"seed": args.seed} if args.seed is not None else None)
    data, text = load_document(args.scenario)
    if not isinstance(data, dict):
        raise ScenarioError([(1, "", "scenario must be a mapping")], str(args.scenario))
    for key, value in args.set:
        set_path(data, key, value)
    if args.seed is not None:
        data["seed"] = args.seed
    return validate_data(data, str(args.scenario), line_index(text))


def cmd_validate(args) -> int:
    scenario = _load(args)
    roles = {}
    for n in scenario.nodes:
        roles[n.role] = roles.get(n.role, 0) + 1
    counts = ", ".join(f"{v} {k}{'s' if v > 1 else ''}" for k, v in sorted(roles.items()))
    print(f"{args.scenario}: ok ({scenario.name}: {counts}, mode {scenario.mode}, {scenario.duration:g} s)")
    return 0


def cmd_run(args) -> int:
    scenario = _load(args)
    result = Simulator(scenario).run()
    if args.out is not None:
        _emit(result.to_json(), args.out, "result.json")
        _emit(report.format_csv(result.measurements, MEASUREMENT_COLUMNS), args.out, "measurements.csv")
        _emit(report.format_csv(result.positions, POSITION_COLUMNS), args.out, "positions.csv")
        print(f"wrote {args.out}/result.json, measurements.csv, positions.csv", file=sys.stderr)
    elif args.format == "json":
        sys.stdout.write(result.to_json())
    else:
        sys.stdout.write(report.format_csv(result.measurements, MEASUREMENT_COLUMNS))
    return 0


def cmd_sweep(args) -> int:
    load_scenario(args.scenario)
    template, _ = load_document(args.scenario)
    grid = {}
    if args.grid is not None:
        loaded, _ = load_document(args.grid)
        if not isinstance(loaded, dict):
            raise SweepError(f"{args.grid}: grid must map parameter paths to value lists")
        grid.update(loaded)
    for key, value in args.param or []:
        grid[key] = value if isinstance(value, list) else [value]
    result = sweep(template, grid, master_seed=args.seed, jobs=args.jobs)

    summary_cols = ["point", "seed", "status", "error", *result.keys,
                    "exchanges", "completion_rate", "tag_average_current_ma", "tag_lifetime_h"]
    summary = result.summary_rows()
    if args.out is not None:
        _emit(report.format_csv(summary, summary_cols), args.out, "sweep.csv")
        _emit(report.format_csv(result.measurements(), MEASUREMENT_COLUMNS), args.out, "measurements.csv")
        positions = [row for p in result.points if p.result for row in p.result.positions]
        _emit(report.format_csv(positions, POSITION_COLUMNS), args.out, "positions.csv")
    elif args.format == "json":
        sys.stdout.write(json.dumps(summary, sort_keys=True, indent=1, default=str) + "\n")
    else:
        sys.stdout.write(report.format_csv(summary, summary_cols))
    for p in result.failures:
        print(f"point {p.point} failed: {p.error}", file=sys.stderr)
    return 1 if result.failures and len(result.failures) == len(result.points) else 0


def cmd_table(args) -> int:
    rows = report.load_measurements(args.results)
    if args.mode is not None:
        rows = [r for r in rows if r["mode"] == args.mode]
    columns, table = report.render_table(args.table_id, rows)
    if args.format == "json":
        text = json.dumps(jsonable(table), sort_keys=True, indent=1) + "\n"
    else:
        text = report.format_csv(table, columns)
    _write_or_print(text, args.out)
    return 0


def cmd_stats(args) -> int:
    rows = report.read_csv(args.csv)
    stats = report.compute_stats(rows, column=args.column, truth_column=args.truth_column,
                                 truth=args.truth, by=args.by or (), source=str(args.csv))
    table = [s.as_dict() for s in stats]
    if args.format == "json":
        text = json.dumps(jsonable(table), sort_keys=True, indent=1) + "\n"
    else:
        text = report.format_csv(table, [*(args.by or ()), *report.STATS_COLUMNS])
    _write_or_print(text, args.out)
    return 0


def _write_or_print(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8", newline="\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwbsim", description="UWB/BLE asset-tracking simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("scenario", type=Path, help="scenario file (YAML or JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--set", type=_parse_assignment, action="append", metavar="PATH=VALUE",
                       help="override a scenario value, e.g. mode=5 or nodes.1.position=[12,0]")

    p = sub.add_parser("validate", help="check a scenario file")
    scenario_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one scenario")
    scenario_args(p)
    p.add_argument("--out", type=Path, default=None, help="directory for result.json and measurements.csv")
    p.add_argument("--format", choices=("csv", "json"), default="json", help="stdout format without --out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    p.add_argument("scenario", type=Path)
    p.add_argument("--grid", type=Path, default=None, help="YAML mapping of parameter path to value list")
    p.add_argument("--param", type=_parse_assignment, action="append", metavar="PATH=[V1,V2,...]",
                   help="add one grid axis")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: scenario seed)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", type=Path, default=None, help="directory for sweep.csv and measurements.csv")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("table", help="render a report table from run or sweep output")
    p.add_argument("results", type=Path, help="output directory, measurements CSV or result JSON")
    p.add_argument("table_id", choices=report.TABLE_IDS)
    p.add_argument("--mode", type=int, default=None, help="only rows for this radio mode")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("stats", help="summary statistics of a CSV column")
    p.add_argument("csv", type=Path)
    p.add_argument("--column", default="distance_m")
    p.add_argument("--truth-column", default="true_distance_m")
    p.add_argument("--truth", type=float, default=None, help="constant true value instead of a column")
    p.add_argument("--by", nargs="*", default=None, help="group-by columns")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ReportError, SweepError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
