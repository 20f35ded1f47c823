"""Command-line entry point: ``flowseir {validate,run,sweep,builtin}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import equilibrium_report
from .control import ControlPolicy, VaccinePolicy
from .errors import ModelViolation, ScenarioError
from .model import simulate, validate_params
from .scenario import (
    LoadedScenario,
    builtin_four_city_loaded,
    dump_scenario,
    load_scenario,
    summary_dict,
    write_run_output,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VIOLATION = 2
EXIT_IO = 3
EXIT_USAGE = 64

# the flight-volume axis of the sweep plots is relative to xi = 100
GAMMA_AXIS_BASE = 100.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowseir", description="Networked SEIR simulator with travel-flow control")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a scenario document")
    p.add_argument("scenario")

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("scenario")
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help="CSV path for the per-step table (summary goes next to it)")
    p.add_argument("--permissive", action="store_true", help="clamp inconsistent travel probabilities")

    p = sub.add_parser("sweep", help="grid over controller sensitivity and flow scale")
    p.add_argument("scenario")
    p.add_argument("--eta", type=_floats, required=True, help="e.g. 0,1,10,100,1000 (0 = no control)")
    p.add_argument("--xi", type=_floats, required=True, help="flow scale factors, e.g. 50,100,200")
    p.add_argument("--vaccine", action="store_true", help="enable the vaccine roll-out")
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", default="sweep_out", help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--permissive", action="store_true")

    p = sub.add_parser("builtin", help="print a built-in scenario document")
    p.add_argument("name", choices=["four-city"])
    p.add_argument("--xi", type=float, default=100.0)
    return parser


def _load(path: str) -> LoadedScenario:
    if not Path(path).is_file():
        raise FileNotFoundError(path)
    return load_scenario(Path(path))


def cmd_validate(args) -> int:
    loaded = load_scenario(Path(args.scenario), validate=False)
    report = validate_params(loaded.scenario, loaded.run.horizon)
    print(report)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_run(args) -> int:
    loaded = _load(args.scenario)
    horizon = loaded.run.horizon if args.horizon is None else args.horizon
    strict = loaded.run.strict and not args.permissive
    traj = simulate(loaded.scenario, loaded.policy, horizon, loaded.vaccine, strict=strict)
    report = equilibrium_report(traj, loaded.scenario.params, loaded.run.extinction_threshold)
    if args.out:
        table, side = write_run_output(traj, report, args.out, loaded)
        print(f"wrote {table} and {side}")
    else:
        print(json.dumps(summary_dict(traj, report), indent=2, sort_keys=True))
    return EXIT_OK


def _cell_name(eta: float, xi: float) -> str:
    return f"eta={eta!r}_xi={xi!r}"


def _run_cell(loaded: LoadedScenario, eta, xi, vaccine, horizon, strict, out_dir):
    name = _cell_name(eta, xi)
    row = {"eta": eta, "xi": xi, "gamma_axis": xi / GAMMA_AXIS_BASE, "table": f"{name}.csv",
           "summary": f"{name}.summary.json"}
    try:
        scenario = loaded.scenario.with_xi(xi)
        policy = ControlPolicy.proportional(eta)
        traj = simulate(scenario, policy, horizon, vaccine, strict=strict)
    except ScenarioError as exc:
        return {**row, "status": "invalid", "message": str(exc).splitlines()[0]}
    except ModelViolation as exc:
        return {**row, "status": "violation", "message": str(exc)}
    report = equilibrium_report(traj, scenario.params, loaded.run.extinction_threshold)
    cell = LoadedScenario(scenario, policy, vaccine, loaded.run)
    write_run_output(traj, report, Path(out_dir) / row["table"], cell)
    return {**row, "status": "ok", "message": "", **report.as_dict()}


INDEX_COLUMNS = ("eta", "xi", "gamma_axis", "status", "burden", "r_bar_final", "peak_x_bar", "peak_step",
                 "extinction_step", "alpha", "consensus_error", "table", "summary", "message")


def cmd_sweep(args) -> int:
    loaded = _load(args.scenario)
    horizon = loaded.run.horizon if args.horizon is None else args.horizon
    strict = loaded.run.strict and not args.permissive
    vaccine = (loaded.vaccine or VaccinePolicy()) if args.vaccine else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = [(eta, xi) for xi in args.xi for eta in args.eta]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_cell, loaded, eta, xi, vaccine, horizon, strict, out_dir)
                       for eta, xi in cells]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_cell(loaded, eta, xi, vaccine, horizon, strict, out_dir) for eta, xi in cells]

    with open(out_dir / "index.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, INDEX_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else ("" if v is None else v))
                             for k, v in row.items()})

    metric = "burden" if vaccine is not None else "r_bar_final"
    print(f"{metric} by xi (rows) and eta (columns)")
    print("xi \\ eta".ljust(12) + "".join(f"{eta:>12g}" for eta in args.eta))
    by_cell = {(r["eta"], r["xi"]): r for r in rows}
    for xi in args.xi:
        vals = []
        for eta in args.eta:
            r = by_cell[(eta, xi)]
            vals.append(f"{r[metric]:>12.6f}" if r["status"] == "ok" else f"{r['status']:>12}")
        print(f"{xi:<12g}" + "".join(vals))
    print(f"index written to {out_dir / 'index.csv'}")

    statuses = {r["status"] for r in rows}
    if "violation" in statuses:
        return EXIT_VIOLATION
    if "invalid" in statuses:
        return EXIT_INVALID
    return EXIT_OK


def cmd_builtin(args) -> int:
    if not args.xi > 0:
        print("--xi must be positive", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(dump_scenario(builtin_four_city_loaded(args.xi)))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "sweep": cmd_sweep, "builtin": cmd_builtin}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 64, --help exits 0
        return exc.code
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ModelViolation as exc:
        print(f"model violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
