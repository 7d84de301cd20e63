"""Command-line entry point: run scenarios, sweep grids, build the carbon
table, and regenerate reports. Exit codes: 0 success, 2 config error,
3 runtime error."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import yaml

from .config import ConfigError, load_scenario, load_sweep_grid, scenario_to_dict
from .metrics import CarbonParams, apply_carbon, carbon_table
from .netsim import (
    InvalidScenario,
    Scenario,
    Simulation,
    SweepRow,
    row_from_report,
    sweep_cell,
)
from .profiles import PLATFORM_NAMES, UnknownPlatform, table3_cpu_defaults
from . import reports

GHG_ENV_VAR = "DLTBENCH_GHG_INTENSITY"
DEFAULT_MANAGER_GRID = [4, 8, 12, 16]
DEFAULT_LOAD_GRID = [20.0, 40.0, 60.0, 80.0, 100.0]


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dltbench",
        description="Deterministic DLT network benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument(
            "--platform",
            default=None,
            choices=PLATFORM_NAMES,
            help="override the scenario platform",
        )
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p_run = sub.add_parser("run", help="run one scenario and write its report")
    p_run.add_argument("--scenario", required=True, help="scenario YAML path")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a managers x load grid")
    p_sweep.add_argument("--scenario", required=True, help="base scenario YAML path")
    common(p_sweep)
    p_sweep.add_argument("--managers", type=_int_list, default=None, help="e.g. 4,8,12,16")
    p_sweep.add_argument("--load", type=_float_list, default=None, help="e.g. 20,60,100")
    p_sweep.add_argument("--force", action="store_true", help="recompute existing cells")
    p_sweep.add_argument("--workers", type=int, default=1, help="parallel cell workers")
    p_sweep.set_defaults(func=cmd_sweep)

    p_carbon = sub.add_parser("carbon", help="carbon footprint table per platform")
    p_carbon.add_argument("--out", default="out", help="output directory")
    p_carbon.add_argument("--power", type=float, default=0.06, help="machine power in kW")
    p_carbon.add_argument(
        "--intensity",
        type=float,
        default=None,
        help=f"kg CO2-eq per kWh (default 0.540; env {GHG_ENV_VAR} overrides)",
    )
    p_carbon.add_argument("--horizon-hours", type=float, default=1.0)
    p_carbon.add_argument(
        "--cpu",
        action="append",
        default=[],
        metavar="PLATFORM=PERCENT",
        help="override a platform's CPU percentage (repeatable)",
    )
    p_carbon.add_argument("--no-figures", action="store_true")
    p_carbon.set_defaults(func=cmd_carbon)

    p_report = sub.add_parser("report", help="regenerate reports from stored run artifacts")
    p_report.add_argument("--run", required=True, help="existing run directory")
    p_report.add_argument("--no-figures", action="store_true")
    p_report.set_defaults(func=cmd_report)

    return parser


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.platform is not None:
        sc = replace(sc, platform=args.platform)
    return sc


def _ghg_intensity(flag_value: Optional[float]) -> float:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(GHG_ENV_VAR)
    if env is not None:
        try:
            return float(env)
        except ValueError:
            raise ConfigError(f"environment variable {GHG_ENV_VAR} must be a number, got {env!r}")
    return 0.540


def _carbon_params(duration_s: float) -> CarbonParams:
    return CarbonParams(
        machine_power_kw=0.06,
        ghg_intensity=_ghg_intensity(None),
        horizon_hours=duration_s / 3600.0,
    )


def cmd_run(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    sim = Simulation(sc)
    report = sim.run()
    apply_carbon(report, _carbon_params(sc.duration_s))
    outdir = Path(args.out) / f"{sc.name}-seed{sc.seed}"
    agreements = sim.market.market.agreement_rows() if sim.market else None
    channels = sim.market.channel_history_rows() if sim.market else None
    written = reports.write_run_dir(
        outdir,
        report,
        scenario_to_dict(sc),
        agreements=agreements,
        channels=channels,
        figures=not args.no_figures,
    )
    print(f"run complete: {outdir}")
    for path in written:
        print(f"  wrote {path}")
    return 0


def _cell_dir(out: Path, sc: Scenario) -> Path:
    return out / "cells" / f"{sc.platform}-m{sc.managers}-tps{sc.input_tps:g}-seed{sc.seed}"


def _run_cell(sc: Scenario) -> str:
    report = Simulation(sc).run()
    return report.to_json()


def cmd_sweep(args) -> int:
    base = _apply_overrides(load_scenario(args.scenario), args)
    file_managers, file_loads = load_sweep_grid(args.scenario)
    managers = (
        args.managers
        if args.managers is not None
        else (file_managers if file_managers is not None else DEFAULT_MANAGER_GRID)
    )
    loads = (
        args.load
        if args.load is not None
        else (file_loads if file_loads is not None else DEFAULT_LOAD_GRID)
    )
    if not managers or not loads:
        raise ConfigError("sweep grid: managers and load lists must be non-empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cells = [sweep_cell(base, m, load) for m in managers for load in loads]
    todo = []
    for sc in cells:
        cdir = _cell_dir(out, sc)
        if args.force or not (cdir / "raw_metrics.json").exists():
            todo.append(sc)

    results = {}
    if todo:
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                for sc, doc in zip(todo, pool.map(_run_cell, todo)):
                    results[sc.name] = doc
        else:
            for sc in todo:
                results[sc.name] = _run_cell(sc)
    for sc in todo:
        cdir = _cell_dir(out, sc)
        cdir.mkdir(parents=True, exist_ok=True)
        (cdir / "raw_metrics.json").write_text(results[sc.name] + "\n")
        (cdir / "effective_config.yaml").write_text(
            yaml.safe_dump(scenario_to_dict(sc), sort_keys=True)
        )

    from .metrics import MetricsReport

    rows: List[SweepRow] = []
    for sc in cells:
        cdir = _cell_dir(out, sc)
        report = MetricsReport.from_json((cdir / "raw_metrics.json").read_text())
        rows.append(row_from_report(report, sc.input_tps))

    (out / "sweep.csv").write_text(reports.sweep_csv(rows))
    (out / "effective_config.yaml").write_text(
        yaml.safe_dump(
            {**scenario_to_dict(base), "sweep": {"managers": managers, "loads": loads}},
            sort_keys=True,
        )
    )
    if not args.no_figures:
        from .figures import render_sweep_figure

        render_sweep_figure(rows, out)
    print(
        f"sweep complete: {len(cells)} cells "
        f"({len(todo)} simulated, {len(cells) - len(todo)} reused) -> {out / 'sweep.csv'}"
    )
    return 0


def cmd_carbon(args) -> int:
    cpu = table3_cpu_defaults()
    for item in args.cpu:
        if "=" not in item:
            raise ConfigError(f"--cpu expects PLATFORM=PERCENT, got {item!r}")
        platform, _, pct = item.partition("=")
        platform = platform.strip().lower()
        if platform not in cpu:
            raise ConfigError(f"--cpu: unknown platform {platform!r}")
        try:
            cpu[platform] = float(pct)
        except ValueError:
            raise ConfigError(f"--cpu: percentage must be a number, got {pct!r}")
    try:
        params = CarbonParams(
            machine_power_kw=args.power,
            ghg_intensity=_ghg_intensity(args.intensity),
            horizon_hours=args.horizon_hours,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    rows = carbon_table(cpu, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "carbon.csv").write_text(reports.carbon_csv(rows))
    if not args.no_figures:
        from .figures import render_carbon_figure

        render_carbon_figure(rows, out)
    for r in rows:
        print(
            f"{r.platform:10s} cpu {r.cpu_percent:7.3f}% -> "
            f"{r.energy_blockchain_kwh * 1e6:10.1f}e-6 kWh -> "
            f"{r.ghg_kg * 1e6:10.1f}e-6 kg CO2-eq"
        )
    print(f"carbon table -> {out / 'carbon.csv'}")
    return 0


def cmd_report(args) -> int:
    rundir = Path(args.run)
    if not (rundir / "raw_metrics.json").is_file():
        raise ConfigError(f"--run: {rundir} does not contain raw_metrics.json")
    written = reports.regenerate_run_dir(rundir, figures=not args.no_figures)
    for path in written:
        print(f"  wrote {path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownPlatform, InvalidScenario) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # simulation/runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
