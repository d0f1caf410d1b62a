"""Command-line entry points.

Subcommands: validate, design-gains, simulate-dynamics, run-rho, metrics.
Failures print a machine-readable error JSON to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from . import rho as drho
from .control import simulate_dynamics
from .designer import (
    DesignConfig,
    Forecast,
    GainSchedule,
    design_direct,
    design_opfpc,
    design_optbench,
    direct_gain_vector,
)
from .network import build_rx
from .storage import TimeGrid


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface everything as structured output
        json.dump(
            {"error": {"type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="droopopt",
        description="Design and simulate droop gain schedules for radial feeders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scenario=True, batteries=True, config=True):
        p.add_argument("--feeder", required=True, help="feeder JSON file")
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario CSV file")
        if batteries:
            p.add_argument("--batteries", help="battery roster JSON file")
        if config:
            p.add_argument("--config", help="run config JSON file")
        p.add_argument("--epsilon", type=float, help="stability margin override")
        p.add_argument("--seed", type=int, help="seed recorded in outputs")

    p = sub.add_parser("validate", help="check input files")
    add_common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("design-gains", help="design a gain schedule at one instant")
    add_common(p)
    p.add_argument("--method", choices=["direct", "optbench", "opfpc"], required=True)
    p.add_argument("--at-hour", type=float, default=None,
                   help="design instant (hours into the scenario; default start)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("simulate-dynamics", help="trace the droop loop at one instant")
    add_common(p)
    p.add_argument("--method", choices=["direct", "optbench", "opfpc"], default="direct")
    p.add_argument("--at-hour", type=float, default=None)
    p.add_argument("--plant", choices=["linear", "ac"], default="ac")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--warm-start", action="store_true",
                   help="initialize from the analytic steady state")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_dynamics)

    p = sub.add_parser("run-rho", help="execute a full receding-horizon day")
    add_common(p)
    p.add_argument("--method", choices=["baseline", "direct", "optbench", "opfpc"],
                   help="designer override")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("metrics", help="recompute summary indices from a trace")
    p.add_argument("--trace", required=True, help="trace CSV from run-rho")
    p.add_argument("--feeder", required=True, help="feeder JSON (for the power base)")
    p.set_defaults(func=_cmd_metrics)

    return parser


def _load_inputs(args, need_scenario=True):
    feeder = dio.load_feeder(args.feeder)
    scenario = dio.load_scenario(args.scenario) if need_scenario else None
    batteries = dio.load_batteries(args.batteries) if getattr(args, "batteries", None) else []
    config = dio.load_config(
        getattr(args, "config", None),
        epsilon=getattr(args, "epsilon", None),
        seed=getattr(args, "seed", None),
        designer=getattr(args, "method", None),
    )
    if scenario is not None and scenario.n_buses != feeder.n:
        raise dio.InputError(
            f"scenario covers {scenario.n_buses} buses, feeder has {feeder.n}"
        )
    for b in batteries:
        if not 1 <= b.bus <= feeder.n:
            raise dio.InputError(f"battery at unknown bus {b.bus}")
    return feeder, scenario, batteries, config


def _cmd_validate(args) -> int:
    feeder, scenario, batteries, config = _load_inputs(args)
    summary = {
        "feeder": {"buses": feeder.n + 1, "segments": len(feeder.segments)},
        "scenario": {
            "samples": scenario.samples,
            "resolution_minutes": scenario.resolution_hours * 60.0,
            "span_hours": scenario.span_hours,
        },
        "batteries": len(batteries),
        "designer": config.designer,
        "status": "ok",
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _design_at(feeder, scenario, batteries, config, method, at_hour):
    matrices = build_rx(feeder)
    idx = 0
    if at_hour is not None:
        idx = int(round((at_hour - scenario.start_hour) / scenario.resolution_hours))
        if not 0 <= idx < scenario.samples:
            raise dio.InputError(f"design instant {at_hour} h outside the scenario")
    p_pu, q_pu = scenario.to_pu(feeder.power_base_va)
    if method == "direct":
        gv = direct_gain_vector(matrices, config.epsilon)
        grid = TimeGrid(deltas=(config.gain_update_minutes / 60.0,))
        return GainSchedule.from_gains(matrices, grid, [gv]), matrices, idx
    if method == "optbench":
        e_tilde = matrices.R @ p_pu[idx] + matrices.X @ q_pu[idx]
        gv = design_optbench(matrices, e_tilde, config.epsilon, config.backend)
        grid = TimeGrid(deltas=(config.gain_update_minutes / 60.0,))
        return GainSchedule.from_gains(
            matrices, grid, [gv], frobenius_bound=1.0 - config.epsilon
        ), matrices, idx
    # opfpc on the truncated horizon from the design instant
    grid = drho.build_time_grid(
        config.scheme,
        scenario.start_hour + idx * scenario.resolution_hours,
        end_hours=scenario.start_hour + scenario.span_hours,
    )
    forecaster = drho.make_forecaster(config.forecaster)
    p_f, q_f = forecaster(p_pu, q_pu, idx, scenario.resolution_hours, grid)
    schedule, _ = design_opfpc(
        feeder, matrices, Forecast.from_loads(matrices, p_f, q_f), batteries, grid,
        config.design_config(),
    )
    return schedule, matrices, idx


def _cmd_design(args) -> int:
    feeder, scenario, batteries, config = _load_inputs(args)
    schedule, matrices, idx = _design_at(
        feeder, scenario, batteries, config, args.method, args.at_hour
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"gains_{args.method}.json"
    dio.write_schedule(schedule, out)
    summary = {
        "method": args.method,
        "file": str(out),
        "periods": schedule.grid.steps,
        "diagnostics": [dict(d) for d in schedule.diagnostics],
    }
    if args.method == "direct":
        summary["g"] = design_direct(matrices, config.epsilon)
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _cmd_dynamics(args) -> int:
    feeder, scenario, batteries, config = _load_inputs(args)
    schedule, matrices, idx = _design_at(
        feeder, scenario, batteries, config, args.method, args.at_hour
    )
    gains = schedule.gains_at(0)
    p_pu, q_pu = scenario.to_pu(feeder.power_base_va)
    init = None
    if args.warm_start:
        from .control import steady_state

        e_tilde = matrices.R @ p_pu[idx] + matrices.X @ q_pu[idx]
        _, u0, v0 = steady_state(matrices, gains, e_tilde)
        init = (u0, v0)
    trace = simulate_dynamics(
        feeder, matrices, gains, p_pu[idx], q_pu[idx],
        init=init, steps=args.steps, plant=args.plant, tol=config.inner_tol,
        ac_tol=config.plant_tol,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"dynamics_{args.method}_{args.plant}.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "bus", "E_pu2", "volt_pu", "u_pu", "v_pu"])
        for k in range(trace.E.shape[0]):
            for m in range(feeder.n):
                e = trace.E[k, m]
                volt = np.sqrt(max(feeder.slack_voltage**2 - e, 0.0))
                writer.writerow([
                    k, m + 1, repr(float(e)), repr(float(volt)),
                    repr(float(trace.u[k, m])), repr(float(trace.v[k, m])),
                ])
    json.dump(
        {
            "file": str(out),
            "converged": bool(trace.converged),
            "iterations_to_tolerance": trace.iterations_to_tolerance,
            "plant": args.plant,
        },
        sys.stdout,
        indent=2,
        sort_keys=True,
    )
    sys.stdout.write("\n")
    return 0


def _cmd_run(args) -> int:
    feeder, scenario, batteries, config = _load_inputs(args)
    trace = drho.run_rho(feeder, scenario, batteries, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / f"trace_{config.designer}.csv"
    report_path = out_dir / f"report_{config.designer}.json"
    dio.write_trace(trace, trace_path)
    run_metrics = drho.metrics(trace)
    diagnostics = {
        "solve_times_s": [round(t, 6) for t in trace.solve_times],
        "max_iters_warm": int(trace.iters_warm.max()),
        "max_iters_cold": int(trace.iters_cold.max()),
        "intervals": int(trace.intervals),
        "all_converged": bool(trace.converged.all()),
    }
    dio.write_report(
        report_path, run_metrics, diagnostics, {"trace_csv": str(trace_path)}, config
    )
    json.dump(
        {"metrics": run_metrics, "report": str(report_path), "trace": str(trace_path)},
        sys.stdout,
        indent=2,
        sort_keys=True,
    )
    sys.stdout.write("\n")
    return 0


def _cmd_metrics(args) -> int:
    feeder = dio.load_feeder(args.feeder)
    result = dio.metrics_from_csv(args.trace, feeder.power_base_va)
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
