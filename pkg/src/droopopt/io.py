"""File ingestion and report emission.

Formats (all documented in the README):

* feeder JSON      -- bases, slack voltage, bus list, impedance segments
* scenario CSV     -- `time` column (HH:MM or fractional hours) plus one
                      `p_<bus>` column per downstream bus in kW; optional
                      `q_<bus>` columns in kvar (derived from the power
                      factor when absent, sign-preserving)
* batteries JSON   -- list of battery specs in kVA / kWh
* config JSON      -- run parameters; horizon scheme in minutes
* gains JSON       -- per-period schedules with stability diagnostics
* trace CSV        -- one row per interval per bus
* report JSON      -- the four summary indices plus run diagnostics
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import math
from pathlib import Path

import numpy as np

from .designer import GainSchedule
from .network import Feeder, FeederError, LineSegment, validate_radial
from .rho import HorizonScheme, RhoError, RunConfig, Scenario, ScenarioTrace
from .storage import BatterySpec, StorageError

DEFAULT_POWER_FACTOR = 0.95


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def load_feeder(path) -> Feeder:
    """Read and validate a feeder JSON file."""
    raw = _read_json(path)
    for key in ("power_base_va", "voltage_base_v"):
        if key not in raw:
            raise InputError(f"feeder file: {key} base required")
    for key in ("buses", "segments"):
        if key not in raw:
            raise InputError(f"feeder file missing required field {key!r}")
    try:
        segments = tuple(
            LineSegment(
                from_bus=int(s["from"]),
                to_bus=int(s["to"]),
                r_pu=float(s["r_pu"]),
                x_pu=float(s["x_pu"]),
            )
            for s in raw["segments"]
        )
        feeder = Feeder(
            buses=tuple(int(b) for b in raw["buses"]),
            segments=segments,
            slack_voltage=float(raw.get("slack_voltage_pu", 1.0)),
            power_base_va=float(raw["power_base_va"]),
            voltage_base_v=float(raw["voltage_base_v"]),
        )
        return validate_radial(feeder)
    except KeyError as exc:
        raise InputError(f"feeder segment missing field {exc}") from exc
    except FeederError as exc:
        raise InputError(f"invalid feeder: {exc}") from exc


def _parse_time(token: str) -> float:
    """HH:MM[:SS] or fractional hours -> hours."""
    token = token.strip()
    if ":" in token:
        parts = token.split(":")
        if len(parts) not in (2, 3):
            raise InputError(f"bad time {token!r}")
        h, m = int(parts[0]), int(parts[1])
        s = int(parts[2]) if len(parts) == 3 else 0
        return h + m / 60.0 + s / 3600.0
    return float(token)


def load_scenario(path, power_factor: float = DEFAULT_POWER_FACTOR) -> Scenario:
    """Read a load scenario CSV.

    Reactive load is taken verbatim from q_<bus> columns when present and
    otherwise derived as p * tan(acos(pf)), keeping the sign of p so PV
    export stays export.
    """
    if not 0 < power_factor <= 1:
        raise InputError(f"power factor must be in (0, 1], got {power_factor}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise InputError("scenario needs a header and at least two data rows")
    header = [c.strip() for c in rows[0]]
    if header[0] != "time":
        raise InputError("first scenario column must be 'time'")
    p_cols = {}
    q_cols = {}
    for k, name in enumerate(header[1:], start=1):
        if name.startswith("p_"):
            p_cols[int(name[2:])] = k
        elif name.startswith("q_"):
            q_cols[int(name[2:])] = k
        else:
            raise InputError(f"unrecognized scenario column {name!r}")
    buses = sorted(p_cols)
    if buses != list(range(1, len(buses) + 1)):
        raise InputError(f"p_ columns must cover buses 1..N, got {buses}")
    if q_cols and sorted(q_cols) != buses:
        raise InputError("q_ columns must match the p_ columns")

    times = []
    p = []
    q = []
    width = len(header)
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise InputError(f"ragged scenario row at line {ln}")
        times.append(_parse_time(row[0]))
        p.append([float(row[p_cols[b]]) for b in buses])
        if q_cols:
            q.append([float(row[q_cols[b]]) for b in buses])
    times = np.array(times)
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise InputError("scenario timestamps must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > 1e-9:
        raise InputError("scenario resolution must be uniform")
    p_kw = np.array(p)
    if q_cols:
        q_kvar = np.array(q)
    else:
        q_kvar = p_kw * math.tan(math.acos(power_factor))
    return Scenario(
        resolution_hours=float(steps[0]),
        p_kw=p_kw,
        q_kvar=q_kvar,
        start_hour=float(times[0]),
    )


def load_batteries(path) -> list[BatterySpec]:
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise InputError("battery roster must be a JSON list")
    specs = []
    try:
        for item in raw:
            specs.append(
                BatterySpec(
                    bus=int(item["bus"]),
                    s_rated_kva=float(item["s_rated_kva"]),
                    c_max_kwh=float(item["c_max_kwh"]),
                    c_min_kwh=float(item.get("c_min_kwh", 0.0)),
                    c_init_kwh=float(item.get("c_init_kwh", 0.0)),
                    c_final_kwh=(
                        float(item["c_final_kwh"])
                        if item.get("c_final_kwh") is not None
                        else None
                    ),
                )
            )
    except KeyError as exc:
        raise InputError(f"battery entry missing field {exc}") from exc
    except StorageError as exc:
        raise InputError(f"invalid battery: {exc}") from exc
    return specs


def load_config(path=None, **overrides) -> RunConfig:
    """Read a run config JSON; keyword overrides win over the file."""
    raw = dict(_read_json(path)) if path is not None else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    scheme = raw.pop("horizon_scheme_minutes", None)
    kwargs = {}
    fields = {
        "epsilon", "designer", "reopt_minutes", "gain_update_minutes",
        "forecaster", "final_charge_enforced", "include_voltage_eq",
        "linearization", "plant_tol", "inner_tol", "inner_cap", "backend", "seed",
    }
    unknown = set(raw) - fields
    if unknown:
        raise InputError(f"unknown config fields: {sorted(unknown)}")
    kwargs.update(raw)
    if scheme is not None:
        try:
            segments = tuple((int(c), float(m) / 60.0) for c, m in scheme)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad horizon scheme {scheme!r}") from exc
        kwargs["scheme"] = HorizonScheme(segments=segments)
    try:
        return RunConfig(**kwargs)
    except (RhoError, TypeError) as exc:
        raise InputError(f"invalid config: {exc}") from exc


def _read_json(path):
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    with open(p) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Emitters
# ---------------------------------------------------------------------------

def schedule_to_dict(schedule: GainSchedule) -> dict:
    return {
        "deltas_hours": list(schedule.grid.deltas),
        "frobenius_bound": schedule.frobenius_bound,
        "periods": [
            {
                "alpha": gv.alpha.tolist(),
                "beta": gv.beta.tolist(),
                **{k: float(v) for k, v in diag.items()},
            }
            for gv, diag in zip(schedule.periods, schedule.diagnostics)
        ],
    }


def write_schedule(schedule: GainSchedule, path) -> None:
    with open(path, "w") as fh:
        json.dump(schedule_to_dict(schedule), fh, indent=2, sort_keys=True)
        fh.write("\n")


TRACE_COLUMNS = [
    "interval", "time_h", "bus", "volt_pu", "dev_pu2", "u_pu", "vq_pu",
    "alpha", "beta", "soc_kwh", "loss_pu", "s_sub_pu",
    "iters_warm", "iters_cold", "iters_coarse", "converged", "reoptimized",
]


def trace_to_csv(trace: ScenarioTrace) -> str:
    """Render a run trace, one row per interval per bus (slack included)."""
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    soc_col = {bus: k for k, bus in enumerate(trace.battery_buses)}
    n = trace.feeder.n
    for i in range(trace.intervals):
        for bus in range(n + 1):
            if bus == 0:
                dev = u = vq = a = b = soc = ""
            else:
                m = bus - 1
                dev = repr(float(trace.deviations[i, m]))
                u = repr(float(trace.u[i, m]))
                vq = repr(float(trace.v[i, m]))
                a = repr(float(trace.alpha[i, m]))
                b = repr(float(trace.beta[i, m]))
                soc = (
                    repr(float(trace.soc_kwh[i, soc_col[bus]]))
                    if bus in soc_col
                    else ""
                )
            writer.writerow([
                i,
                repr(float(trace.times[i])),
                bus,
                repr(float(trace.voltages[i, bus])),
                dev, u, vq, a, b, soc,
                repr(float(trace.loss_pu[i])),
                repr(float(trace.s_sub_pu[i])),
                int(trace.iters_warm[i]),
                int(trace.iters_cold[i]),
                int(trace.iters_coarse[i]),
                int(trace.converged[i]),
                int(trace.reoptimized[i]),
            ])
    return buf.getvalue()


def write_trace(trace: ScenarioTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv(trace))


def metrics_from_csv(path, power_base_va: float) -> dict:
    """Recompute the four summary indices from an emitted trace file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise InputError("empty trace file")
    volts = []
    per_interval: dict[int, dict] = {}
    times = {}
    for row in rows:
        i = int(row["interval"])
        times[i] = float(row["time_h"])
        if int(row["bus"]) > 0:
            volts.append(float(row["volt_pu"]))
        per_interval[i] = {
            "loss_pu": float(row["loss_pu"]),
            "s_sub_pu": float(row["s_sub_pu"]),
        }
    t_sorted = sorted(times)
    if len(t_sorted) > 1:
        res_h = times[t_sorted[1]] - times[t_sorted[0]]
    else:
        res_h = 0.0
    kw_per_pu = power_base_va / 1e3
    loss = sum(per_interval[i]["loss_pu"] for i in t_sorted) * kw_per_pu * res_h
    return {
        "max_volt_pu": max(volts),
        "min_volt_pu": min(volts),
        "energy_loss_kwh": loss,
        "s_sub_peak_kva": max(per_interval[i]["s_sub_pu"] for i in t_sorted) * kw_per_pu,
    }


def write_report(path, metrics: dict, diagnostics: dict, artifacts: dict, config: RunConfig) -> None:
    report = {
        "metrics": metrics,
        "diagnostics": diagnostics,
        "artifacts": artifacts,
        "config": {
            "epsilon": config.epsilon,
            "designer": config.designer,
            "forecaster": config.forecaster,
            "reopt_minutes": config.reopt_minutes,
            "gain_update_minutes": config.gain_update_minutes,
            "final_charge_enforced": config.final_charge_enforced,
            "seed": config.seed,
        },
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
