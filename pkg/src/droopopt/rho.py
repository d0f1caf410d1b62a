"""Receding-horizon execution of a gain-scheduled feeder over a day.

The engine walks a 5-minute scenario, re-optimizing gains every 15 minutes
on a horizon whose steps coarsen into the future, dispatching the first
periods to the local controllers, and simulating each interval's closed
loop against the nonlinear plant.  Battery state of charge is integrated
from the power the plant actually applied, clamped to the physical window.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .control import ControlError, GainVector, Saturation, simulate_dynamics
from .designer import (
    DesignConfig,
    DesignError,
    Forecast,
    GainSchedule,
    design_opfpc,
    design_optbench,
    direct_gain_vector,
)
from .network import Feeder, SensitivityMatrices, build_rx
from .powerflow import InjectionProfile, ac_power_flow, losses, substation_power
from .storage import BatterySpec, TimeGrid


class RhoError(ValueError):
    pass


DEFAULT_SEGMENTS = ((6, 5.0 / 60.0), (7, 30.0 / 60.0), (10, 2.0))


@dataclass(frozen=True)
class HorizonScheme:
    """Horizon discretization: (count, step length in hours) segments."""

    segments: tuple[tuple[int, float], ...] = DEFAULT_SEGMENTS

    def __post_init__(self):
        if not self.segments:
            raise RhoError("horizon scheme has no segments")
        deltas = []
        for count, delta in self.segments:
            if count <= 0 or delta <= 0:
                raise RhoError(f"bad horizon segment ({count}, {delta})")
            deltas.extend([delta] * count)
        if any(b < a for a, b in zip(deltas, deltas[1:])):
            raise RhoError("horizon steps must not shrink along the horizon")

    @property
    def span_hours(self) -> float:
        return sum(c * d for c, d in self.segments)


def build_time_grid(
    scheme: HorizonScheme, now_hours: float = 0.0, end_hours: float | None = None
) -> TimeGrid:
    """Instantiate the scheme at `now`, truncated at `end_hours` if given.

    Truncation trims the last step so the grid covers exactly the remaining
    window; used near the end of a finite scenario.
    """
    deltas: list[float] = []
    for count, delta in scheme.segments:
        deltas.extend([delta] * count)
    if end_hours is not None:
        remaining = end_hours - now_hours
        if remaining <= 1e-12:
            raise RhoError(f"no horizon left: now={now_hours}, end={end_hours}")
        kept: list[float] = []
        acc = 0.0
        for d in deltas:
            if acc + d >= remaining - 1e-12:
                kept.append(remaining - acc)
                acc = remaining
                break
            kept.append(d)
            acc += d
        deltas = kept
    return TimeGrid(deltas=tuple(deltas))


@dataclass(frozen=True)
class Scenario:
    """Uniform-resolution uncontrollable load series (physical units).

    p_kw rows are intervals, columns downstream buses; consumption positive,
    PV export negative.  q_kvar is the matching reactive series.
    """

    resolution_hours: float
    p_kw: np.ndarray
    q_kvar: np.ndarray
    start_hour: float = 0.0

    def __post_init__(self):
        if self.p_kw.shape != self.q_kvar.shape:
            raise RhoError("real and reactive series must have the same shape")
        if self.resolution_hours <= 0:
            raise RhoError("scenario resolution must be positive")

    @property
    def samples(self) -> int:
        return self.p_kw.shape[0]

    @property
    def n_buses(self) -> int:
        return self.p_kw.shape[1]

    @property
    def span_hours(self) -> float:
        return self.samples * self.resolution_hours

    def to_pu(self, power_base_va: float):
        scale = 1e3 / power_base_va
        return self.p_kw * scale, self.q_kvar * scale


@dataclass(frozen=True)
class RunConfig:
    """Everything a receding-horizon run needs besides the physical data."""

    epsilon: float = 0.1
    designer: str = "opfpc"  # baseline | direct | optbench | opfpc
    scheme: HorizonScheme = HorizonScheme()
    reopt_minutes: float = 15.0
    gain_update_minutes: float = 5.0
    forecaster: str = "perfect"  # perfect | persistence
    final_charge_enforced: bool = False
    include_voltage_eq: bool = False
    linearization: str = "taylor-at-zero"
    plant_tol: float = 1e-8
    inner_tol: float = 1e-6
    inner_cap: int = 200
    backend: str = "CLARABEL"
    seed: int = 0

    def design_config(self) -> DesignConfig:
        return DesignConfig(
            epsilon=self.epsilon,
            include_voltage_eq=self.include_voltage_eq,
            linearization=self.linearization,
            final_charge_enforced=self.final_charge_enforced,
            backend=self.backend,
        )


# ---------------------------------------------------------------------------
# Forecasters
# ---------------------------------------------------------------------------

class PerfectForesight:
    """Reads the scenario ahead, averaging samples into each horizon step."""

    def __call__(self, p_pu, q_pu, now_idx, resolution_hours, grid: TimeGrid):
        return (
            _window_average(p_pu, now_idx, resolution_hours, grid),
            _window_average(q_pu, now_idx, resolution_hours, grid),
        )


class Persistence:
    """Holds the latest measurement flat across the horizon."""

    def __call__(self, p_pu, q_pu, now_idx, resolution_hours, grid: TimeGrid):
        T = grid.steps
        return np.tile(p_pu[now_idx], (T, 1)), np.tile(q_pu[now_idx], (T, 1))


def _window_average(series, now_idx, resolution_hours, grid: TimeGrid):
    """Time-weighted mean of the samples covering each horizon step."""
    out = np.zeros((grid.steps, series.shape[1]))
    t0 = 0.0
    for t, delta in enumerate(grid.deltas):
        a = now_idx + t0 / resolution_hours
        b = now_idx + (t0 + delta) / resolution_hours
        lo = int(np.floor(a + 1e-9))
        hi = int(np.ceil(b - 1e-9))
        weights = []
        rows = []
        for k in range(lo, hi):
            kk = min(k, series.shape[0] - 1)  # hold the last sample if short
            overlap = min(b, k + 1) - max(a, k)
            if overlap > 1e-12:
                weights.append(overlap)
                rows.append(series[kk])
        w = np.array(weights)
        out[t] = (w[:, None] * np.array(rows)).sum(axis=0) / w.sum()
        t0 += delta
    return out


def make_forecaster(name: str):
    if name == "perfect":
        return PerfectForesight()
    if name == "persistence":
        return Persistence()
    raise RhoError(f"unknown forecaster {name!r}")


# ---------------------------------------------------------------------------
# Engine state and the re-optimization step
# ---------------------------------------------------------------------------

@dataclass
class RhoState:
    """Mutable engine state between intervals."""

    wall_hours: float
    soc_kwh: dict[int, float]
    dispatch: GainSchedule | None
    failures: int = 0


def rho_step(
    feeder: Feeder,
    matrices: SensitivityMatrices,
    scenario: Scenario,
    now_idx: int,
    state: RhoState,
    batteries: list[BatterySpec],
    config: RunConfig,
) -> tuple[GainSchedule, dict]:
    """One re-optimization: forecast, design, return the dispatch window.

    The dispatch window holds the gains for the next reopt period at
    gain-update resolution.  On solver failure the previous dispatch is held
    once, then gains fall to zero.
    """
    n = matrices.n
    update_h = config.gain_update_minutes / 60.0
    slots = max(1, int(round(config.reopt_minutes / config.gain_update_minutes)))
    window = TimeGrid(deltas=tuple([update_h] * slots))
    now_h = scenario.start_hour + now_idx * scenario.resolution_hours
    p_pu, q_pu = scenario.to_pu(feeder.power_base_va)

    diag = {"designer": config.designer, "solve_time": 0.0, "fallback": False}

    def replicate(gv: GainVector) -> GainSchedule:
        return GainSchedule.from_gains(matrices, window, [gv] * slots)

    try:
        if config.designer == "baseline":
            return replicate(GainVector.zeros(n)), diag
        if config.designer == "direct":
            return replicate(direct_gain_vector(matrices, config.epsilon)), diag
        if config.designer == "optbench":
            e_tilde = matrices.R @ p_pu[now_idx] + matrices.X @ q_pu[now_idx]
            start = time.perf_counter()
            gv = design_optbench(matrices, e_tilde, config.epsilon, config.backend)
            diag["solve_time"] = time.perf_counter() - start
            return replicate(gv), diag
        if config.designer == "opfpc":
            grid = build_time_grid(
                config.scheme, now_h, end_hours=scenario.start_hour + scenario.span_hours
            )
            forecaster = make_forecaster(config.forecaster)
            p_f, q_f = forecaster(p_pu, q_pu, now_idx, scenario.resolution_hours, grid)
            forecast = Forecast.from_loads(matrices, p_f, q_f)
            start = time.perf_counter()
            schedule, solution = design_opfpc(
                feeder, matrices, forecast, batteries, grid, config.design_config(),
                soc_kwh=dict(state.soc_kwh),
            )
            diag["solve_time"] = time.perf_counter() - start
            diag["objective"] = solution.objective_value
            # Keep only the gain-update slots inside the dispatch window.
            per_slot = []
            t0 = 0.0
            for _ in range(slots):
                idx = _period_at(schedule.grid, t0)
                per_slot.append(schedule.gains_at(idx))
                t0 += update_h
            return GainSchedule.from_gains(
                matrices, window, per_slot, frobenius_bound=1.0 - config.epsilon
            ), diag
        raise RhoError(f"unknown designer {config.designer!r}")
    except (DesignError, RhoError) as exc:
        diag["fallback"] = True
        diag["error"] = str(exc)
        state.failures += 1
        if state.dispatch is not None and state.failures == 1:
            return state.dispatch, diag
        return replicate(GainVector.zeros(n)), diag


def _period_at(grid: TimeGrid, offset_hours: float) -> int:
    acc = 0.0
    for t, d in enumerate(grid.deltas):
        acc += d
        if offset_hours < acc - 1e-9:
            return t
    return grid.steps - 1


# ---------------------------------------------------------------------------
# Full-day execution
# ---------------------------------------------------------------------------

@dataclass
class ScenarioTrace:
    """Per-interval record of a receding-horizon run (per-unit quantities)."""

    feeder: Feeder
    resolution_hours: float
    times: np.ndarray
    voltages: np.ndarray  # I x (N+1), magnitudes
    deviations: np.ndarray  # I x N
    u: np.ndarray  # I x N
    v: np.ndarray  # I x N
    alpha: np.ndarray  # I x N applied gains
    beta: np.ndarray
    soc_kwh: np.ndarray  # I x B, battery order as given
    battery_buses: tuple[int, ...]
    loss_pu: np.ndarray  # I
    s_sub_pu: np.ndarray  # I
    iters_warm: np.ndarray  # I, to inner_tol
    iters_cold: np.ndarray
    iters_coarse: np.ndarray  # I, warm iterations to 1e-3
    converged: np.ndarray  # I bools
    reoptimized: np.ndarray  # I bools
    solve_times: list = field(default_factory=list)

    @property
    def intervals(self) -> int:
        return len(self.times)


def run_rho(
    feeder: Feeder,
    scenario: Scenario,
    batteries: list[BatterySpec],
    config: RunConfig,
) -> ScenarioTrace:
    """Execute the two-layer loop over the whole scenario.

    Every interval runs the local droop loop to steady state against the AC
    plant (warm-started from the previous interval; a cold-start count is
    recorded for diagnostics), with inverter power clipped to the true
    circular rating and real power clipped to the battery's state-of-charge
    headroom.  Re-optimization happens on the configured cadence.  When the
    day-end charge target is enforced, the closing dispatch window hands the
    batteries over to a terminal trim that lands the state of charge on the
    target exactly.
    """
    feeder_n = feeder.n
    if scenario.n_buses != feeder_n:
        raise RhoError(
            f"scenario has {scenario.n_buses} bus columns, feeder has {feeder_n}"
        )
    matrices = build_rx(feeder)
    p_pu, q_pu = scenario.to_pu(feeder.power_base_va)
    res_h = scenario.resolution_hours
    steps_per_reopt = max(1, int(round(config.reopt_minutes / 60.0 / res_h)))
    steps_per_slot = max(1, int(round(config.gain_update_minutes / 60.0 / res_h)))
    base_va = feeder.power_base_va
    kw_per_pu = base_va / 1e3

    by_bus = {b.bus: b for b in batteries}
    battery_buses = tuple(sorted(by_bus))
    s_rated_pu = np.zeros(feeder_n)
    for b in batteries:
        s_rated_pu[b.bus - 1] = b.s_rated_kva / kw_per_pu
    active_mask = s_rated_pu > 0

    n_int = scenario.samples
    state = RhoState(
        wall_hours=scenario.start_hour,
        soc_kwh={b.bus: b.c_init_kwh for b in batteries},
        dispatch=None,
    )

    trace = ScenarioTrace(
        feeder=feeder,
        resolution_hours=res_h,
        times=np.zeros(n_int),
        voltages=np.zeros((n_int, feeder_n + 1)),
        deviations=np.zeros((n_int, feeder_n)),
        u=np.zeros((n_int, feeder_n)),
        v=np.zeros((n_int, feeder_n)),
        alpha=np.zeros((n_int, feeder_n)),
        beta=np.zeros((n_int, feeder_n)),
        soc_kwh=np.zeros((n_int, len(battery_buses))),
        battery_buses=battery_buses,
        loss_pu=np.zeros(n_int),
        s_sub_pu=np.zeros(n_int),
        iters_warm=np.zeros(n_int, dtype=int),
        iters_cold=np.zeros(n_int, dtype=int),
        iters_coarse=np.zeros(n_int, dtype=int),
        converged=np.zeros(n_int, dtype=bool),
        reoptimized=np.zeros(n_int, dtype=bool),
    )

    prev_uv = None
    trim_window_start = None
    if config.final_charge_enforced:
        trim_window_start = n_int - steps_per_reopt

    for i in range(n_int):
        now_h = scenario.start_hour + i * res_h
        state.wall_hours = now_h
        if i % steps_per_reopt == 0:
            dispatch, diag = rho_step(
                feeder, matrices, scenario, i, state, batteries, config
            )
            if not diag.get("fallback"):
                state.failures = 0
            state.dispatch = dispatch
            trace.reoptimized[i] = True
            trace.solve_times.append(diag.get("solve_time", 0.0))
        slot = (i % steps_per_reopt) // steps_per_slot
        gains = state.dispatch.gains_at(min(slot, state.dispatch.grid.steps - 1))
        gains = gains.masked(active_mask)

        # Battery headroom for this interval, in per-unit real power.
        u_min = np.full(feeder_n, -np.inf)
        u_max = np.full(feeder_n, np.inf)
        for bus in battery_buses:
            spec = by_bus[bus]
            soc = state.soc_kwh[bus]
            u_min[bus - 1] = (spec.c_min_kwh - soc) / kw_per_pu / res_h
            u_max[bus - 1] = (spec.c_max_kwh - soc) / kw_per_pu / res_h
        u_min[~active_mask] = 0.0
        u_max[~active_mask] = 0.0
        saturation = Saturation(
            s_rated=s_rated_pu, shape="circle", u_min=u_min, u_max=u_max
        )

        applied_gains = gains
        u_i, v_i, ok = _run_inner(
            feeder, matrices, gains, p_pu[i], q_pu[i], prev_uv, saturation,
            config, trace, i,
        )
        if not ok:
            # Plant diverged under these gains: zero them for the interval.
            applied_gains = GainVector.zeros(feeder_n)
            u_i, v_i, ok = _run_inner(
                feeder, matrices, applied_gains, p_pu[i], q_pu[i], None, saturation,
                config, trace, i,
            )

        if trim_window_start is not None and i >= trim_window_start:
            u_i, v_i = _terminal_trim(
                u_i, v_i, state, by_bus, battery_buses, s_rated_pu,
                kw_per_pu, res_h, (n_int - i) * res_h, u_min, u_max,
            )

        inj = InjectionProfile(u=u_i, v=v_i, p_load=p_pu[i], q_load=q_pu[i])
        ac = ac_power_flow(feeder, inj, tol=config.plant_tol)
        total_loss, _ = losses(ac, feeder)

        for bus in battery_buses:
            spec = by_bus[bus]
            soc = state.soc_kwh[bus] + u_i[bus - 1] * kw_per_pu * res_h
            state.soc_kwh[bus] = min(max(soc, spec.c_min_kwh), spec.c_max_kwh)

        trace.times[i] = now_h
        trace.voltages[i] = np.abs(ac.V)
        trace.deviations[i] = ac.deviation(feeder.slack_voltage)
        trace.u[i] = u_i
        trace.v[i] = v_i
        trace.alpha[i] = applied_gains.alpha
        trace.beta[i] = applied_gains.beta
        trace.soc_kwh[i] = [state.soc_kwh[b] for b in battery_buses]
        trace.loss_pu[i] = total_loss
        trace.s_sub_pu[i] = abs(substation_power(ac, feeder))
        trace.converged[i] = ac.converged and ok
        prev_uv = (u_i, v_i)

    return trace


def _run_inner(feeder, matrices, gains, p_i, q_i, prev_uv, saturation, config,
               trace, i):
    """Inner droop loop with a safeguarded warm start.

    Runs a flat (cold) start, then a run initialized from the previous
    interval's steady state, and applies the warm run only when its first
    iterate moves no more than the cold one's -- around sharp operating
    transitions (demand flipping to export) the stale point is the worse
    guess and the engine falls back to the flat start.
    """
    try:
        cold = simulate_dynamics(
            feeder, matrices, gains, p_i, q_i,
            init=None, steps=config.inner_cap, plant="ac",
            tol=config.inner_tol, saturation=saturation, ac_tol=config.plant_tol,
        )
        applied = cold
        if prev_uv is not None:
            warm = simulate_dynamics(
                feeder, matrices, gains, p_i, q_i,
                init=prev_uv, steps=config.inner_cap, plant="ac",
                tol=config.inner_tol, saturation=saturation, ac_tol=config.plant_tol,
            )
            if _first_move(warm) <= _first_move(cold):
                applied = warm
    except ControlError:
        return np.zeros(matrices.n), np.zeros(matrices.n), False
    cap = config.inner_cap + 1
    trace.iters_warm[i] = applied.iterations_to_tolerance or cap
    trace.iters_cold[i] = cold.iterations_to_tolerance or cap
    trace.iters_coarse[i] = applied.iterations_to(1e-3) or cap
    _, u_i, v_i = applied.final()
    return u_i, v_i, applied.converged and cold.converged


def _first_move(trace_dyn) -> float:
    if trace_dyn.E.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(trace_dyn.E[1] - trace_dyn.E[0])))


def _terminal_trim(u_i, v_i, state, by_bus, battery_buses, s_rated_pu,
                   kw_per_pu, res_h, remaining_h, u_min, u_max):
    """Steer each battery's real power so the charge lands on its target.

    Active only in the closing dispatch window of a day-end-anchored run;
    replaces the droop output for the battery's real power and shrinks the
    reactive part when the trimmed point leaves the rated circle.
    """
    u_i = u_i.copy()
    v_i = v_i.copy()
    for bus in battery_buses:
        spec = by_bus[bus]
        m = bus - 1
        target_kw = (spec.final_target_kwh() - state.soc_kwh[bus]) / remaining_h
        u_trim = target_kw / kw_per_pu
        u_trim = min(max(u_trim, u_min[m], -s_rated_pu[m]), u_max[m], s_rated_pu[m])
        u_i[m] = u_trim
        room = s_rated_pu[m] ** 2 - u_trim**2
        v_cap = np.sqrt(room) if room > 0 else 0.0
        v_i[m] = np.clip(v_i[m], -v_cap, v_cap)
    return u_i, v_i


def metrics(trace: ScenarioTrace) -> dict:
    """The four summary indices of a run, in physical units."""
    kw_per_pu = trace.feeder.power_base_va / 1e3
    energy_loss_kwh = float(np.sum(trace.loss_pu * kw_per_pu * trace.resolution_hours))
    return {
        "max_volt_pu": float(trace.voltages.max()),
        "min_volt_pu": float(trace.voltages.min()),
        "energy_loss_kwh": energy_loss_kwh,
        "s_sub_peak_kva": float(trace.s_sub_pu.max() * kw_per_pu),
    }
