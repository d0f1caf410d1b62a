"""Inverter-based battery storage model.

Power is limited by the inverter's apparent-power rating; the optimizer
replaces the circular rating with a circumscribing regular octagon to stay
in linear-constraint territory.  Energy bookkeeping is a lower-triangular
cumulative sum over the horizon's (possibly uneven) time steps; charging
efficiency is unity and reactive power never moves the state of charge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StorageError(ValueError):
    pass


@dataclass(frozen=True)
class BatterySpec:
    """Battery at a bus: inverter rating (kVA) and energy window (kWh)."""

    bus: int
    s_rated_kva: float
    c_max_kwh: float
    c_min_kwh: float = 0.0
    c_init_kwh: float = 0.0
    c_final_kwh: float | None = None

    def __post_init__(self):
        if self.s_rated_kva < 0:
            raise StorageError(f"bus {self.bus}: negative inverter rating")
        if not (0 <= self.c_min_kwh <= self.c_init_kwh <= self.c_max_kwh):
            raise StorageError(
                f"bus {self.bus}: need 0 <= c_min <= c_init <= c_max, got "
                f"[{self.c_min_kwh}, {self.c_init_kwh}, {self.c_max_kwh}]"
            )
        if self.c_final_kwh is not None and not (
            self.c_min_kwh <= self.c_final_kwh <= self.c_max_kwh
        ):
            raise StorageError(f"bus {self.bus}: final charge outside energy window")

    def final_target_kwh(self) -> float:
        """Day-end charge target; defaults to the initial level (neutral day)."""
        return self.c_init_kwh if self.c_final_kwh is None else self.c_final_kwh


@dataclass(frozen=True)
class TimeGrid:
    """Ordered step lengths (hours) of an optimization horizon."""

    deltas: tuple[float, ...]

    def __post_init__(self):
        if len(self.deltas) == 0:
            raise StorageError("time grid needs at least one step")
        if any(d <= 0 for d in self.deltas):
            raise StorageError("time steps must be positive")

    @property
    def steps(self) -> int:
        return len(self.deltas)

    @property
    def span_hours(self) -> float:
        return float(sum(self.deltas))

    def as_array(self) -> np.ndarray:
        return np.array(self.deltas, dtype=float)


@dataclass(frozen=True)
class EnergyMatrix:
    """Lower-triangular cumulative-energy map: row t sums Delta(j)*u(j), j <= t."""

    L: np.ndarray


def energy_matrix(grid: TimeGrid) -> EnergyMatrix:
    d = grid.as_array()
    T = grid.steps
    L = np.tril(np.tile(d, (T, 1)))
    return EnergyMatrix(L=L)


def soc_trajectory(spec: BatterySpec, u_series_kw, grid: TimeGrid) -> np.ndarray:
    """State of charge (kWh) after each step for a real-power series (kW).

    Consumption-positive u charges the battery: SOC(t) = c_init + sum of
    Delta(j)*u(j) up to t.
    """
    u = np.asarray(u_series_kw, dtype=float)
    if u.shape != (grid.steps,):
        raise StorageError(f"power series must have length {grid.steps}")
    return spec.c_init_kwh + energy_matrix(grid).L @ u


OCTAGON_ANGLES = np.arange(8) * np.pi / 4


@dataclass(frozen=True)
class OctagonConstraint:
    """Eight half-planes circumscribing the apparent-power disk of radius s_rated.

    Half-plane k is cos(k*pi/4)*u + sin(k*pi/4)*v <= s_rated; the first
    normal points along +u.  The polygon's vertices sit at radius
    s_rated / cos(pi/8), about 8.24% outside the disk.
    """

    s_rated: float

    @property
    def half_planes(self) -> np.ndarray:
        """Rows (a_k, b_k) with a_k*u + b_k*v <= s_rated."""
        return np.column_stack([np.cos(OCTAGON_ANGLES), np.sin(OCTAGON_ANGLES)])

    @property
    def vertex_radius(self) -> float:
        return self.s_rated / np.cos(np.pi / 8)

    def contains(self, u: float, v: float, slack: float = 0.0) -> bool:
        hp = self.half_planes
        return bool(np.all(hp[:, 0] * u + hp[:, 1] * v <= self.s_rated + slack))


@dataclass(frozen=True)
class FeasibilityReport:
    """Inverter feasibility of an operating point under both rating shapes."""

    circle_ok: bool
    octagon_ok: bool
    circle_margin: float
    octagon_margin: float

    @property
    def consistent(self) -> bool:
        """False when the octagon admits a point the true circle rejects."""
        return self.circle_ok or not self.octagon_ok


def check_feasible(spec: BatterySpec, u_kw: float, v_kvar: float) -> FeasibilityReport:
    """Test (u, v) against the circular rating and its octagon surrogate.

    Margins are rating minus reach: negative means infeasible by that much.
    """
    s = spec.s_rated_kva
    circle_reach = float(np.hypot(u_kw, v_kvar))
    octagon = OctagonConstraint(s_rated=s)
    hp = octagon.half_planes
    octagon_reach = float(np.max(hp[:, 0] * u_kw + hp[:, 1] * v_kvar))
    return FeasibilityReport(
        circle_ok=circle_reach <= s,
        octagon_ok=octagon_reach <= s,
        circle_margin=s - circle_reach,
        octagon_margin=s - octagon_reach,
    )
