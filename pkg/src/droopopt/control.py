"""Proportional volt-var-watt control and closed-loop stability analysis.

The loop iterates measure -> actuate: each controller reads its local
squared-voltage deviation E and commands u = -alpha*E, v = -beta*E.  With
gain matrices A = diag(-alpha), B = diag(-beta) the network closes the loop
as E(k+1) = (R A + X B) E(k) + E_tilde, stable when the spectral radius of
R A + X B is below one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Feeder, SensitivityMatrices
from .powerflow import InjectionProfile, ac_power_flow


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class GainVector:
    """Nonnegative per-bus droop gains for real (alpha) and reactive (beta) power."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, float)
        b = np.asarray(self.beta, float)
        if a.shape != b.shape or a.ndim != 1:
            raise ControlError("alpha and beta must be 1-D vectors of equal length")
        if np.any(a < 0) or np.any(b < 0):
            raise ControlError("gains must be nonnegative")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @classmethod
    def zeros(cls, n: int) -> "GainVector":
        return cls(alpha=np.zeros(n), beta=np.zeros(n))

    @classmethod
    def uniform(cls, n: int, g: float) -> "GainVector":
        return cls(alpha=np.full(n, g), beta=np.full(n, g))

    def masked(self, active: np.ndarray) -> "GainVector":
        """Zero the gains of buses where `active` is False."""
        keep = np.asarray(active, bool).astype(float)
        return GainVector(alpha=self.alpha * keep, beta=self.beta * keep)


@dataclass(frozen=True)
class ClosedLoop:
    """Closed-loop matrix R A + X B with its stability diagnostics.

    norms holds the Frobenius, 1-, infinity- and 2-norm of the stacked
    2N x 2N matrix G H; each bounds the spectral radius from above.
    """

    HG: np.ndarray
    spectral_radius: float
    norms: dict[str, float]


def spectral_radius(M: np.ndarray) -> float:
    """Largest absolute eigenvalue of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    if not np.all(np.isfinite(M)):
        raise ControlError("matrix has non-finite entries")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def gain_matrices(gains: GainVector):
    """Diagonal actuation matrices A = diag(-alpha), B = diag(-beta)."""
    return np.diag(-gains.alpha), np.diag(-gains.beta)


def closed_loop(matrices: SensitivityMatrices, gains: GainVector) -> ClosedLoop:
    """Assemble the closed-loop matrix and every stability diagnostic."""
    n = matrices.n
    if gains.alpha.shape != (n,):
        raise ControlError(f"gains sized {gains.alpha.shape}, network has {n} buses")
    A, B = gain_matrices(gains)
    HG = matrices.R @ A + matrices.X @ B
    H = np.hstack([matrices.R, matrices.X])
    G = np.vstack([A, B])
    GH = G @ H
    norms = {
        "frobenius": float(np.linalg.norm(GH, "fro")),
        "one": float(np.linalg.norm(GH, 1)),
        "infinity": float(np.linalg.norm(GH, np.inf)),
        "two": float(np.linalg.norm(GH, 2)),
    }
    return ClosedLoop(HG=HG, spectral_radius=spectral_radius(HG), norms=norms)


def frobenius_gh(matrices: SensitivityMatrices, gains: GainVector) -> float:
    """Frobenius norm of G H without forming the 2N x 2N product.

    Row i of [R X] contributes (alpha_i^2 + beta_i^2) * ||[R X] row i||^2,
    so the squared norm is a weighted sum of squared gains.
    """
    w = np.sum(matrices.R**2 + matrices.X**2, axis=1)
    return float(np.sqrt(np.sum((gains.alpha**2 + gains.beta**2) * w)))


def local_step(alpha_m: float, beta_m: float, e_prev_m: float):
    """Single controller update: power opposing the measured deviation."""
    return -alpha_m * e_prev_m, -beta_m * e_prev_m


@dataclass(frozen=True)
class Saturation:
    """Optional plant-side actuation limits applied inside the control loop.

    s_rated is the per-bus apparent-power limit (p.u.; 0 forbids actuation),
    shape selects the circular limit or its octagon surrogate.  u_min/u_max
    bound the real power separately (used for state-of-charge headroom).
    """

    s_rated: np.ndarray
    shape: str = "circle"
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None

    def apply(self, u: np.ndarray, v: np.ndarray):
        u = np.clip(u, self.u_min, self.u_max) if self.u_min is not None else u.copy()
        scale = _apparent_power_scale(u, v, self.s_rated, self.shape)
        return u * scale, v * scale


def _apparent_power_scale(u, v, s_rated, shape):
    """Radial shrink factor putting each (u, v) inside its rated region."""
    if shape == "circle":
        reach = np.hypot(u, v)
    elif shape == "octagon":
        angles = np.arange(8) * np.pi / 4
        # Worst half-plane value a_k*u + b_k*v per bus.
        reach = np.max(
            np.cos(angles)[:, None] * u[None, :] + np.sin(angles)[:, None] * v[None, :],
            axis=0,
        )
    else:
        raise ControlError(f"unknown saturation shape {shape!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(reach > s_rated, np.where(reach > 0, s_rated / reach, 0.0), 1.0)
    return scale


@dataclass
class DynamicTrace:
    """Iteration history of the measure -> actuate loop."""

    E: np.ndarray
    u: np.ndarray
    v: np.ndarray
    converged: bool
    iterations_to_tolerance: int | None
    plant: str

    @property
    def steps(self) -> int:
        return self.E.shape[0] - 1

    def final(self):
        return self.E[-1], self.u[-1], self.v[-1]

    def iterations_to(self, tol: float) -> int | None:
        """First step k with ||E(k) - E(k-1)||_inf <= tol, if reached."""
        deltas = np.max(np.abs(np.diff(self.E, axis=0)), axis=1)
        hits = np.nonzero(deltas <= tol)[0]
        return int(hits[0]) + 1 if hits.size else None


def simulate_dynamics(
    feeder: Feeder,
    matrices: SensitivityMatrices,
    gains: GainVector,
    p_load: np.ndarray,
    q_load: np.ndarray,
    init=None,
    steps: int = 100,
    plant: str = "linear",
    tol: float = 1e-6,
    saturation: Saturation | None = None,
    ac_tol: float = 1e-8,
) -> DynamicTrace:
    """Run the closed loop for `steps` iterations against the chosen plant.

    The load (hence E_tilde) is held constant for the whole trace.  init is
    an optional (u0, v0) warm start applied before the first measurement.
    In "ac" mode every measurement comes from a full nonlinear power-flow
    solve; a diverging plant raises ControlError.
    """
    n = matrices.n
    p_load = np.asarray(p_load, float)
    q_load = np.asarray(q_load, float)
    if init is None:
        u = np.zeros(n)
        v = np.zeros(n)
    else:
        u = np.asarray(init[0], float).copy()
        v = np.asarray(init[1], float).copy()
    if saturation is not None:
        u, v = saturation.apply(u, v)

    E_hist = [_measure(feeder, matrices, u, v, p_load, q_load, plant, ac_tol)]
    u_hist = [u.copy()]
    v_hist = [v.copy()]
    converged = False
    iterations_to_tolerance = None
    for k in range(1, steps + 1):
        u = -gains.alpha * E_hist[-1]
        v = -gains.beta * E_hist[-1]
        if saturation is not None:
            u, v = saturation.apply(u, v)
        E = _measure(feeder, matrices, u, v, p_load, q_load, plant, ac_tol)
        E_hist.append(E)
        u_hist.append(u.copy())
        v_hist.append(v.copy())
        if np.max(np.abs(E_hist[-1] - E_hist[-2])) <= tol:
            converged = True
            iterations_to_tolerance = k
            break
    return DynamicTrace(
        E=np.array(E_hist),
        u=np.array(u_hist),
        v=np.array(v_hist),
        converged=converged,
        iterations_to_tolerance=iterations_to_tolerance,
        plant=plant,
    )


def _measure(feeder, matrices, u, v, p_load, q_load, plant, ac_tol):
    if plant == "linear":
        return matrices.R @ (u + p_load) + matrices.X @ (v + q_load)
    if plant == "ac":
        inj = InjectionProfile(u=u, v=v, p_load=p_load, q_load=q_load)
        state = ac_power_flow(feeder, inj, tol=ac_tol)
        if not state.converged:
            raise ControlError(
                f"AC plant diverged (iterations={state.iterations}, "
                f"mismatch={state.mismatch:.3e})"
            )
        return state.deviation(feeder.slack_voltage)
    raise ControlError(f"unknown plant {plant!r}")


def steady_state(
    matrices: SensitivityMatrices, gains: GainVector, e_tilde: np.ndarray
):
    """Fixed point of the closed loop: solve (I - RA - XB) E = E_tilde.

    Returns (E, u, v).  Raises ControlError when the loop is not a
    contraction (spectral radius >= 1), where no stable fixed point exists.
    """
    loop = closed_loop(matrices, gains)
    if loop.spectral_radius >= 1.0:
        raise ControlError(
            f"spectral radius {loop.spectral_radius:.6f} >= 1: no stable steady state"
        )
    n = matrices.n
    E = np.linalg.solve(np.eye(n) - loop.HG, np.asarray(e_tilde, float))
    return E, -gains.alpha * E, -gains.beta * E
