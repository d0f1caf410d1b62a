"""Steady-state feeder evaluation.

Two models live here: the linearized squared-voltage model used everywhere
for design (lossless branch flows, E = R(u+p) + X(v+q)), and a nonlinear AC
backward-forward sweep used as the validation plant.  Power quantities are
consumption-positive per-unit; battery discharge and PV export are negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Feeder, SensitivityMatrices


class PowerFlowError(ValueError):
    pass


def _as_vector(values, n: int, name: str) -> np.ndarray:
    v = np.zeros(n) if values is None else np.asarray(values, dtype=float)
    if v.shape != (n,):
        raise PowerFlowError(f"{name} must have length {n}, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class InjectionProfile:
    """Per-bus controllable (u, v) and uncontrollable (p_load, q_load) power."""

    u: np.ndarray
    v: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray

    @classmethod
    def build(cls, n: int, u=None, v=None, p_load=None, q_load=None):
        return cls(
            u=_as_vector(u, n, "u"),
            v=_as_vector(v, n, "v"),
            p_load=_as_vector(p_load, n, "p_load"),
            q_load=_as_vector(q_load, n, "q_load"),
        )

    def __add__(self, other: "InjectionProfile") -> "InjectionProfile":
        return InjectionProfile(
            self.u + other.u,
            self.v + other.v,
            self.p_load + other.p_load,
            self.q_load + other.q_load,
        )


@dataclass(frozen=True)
class LinearState:
    """Linear-model solution: E is the squared-voltage deviation V0^2 - Vm^2."""

    E: np.ndarray
    P: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class AcState:
    """Backward-forward sweep solution.

    V holds complex voltages for all buses including the slack at index 0.
    S_branch is the sending-end complex power of each segment, I_branch the
    current magnitude.  mismatch is the worst per-bus complex power residual.
    """

    V: np.ndarray
    S_branch: np.ndarray
    I_branch: np.ndarray
    converged: bool
    iterations: int
    mismatch: float

    def deviation(self, v0: float) -> np.ndarray:
        """Squared-voltage deviation of the downstream buses."""
        return v0**2 - np.abs(self.V[1:]) ** 2


def lindistflow_solve(
    feeder: Feeder, matrices: SensitivityMatrices, inj: InjectionProfile
) -> LinearState:
    """Solve the linear model: lossless flow accumulation plus E = R(u+p)+X(v+q)."""
    net_p = inj.u + inj.p_load
    net_q = inj.v + inj.q_load
    P, Q = branch_flows(feeder, net_p, net_q)
    E = matrices.R @ net_p + matrices.X @ net_q
    return LinearState(E=E, P=P, Q=Q)


def branch_flows(feeder: Feeder, net_p: np.ndarray, net_q: np.ndarray):
    """Leaf-to-root accumulation of net consumption into per-segment flows."""
    n_seg = len(feeder.segments)
    P = np.zeros(n_seg)
    Q = np.zeros(n_seg)
    children = feeder.children()
    index = feeder.segment_index()
    # Segments are stored in BFS order, so the reverse is leaf-first.
    for k in range(n_seg - 1, -1, -1):
        seg = feeder.segments[k]
        m = seg.to_bus
        P[k] = net_p[m - 1]
        Q[k] = net_q[m - 1]
        for child in children[m]:
            kc = index[(m, child)]
            P[k] += P[kc]
            Q[k] += Q[kc]
    return P, Q


def baseline_deviation(
    matrices: SensitivityMatrices, p_load: np.ndarray, q_load: np.ndarray
) -> np.ndarray:
    """Underlying deviation of the uncontrolled network: R @ p_load + X @ q_load."""
    return matrices.R @ np.asarray(p_load, float) + matrices.X @ np.asarray(q_load, float)


def voltage_from_deviation(E: np.ndarray, v0: float = 1.0) -> np.ndarray:
    """Map squared-voltage deviations back to voltage magnitudes."""
    E = np.asarray(E, dtype=float)
    if np.any(E >= v0**2):
        raise PowerFlowError(
            f"deviation >= V0^2 = {v0**2}: voltage collapse in the linear model"
        )
    return np.sqrt(v0**2 - E)


def ac_power_flow(
    feeder: Feeder,
    inj: InjectionProfile,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> AcState:
    """Backward-forward sweep with constant-power loads.

    Backward pass accumulates branch currents from the leaves, forward pass
    propagates voltage drops from the slack.  Convergence requires both the
    complex-voltage change and the nodal power mismatch to fall below
    tolerance; non-convergence is reported on the returned state, not raised.
    """
    n = feeder.n
    s_node = (inj.u + inj.p_load) + 1j * (inj.v + inj.q_load)
    v0 = feeder.slack_voltage + 0j
    V = np.full(n + 1, v0, dtype=complex)

    children = feeder.children()
    index = feeder.segment_index()
    z = np.array([s.r_pu + 1j * s.x_pu for s in feeder.segments])
    n_seg = len(feeder.segments)
    I_branch = np.zeros(n_seg, dtype=complex)

    converged = False
    iterations = 0
    mismatch = np.inf
    for iterations in range(1, max_iter + 1):
        # Backward: branch current = downstream node currents (consumption).
        I_node = np.conj(s_node / V[1:])
        for k in range(n_seg - 1, -1, -1):
            seg = feeder.segments[k]
            I_branch[k] = I_node[seg.to_bus - 1]
            for child in children[seg.to_bus]:
                I_branch[k] += I_branch[index[(seg.to_bus, child)]]
        # Forward: voltage drop along each segment in BFS order.
        V_new = V.copy()
        for k, seg in enumerate(feeder.segments):
            V_new[seg.to_bus] = V_new[seg.from_bus] - z[k] * I_branch[k]
        delta = np.max(np.abs(V_new - V))
        V = V_new
        mismatch = _power_mismatch(feeder, V, s_node, I_branch)
        if delta <= tol and mismatch <= 1e-8:
            converged = True
            break
        if not np.all(np.isfinite(V)):
            break

    S_branch = np.array(
        [V[seg.from_bus] * np.conj(I_branch[k]) for k, seg in enumerate(feeder.segments)]
    )
    return AcState(
        V=V,
        S_branch=S_branch,
        I_branch=np.abs(I_branch),
        converged=converged,
        iterations=iterations,
        mismatch=float(mismatch),
    )


def _power_mismatch(feeder, V, s_node, I_branch) -> float:
    """Worst |S_balance| over downstream buses for the current sweep state."""
    index = feeder.segment_index()
    children = feeder.children()
    parent_of = feeder.parent()
    worst = 0.0
    for m in range(1, feeder.n + 1):
        k_in = index[(parent_of[m], m)]
        s_in = V[m] * np.conj(I_branch[k_in])
        s_out = sum(
            V[m] * np.conj(I_branch[index[(m, c)]]) for c in children[m]
        )
        residual = s_in - s_out - s_node[m - 1]
        worst = max(worst, abs(residual))
    return worst


def losses(state, feeder: Feeder):
    """Total and per-segment resistive loss of a solved state.

    AC states use r * |I|^2 per segment; linear states use the lossless-flow
    surrogate r * (P^2 + Q^2).
    """
    r = np.array([s.r_pu for s in feeder.segments])
    if isinstance(state, AcState):
        per_segment = r * state.I_branch**2
    elif isinstance(state, LinearState):
        per_segment = r * (state.P**2 + state.Q**2)
    else:
        raise TypeError(f"unsupported state type {type(state).__name__}")
    return float(per_segment.sum()), per_segment


def substation_power(state: AcState, feeder: Feeder) -> complex:
    """Complex power entering the feeder from the slack bus."""
    total = 0j
    for k, seg in enumerate(feeder.segments):
        if seg.from_bus == 0:
            total += state.S_branch[k]
    return total
