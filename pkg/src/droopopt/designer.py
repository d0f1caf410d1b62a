"""Gain-schedule design.

Three methods produce droop gains for the same plant:

* direct      -- closed form g = (1 - eps) / rho(R + X), one gain everywhere,
                 saturating the spectral-radius margin exactly.
* opt-bench   -- minimize the worst steady-state deviation (infinity norm)
                 under the Frobenius stability surrogate, using the
                 first-order expansion E ~ (I + RA + XB) E_tilde.
* opf-pc      -- multi-period loss-minimizing program coupling the gains to
                 forecast deviations, with per-battery inverter octagons and
                 cumulative energy limits over a (possibly uneven) horizon.

All designed schedules keep every period's closed loop inside the requested
stability margin; the optimization-based ones bound the Frobenius norm of
G H, the direct method bounds the spectral radius itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import program as prog
from .control import GainVector, closed_loop, frobenius_gh, spectral_radius
from .network import Feeder, SensitivityMatrices
from .storage import OCTAGON_ANGLES, BatterySpec, TimeGrid, energy_matrix


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignConfig:
    """Knobs shared by the optimization-based designers."""

    epsilon: float = 0.1
    include_voltage_eq: bool = False
    linearization: str = "taylor-at-zero"  # or "previous-steady-state"
    final_charge_enforced: bool = False
    backend: str = "CLARABEL"

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise DesignError(f"stability margin must be in (0, 1], got {self.epsilon}")
        if self.linearization not in ("taylor-at-zero", "previous-steady-state"):
            raise DesignError(f"unknown linearization {self.linearization!r}")


@dataclass(frozen=True)
class Forecast:
    """Per-period uncontrollable load (p.u.) and its induced deviation."""

    p_load: np.ndarray  # T x N
    q_load: np.ndarray  # T x N
    e_tilde: np.ndarray  # T x N

    @classmethod
    def from_loads(cls, matrices: SensitivityMatrices, p_load, q_load) -> "Forecast":
        p = np.atleast_2d(np.asarray(p_load, float))
        q = np.atleast_2d(np.asarray(q_load, float))
        if p.shape != q.shape or p.shape[1] != matrices.n:
            raise DesignError(f"forecast shapes {p.shape}/{q.shape} do not match network")
        return cls(p_load=p, q_load=q, e_tilde=p @ matrices.R.T + q @ matrices.X.T)

    @property
    def periods(self) -> int:
        return self.p_load.shape[0]


@dataclass
class GainSchedule:
    """Per-period gains with their validity grid and stability diagnostics."""

    periods: tuple[GainVector, ...]
    grid: TimeGrid
    diagnostics: tuple[dict, ...] = field(default_factory=tuple)
    frobenius_bound: float | None = None

    def __post_init__(self):
        if len(self.periods) != self.grid.steps:
            raise DesignError("schedule length does not match its time grid")

    def gains_at(self, t: int) -> GainVector:
        return self.periods[t]

    @classmethod
    def from_gains(
        cls,
        matrices: SensitivityMatrices,
        grid: TimeGrid,
        gains_list,
        frobenius_bound: float | None = None,
    ) -> "GainSchedule":
        """Attach diagnostics, projecting tiny solver overshoots of the bound.

        A schedule whose Frobenius norm exceeds the bound by more than
        numerical noise is a design bug and is rejected.
        """
        projected = []
        diags = []
        for gv in gains_list:
            fro = frobenius_gh(matrices, gv)
            if frobenius_bound is not None and fro > frobenius_bound:
                if fro > frobenius_bound + 1e-6:
                    raise DesignError(
                        f"gains exceed the stability surrogate: {fro:.9f} > {frobenius_bound}"
                    )
                scale = frobenius_bound / fro
                gv = GainVector(alpha=gv.alpha * scale, beta=gv.beta * scale)
                fro = frobenius_gh(matrices, gv)
            loop = closed_loop(matrices, gv)
            projected.append(gv)
            diags.append(
                {"frobenius": fro, "spectral_radius": loop.spectral_radius}
            )
        return cls(
            periods=tuple(projected),
            grid=grid,
            diagnostics=tuple(diags),
            frobenius_bound=frobenius_bound,
        )


# ---------------------------------------------------------------------------
# Direct closed form
# ---------------------------------------------------------------------------

def design_direct(matrices: SensitivityMatrices, epsilon: float) -> float:
    """Uniform gain saturating the spectral-radius margin: (1-eps)/rho(R+X)."""
    if not 0 < epsilon <= 1:
        raise DesignError(f"stability margin must be in (0, 1], got {epsilon}")
    rho = spectral_radius(matrices.R + matrices.X)
    return (1.0 - epsilon) / rho


def direct_gain_vector(matrices: SensitivityMatrices, epsilon: float) -> GainVector:
    g = design_direct(matrices, epsilon)
    return GainVector.uniform(matrices.n, g)


# ---------------------------------------------------------------------------
# Opt-Bench: min-max deviation under the Frobenius surrogate
# ---------------------------------------------------------------------------

def _frobenius_weights(matrices: SensitivityMatrices) -> np.ndarray:
    return np.sum(matrices.R**2 + matrices.X**2, axis=1)


def design_optbench(
    matrices: SensitivityMatrices,
    e_tilde: np.ndarray,
    epsilon: float = 0.1,
    backend: str = "CLARABEL",
) -> GainVector:
    """Gains minimizing the worst approximate steady-state deviation.

    Epigraph form: minimize s subject to -s <= E_i <= s with
    E = (I + RA + XB) E_tilde, the squared Frobenius bound and
    nonnegative gains.  Gains at buses with zero underlying deviation do
    not enter the model and are returned as zero.
    """
    n = matrices.n
    e_tilde = np.asarray(e_tilde, float)
    if np.all(e_tilde == 0.0):
        return GainVector.zeros(n)

    qp = prog.ConvexProgram(name="opt-bench")
    alpha = qp.add_variables("alpha", n, lb=0.0)
    beta = qp.add_variables("beta", n, lb=0.0)
    E = qp.add_variables("E", n)
    s = qp.add_variable("s", lb=0.0)

    for i in range(n):
        terms = {E[i]: 1.0}
        for j in range(n):
            if e_tilde[j] != 0.0:
                terms[alpha[j]] = matrices.R[i, j] * e_tilde[j]
                terms[beta[j]] = matrices.X[i, j] * e_tilde[j]
        qp.add_affine_eq(terms, e_tilde[i], name=f"deviation[{i}]")
        qp.add_affine_ineq({E[i]: 1.0, s: -1.0}, 0.0, name=f"upper[{i}]")
        qp.add_affine_ineq({E[i]: -1.0, s: -1.0}, 0.0, name=f"lower[{i}]")

    w = _frobenius_weights(matrices)
    quad = {(alpha[i], alpha[i]): w[i] for i in range(n)}
    quad.update({(beta[i], beta[i]): w[i] for i in range(n)})
    qp.add_quad_ineq(quad, None, (1.0 - epsilon) ** 2, name="stability")
    qp.set_quad_objective({}, {s: 1.0})

    sol = prog.solve(qp, backend=backend)
    if sol.status != "optimal":
        raise DesignError(f"opt-bench solve failed: {sol.status}")
    a = np.array([sol.value(r) for r in alpha])
    b = np.array([sol.value(r) for r in beta])
    a[e_tilde == 0.0] = 0.0
    b[e_tilde == 0.0] = 0.0
    return _project_to_frobenius(matrices, GainVector(alpha=a, beta=b), 1.0 - epsilon)


def _project_to_frobenius(
    matrices: SensitivityMatrices, gains: GainVector, bound: float
) -> GainVector:
    fro = frobenius_gh(matrices, gains)
    if fro <= bound or fro == 0.0:
        return gains
    scale = bound / fro
    return GainVector(alpha=gains.alpha * scale, beta=gains.beta * scale)


# ---------------------------------------------------------------------------
# OPF-PC: multi-period loss-minimizing gain program
# ---------------------------------------------------------------------------

@dataclass
class OpfPcProgram:
    """Built program plus the variable references needed to read it back."""

    qp: prog.ConvexProgram
    grid: TimeGrid
    forecast: "Forecast"
    anchors: np.ndarray  # T x N deviation vectors in the control coupling
    alpha: list  # [t][m] VariableRef
    beta: list
    u: list
    v: list
    P: list
    Q: list
    E: list | None
    matrices: SensitivityMatrices
    epsilon: float


def build_opfpc(
    feeder: Feeder,
    matrices: SensitivityMatrices,
    forecast: Forecast,
    batteries: list[BatterySpec],
    grid: TimeGrid,
    config: DesignConfig,
    soc_kwh: dict[int, float] | None = None,
    anchor_deviations: np.ndarray | None = None,
) -> OpfPcProgram:
    """Assemble the multi-period gain-design program.

    Per period: lossless flow balance, the linearized control coupling
    u = -alpha * anchor (anchor = forecast deviation, or a supplied
    previous-steady-state deviation), the squared Frobenius stability
    bound, per-bus inverter octagons and the cumulative energy window of
    every battery.  soc_kwh overrides each battery's initial charge with a
    measured value.  The objective is total resistive loss over the horizon.
    """
    n = matrices.n
    T = grid.steps
    if forecast.periods != T:
        raise DesignError(f"forecast has {forecast.periods} periods, grid has {T}")

    by_bus = {b.bus: b for b in batteries}
    if len(by_bus) != len(batteries):
        raise DesignError("multiple batteries on one bus")
    for b in batteries:
        if not 1 <= b.bus <= n:
            raise DesignError(f"battery bus {b.bus} not a downstream bus")
    soc_kwh = soc_kwh or {}
    for bus, soc in soc_kwh.items():
        spec = by_bus.get(bus)
        if spec is not None and not (spec.c_min_kwh <= soc <= spec.c_max_kwh):
            raise DesignError(
                f"bus {bus}: measured charge {soc} kWh outside "
                f"[{spec.c_min_kwh}, {spec.c_max_kwh}]"
            )

    if anchor_deviations is None or config.linearization == "taylor-at-zero":
        anchors = forecast.e_tilde
    else:
        anchors = np.asarray(anchor_deviations, float)
        if anchors.shape != (T, n):
            raise DesignError("anchor deviations must be T x N")

    base_va = feeder.power_base_va
    s_rated_pu = np.zeros(n)
    for b in batteries:
        s_rated_pu[b.bus - 1] = b.s_rated_kva * 1e3 / base_va

    from .network import build_incidence

    D = build_incidence(feeder).D
    r_seg = np.array([s.r_pu for s in feeder.segments])
    deltas = grid.as_array()

    qp = prog.ConvexProgram(name="opf-pc")
    alpha = [qp.add_variables(f"alpha(t={t})", n, lb=0.0) for t in range(T)]
    beta = [qp.add_variables(f"beta(t={t})", n, lb=0.0) for t in range(T)]
    u = [qp.add_variables(f"u(t={t})", n) for t in range(T)]
    v = [qp.add_variables(f"v(t={t})", n) for t in range(T)]
    P = [qp.add_variables(f"P(t={t})", n) for t in range(T)]
    Q = [qp.add_variables(f"Q(t={t})", n) for t in range(T)]
    E = [qp.add_variables(f"E(t={t})", n) for t in range(T)] if config.include_voltage_eq else None

    w = _frobenius_weights(matrices)
    hp = np.column_stack([np.cos(OCTAGON_ANGLES), np.sin(OCTAGON_ANGLES)])

    for t in range(T):
        # Flow balance D P + u + p_load = 0 and its reactive twin.
        for m in range(n):
            terms = {P[t][k]: D[m, k] for k in range(n) if D[m, k] != 0.0}
            terms[u[t][m]] = 1.0
            qp.add_affine_eq(terms, -forecast.p_load[t, m], name=f"pbal(t={t},m={m})")
            terms = {Q[t][k]: D[m, k] for k in range(n) if D[m, k] != 0.0}
            terms[v[t][m]] = 1.0
            qp.add_affine_eq(terms, -forecast.q_load[t, m], name=f"qbal(t={t},m={m})")

        # Linearized droop coupling u = -alpha*anchor, v = -beta*anchor.
        for m in range(n):
            qp.add_affine_eq(
                {u[t][m]: 1.0, alpha[t][m]: anchors[t, m]}, 0.0, name=f"ulaw(t={t},m={m})"
            )
            qp.add_affine_eq(
                {v[t][m]: 1.0, beta[t][m]: anchors[t, m]}, 0.0, name=f"vlaw(t={t},m={m})"
            )

        # Squared Frobenius stability surrogate for this period's gains.
        quad = {(alpha[t][m], alpha[t][m]): w[m] for m in range(n)}
        quad.update({(beta[t][m], beta[t][m]): w[m] for m in range(n)})
        qp.add_quad_ineq(quad, None, (1.0 - config.epsilon) ** 2, name=f"stability(t={t})")

        # Inverter limits: octagon around the rated disk; a zero rating
        # pins the bus to zero controllable power.
        for m in range(n):
            s_pu = s_rated_pu[m]
            if s_pu == 0.0:
                qp.add_affine_eq({u[t][m]: 1.0}, 0.0, name=f"noder_u(t={t},m={m})")
                qp.add_affine_eq({v[t][m]: 1.0}, 0.0, name=f"noder_v(t={t},m={m})")
                continue
            for k in range(8):
                qp.add_affine_ineq(
                    {u[t][m]: hp[k, 0], v[t][m]: hp[k, 1]},
                    s_pu,
                    name=f"octagon(t={t},m={m},k={k})",
                )

        if E is not None:
            for m in range(n):
                terms = {E[t][m]: 1.0}
                for j in range(n):
                    terms[u[t][j]] = -matrices.R[m, j]
                    terms[v[t][j]] = -matrices.X[m, j]
                qp.add_affine_eq(terms, forecast.e_tilde[t, m], name=f"volt(t={t},m={m})")

    # Battery energy windows: every cumulative sum of Delta*u stays inside
    # [c_min - c, c_max - c], plus the optional day-end equality.
    for b in batteries:
        m = b.bus - 1
        c_now = soc_kwh.get(b.bus, b.c_init_kwh)
        head = (b.c_max_kwh - c_now) * 1e3 / base_va
        floor = (b.c_min_kwh - c_now) * 1e3 / base_va
        for t in range(T):
            terms = {u[j][m]: deltas[j] for j in range(t + 1)}
            qp.add_affine_ineq(dict(terms), head, name=f"soc_hi(m={b.bus},t={t})")
            qp.add_affine_ineq(
                {ref: -c for ref, c in terms.items()}, -floor, name=f"soc_lo(m={b.bus},t={t})"
            )
        if config.final_charge_enforced:
            target = (b.final_target_kwh() - c_now) * 1e3 / base_va
            qp.add_affine_eq(
                {u[j][m]: deltas[j] for j in range(T)}, target, name=f"final(m={b.bus})"
            )

    objective = {}
    for t in range(T):
        for k in range(n):
            objective[(P[t][k], P[t][k])] = r_seg[k] * deltas[t]
            objective[(Q[t][k], Q[t][k])] = r_seg[k] * deltas[t]
    qp.set_quad_objective(objective)

    return OpfPcProgram(
        qp=qp,
        grid=grid,
        forecast=forecast,
        anchors=anchors,
        alpha=alpha,
        beta=beta,
        u=u,
        v=v,
        P=P,
        Q=Q,
        E=E,
        matrices=matrices,
        epsilon=config.epsilon,
    )


def extract_gains(built: OpfPcProgram, solution: prog.Solution) -> GainSchedule:
    """Read the per-period gains out of a solved program.

    Where the anchor deviation is zero the gain is indeterminate (the
    coupling row is 0 = 0) and is reported as zero.
    """
    if solution.status != "optimal":
        raise DesignError(f"cannot extract gains from a {solution.status} solution")
    gains = []
    for t in range(built.grid.steps):
        a = np.array([solution.value(r) for r in built.alpha[t]])
        b = np.array([solution.value(r) for r in built.beta[t]])
        dead = built.anchors[t] == 0.0
        a[dead] = 0.0
        b[dead] = 0.0
        a[a < 0] = 0.0  # snap solver dust below the bound
        b[b < 0] = 0.0
        gains.append(GainVector(alpha=a, beta=b))
    return GainSchedule.from_gains(
        built.matrices, built.grid, gains, frobenius_bound=1.0 - built.epsilon
    )


def design_opfpc(
    feeder: Feeder,
    matrices: SensitivityMatrices,
    forecast: Forecast,
    batteries: list[BatterySpec],
    grid: TimeGrid,
    config: DesignConfig,
    soc_kwh: dict[int, float] | None = None,
) -> tuple[GainSchedule, prog.Solution]:
    """Build, solve and extract in one call."""
    built = build_opfpc(feeder, matrices, forecast, batteries, grid, config, soc_kwh)
    solution = prog.solve(built.qp, backend=config.backend)
    if solution.status != "optimal":
        raise DesignError(f"gain design failed: {solution.status}")
    return extract_gains(built, solution), solution
