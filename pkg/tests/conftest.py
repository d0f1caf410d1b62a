"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the code paths they check: spectral
radii come from explicit characteristic polynomials, AC power flow from a
Newton solve of the nodal equations, and optimization answers from a
zooming dense grid search.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy import optimize

from droopopt.network import Feeder, LineSegment, build_rx, validate_radial


@pytest.fixture
def single_bus():
    """One segment, r = x = 0.05: R = X = [0.1]."""
    return validate_radial(
        Feeder(buses=(0, 1), segments=(LineSegment(0, 1, 0.05, 0.05),))
    )


@pytest.fixture
def chain3():
    """Chain 0-1-2 with r01 = 0.1, r12 = 0.2, x = 0."""
    return validate_radial(
        Feeder(
            buses=(0, 1, 2),
            segments=(LineSegment(0, 1, 0.1, 0.0), LineSegment(1, 2, 0.2, 0.0)),
        )
    )


@pytest.fixture
def star3():
    """Two buses hanging directly off the slack: disjoint root paths."""
    return validate_radial(
        Feeder(
            buses=(0, 1, 2),
            segments=(LineSegment(0, 1, 0.1, 0.05), LineSegment(0, 2, 0.2, 0.1)),
        )
    )


def random_feeder(rng, n: int) -> Feeder:
    """Random tree on buses 0..n with low-voltage-like impedances."""
    segments = []
    for m in range(1, n + 1):
        parent = int(rng.integers(0, m))
        r = float(rng.uniform(0.002, 0.015))
        x = float(rng.uniform(0.5, 1.2)) * r
        segments.append(LineSegment(parent, m, r, x))
    return validate_radial(Feeder(buses=tuple(range(n + 1)), segments=tuple(segments)))


def random_loading(rng, matrices, n: int, e_cap: float = 0.12):
    """Household-scale net loads, scaled down when the linear deviation
    would exceed e_cap (keeps AC voltages well inside [0.90, 1.10])."""
    p = rng.uniform(-0.6, 0.6, n)
    q = p * np.tan(np.arccos(0.95)) + rng.uniform(-0.05, 0.05, n)
    e = matrices.R @ p + matrices.X @ q
    worst = float(np.max(np.abs(e)))
    if worst > e_cap:
        scale = e_cap / worst
        p = p * scale
        q = q * scale
    return p, q


# ---------------------------------------------------------------------------
# Oracle: spectral radius from the explicit characteristic polynomial (n <= 3)
# ---------------------------------------------------------------------------

def charpoly_spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 1:
        return abs(M[0, 0])
    if n == 2:
        tr = M[0, 0] + M[1, 1]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        coeffs = [1.0, -tr, det]
    elif n == 3:
        tr = np.trace(M)
        minors = (
            M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1]
            + M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
            + M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        )
        det = float(np.linalg.det(M))
        coeffs = [1.0, -float(tr), float(minors), -det]
    else:
        raise ValueError("characteristic-polynomial oracle only for n <= 3")
    return float(np.max(np.abs(np.roots(coeffs))))


# ---------------------------------------------------------------------------
# Oracle: AC power flow from the nodal complex equations (Newton on Y-bus)
# ---------------------------------------------------------------------------

def newton_ac_voltages(feeder: Feeder, s_consumption) -> np.ndarray:
    """Solve V for constant-power consumption at every downstream bus.

    Builds the bus admittance matrix and finds the root of the complex
    power mismatch with a dense Newton iteration; independent of the
    sweep-based solver under test.
    """
    n = feeder.n
    Y = np.zeros((n + 1, n + 1), dtype=complex)
    for seg in feeder.segments:
        y = 1.0 / (seg.r_pu + 1j * seg.x_pu)
        Y[seg.from_bus, seg.from_bus] += y
        Y[seg.to_bus, seg.to_bus] += y
        Y[seg.from_bus, seg.to_bus] -= y
        Y[seg.to_bus, seg.from_bus] -= y
    s = np.asarray(s_consumption, dtype=complex)
    v0 = feeder.slack_voltage

    def mismatch(z):
        V = np.empty(n + 1, dtype=complex)
        V[0] = v0
        V[1:] = z[:n] + 1j * z[n:]
        inj = V * np.conj(Y @ V)  # power flowing out of each bus into the grid
        f = inj[1:] + s  # consumption enters with + sign
        return np.concatenate([f.real, f.imag])

    z0 = np.concatenate([np.full(n, v0), np.zeros(n)])
    z, info, ier, msg = optimize.fsolve(mismatch, z0, full_output=True, xtol=1e-12)
    if ier != 1:
        raise RuntimeError(f"oracle power flow did not converge: {msg}")
    V = np.empty(n + 1, dtype=complex)
    V[0] = v0
    V[1:] = z[:n] + 1j * z[n:]
    return V


# ---------------------------------------------------------------------------
# Oracle: zooming dense grid search for convex programs with <= 3 variables
# ---------------------------------------------------------------------------

def grid_search_minimum(
    objective,
    constraints,
    box,
    rounds: int = 6,
    points: int = 33,
    slack: float = 1e-9,
):
    """Global minimum of a convex objective over box-bounded feasible points.

    `constraints` is a list of callables g(x) <= 0; `box` a list of
    (lo, hi) per variable.  Each round evaluates a dense grid and zooms
    onto the best feasible cell.  Returns (x_best, f_best).
    """
    original = [tuple(b) for b in box]
    box = [list(b) for b in box]
    dim = len(box)
    best_x = None
    best_f = np.inf
    for _ in range(rounds):
        axes = [np.linspace(lo, hi, points) for lo, hi in box]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        feasible = np.ones(len(pts), dtype=bool)
        for g in constraints:
            feasible &= np.array([g(x) <= slack for x in pts])
        if not feasible.any():
            raise RuntimeError("grid oracle found no feasible point")
        vals = np.array([objective(x) for x in pts[feasible]])
        idx = int(np.argmin(vals))
        x_star = pts[feasible][idx]
        f_star = float(vals[idx])
        if f_star < best_f:
            best_f = f_star
            best_x = x_star
        # Zoom onto three cells around the incumbent, never leaving the
        # caller's box (its edges may be active constraints).
        for d in range(dim):
            h = (box[d][1] - box[d][0]) / (points - 1)
            lo = max(x_star[d] - 3 * h, original[d][0])
            hi = min(x_star[d] + 3 * h, original[d][1])
            box[d] = [lo, hi]
    return best_x, best_f
