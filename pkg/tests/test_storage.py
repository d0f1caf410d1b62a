import numpy as np
import pytest

from droopopt.storage import (
    BatterySpec,
    OctagonConstraint,
    StorageError,
    TimeGrid,
    check_feasible,
    energy_matrix,
    soc_trajectory,
)

PAPER_BATTERY = dict(bus=1, s_rated_kva=5.0, c_max_kwh=10.0, c_min_kwh=0.0, c_init_kwh=3.0)


def test_energy_matrix_single_step():
    L = energy_matrix(TimeGrid(deltas=(1.0,))).L
    assert np.array_equal(L, [[1.0]])


def test_energy_matrix_two_steps():
    L = energy_matrix(TimeGrid(deltas=(1 / 12, 1 / 12))).L
    assert np.allclose(L, [[1 / 12, 0.0], [1 / 12, 1 / 12]])


def test_default_horizon_last_row_sums_to_24h():
    deltas = [5 / 60] * 6 + [30 / 60] * 7 + [2.0] * 10
    grid = TimeGrid(deltas=tuple(deltas))
    L = energy_matrix(grid).L
    assert L.shape == (23, 23)
    assert abs(L[22].sum() - 24.0) < 1e-12


def test_time_grid_validation():
    with pytest.raises(StorageError):
        TimeGrid(deltas=())
    with pytest.raises(StorageError):
        TimeGrid(deltas=(1.0, -0.5))


def test_soc_trajectory_example():
    spec = BatterySpec(**PAPER_BATTERY)
    soc = soc_trajectory(spec, [6.0, -6.0], TimeGrid(deltas=(5 / 60, 5 / 60)))
    assert np.allclose(soc, [3.5, 3.0])


def test_soc_constant_without_power():
    spec = BatterySpec(**PAPER_BATTERY)
    soc = soc_trajectory(spec, [0.0, 0.0, 0.0], TimeGrid(deltas=(1.0, 1.0, 1.0)))
    assert np.all(soc == 3.0)


def test_soc_neutral_day_telescopes_back():
    rng = np.random.default_rng(41)
    spec = BatterySpec(**PAPER_BATTERY)
    for _ in range(50):
        T = int(rng.integers(2, 24))
        deltas = rng.uniform(0.05, 2.0, T)
        u = rng.normal(scale=2.0, size=T)
        u[-1] = -np.dot(deltas[:-1], u[:-1]) / deltas[-1]  # force neutrality
        soc = soc_trajectory(spec, u, TimeGrid(deltas=tuple(deltas)))
        assert abs(soc[-1] - spec.c_init_kwh) < 1e-9


def test_soc_is_linear_in_power():
    spec = BatterySpec(**PAPER_BATTERY)
    grid = TimeGrid(deltas=(0.5, 0.25, 1.0))
    rng = np.random.default_rng(42)
    a = rng.normal(size=3)
    b = rng.normal(size=3)
    sa = soc_trajectory(spec, a, grid) - spec.c_init_kwh
    sb = soc_trajectory(spec, b, grid) - spec.c_init_kwh
    sab = soc_trajectory(spec, a + b, grid) - spec.c_init_kwh
    assert np.allclose(sab, sa + sb)


def test_soc_bounds_equivalent_to_energy_inequalities():
    spec = BatterySpec(**PAPER_BATTERY)
    grid = TimeGrid(deltas=(0.5, 0.5, 1.0, 2.0))
    L = energy_matrix(grid).L
    rng = np.random.default_rng(43)
    for _ in range(200):
        u = rng.normal(scale=3.0, size=4)
        soc = soc_trajectory(spec, u, grid)
        in_window = np.all((soc >= spec.c_min_kwh) & (soc <= spec.c_max_kwh))
        head = np.all(L @ u <= spec.c_max_kwh - spec.c_init_kwh)
        floor = np.all(-(L @ u) <= spec.c_init_kwh - spec.c_min_kwh)
        assert in_window == (head and floor)


def test_battery_spec_validation():
    with pytest.raises(StorageError):
        BatterySpec(bus=1, s_rated_kva=-1.0, c_max_kwh=10.0)
    with pytest.raises(StorageError):
        BatterySpec(bus=1, s_rated_kva=5.0, c_max_kwh=10.0, c_init_kwh=11.0)
    with pytest.raises(StorageError):
        BatterySpec(bus=1, s_rated_kva=5.0, c_max_kwh=10.0, c_final_kwh=12.0)
    # zero rating models "no battery here"
    BatterySpec(bus=1, s_rated_kva=0.0, c_max_kwh=0.0)


def test_final_target_defaults_to_initial():
    spec = BatterySpec(**PAPER_BATTERY)
    assert spec.final_target_kwh() == 3.0
    spec = BatterySpec(**{**PAPER_BATTERY, "c_final_kwh": 5.0})
    assert spec.final_target_kwh() == 5.0


def test_octagon_vertex_radius():
    oct8 = OctagonConstraint(s_rated=5.0)
    assert abs(oct8.vertex_radius - 5.0 / np.cos(np.pi / 8)) < 1e-15
    assert abs(oct8.vertex_radius - 5.41196) < 1e-5


def test_check_feasible_boundary_point():
    spec = BatterySpec(**PAPER_BATTERY)
    rep = check_feasible(spec, 5.0, 0.0)
    assert rep.circle_ok and rep.octagon_ok
    assert abs(rep.circle_margin) < 1e-12 and abs(rep.octagon_margin) < 1e-12


def test_check_feasible_diagonal_point():
    # (3.5355, 3.5355) has norm 4.99995 < 5: the 45-degree half-plane is a
    # tangency direction, so circle and octagon agree there and both pass
    # with the same hair-thin margin.
    spec = BatterySpec(**PAPER_BATTERY)
    rep = check_feasible(spec, 3.5355, 3.5355)
    assert rep.circle_ok and rep.octagon_ok
    assert 0 < rep.circle_margin < 1e-4
    assert abs(rep.circle_margin - rep.octagon_margin) < 1e-9
    # Nudged past the rating, both tests reject it together.
    rep = check_feasible(spec, 3.5356, 3.5356)
    assert not rep.circle_ok and not rep.octagon_ok
    assert rep.consistent


def test_check_feasible_vertex_gap_point():
    # Between the disk and the polygon vertex (22.5 deg) the octagon admits
    # what the circle rejects: the surrogate's over-approximation.
    spec = BatterySpec(**PAPER_BATTERY)
    r = 5.2
    rep = check_feasible(spec, r * np.cos(np.pi / 8), r * np.sin(np.pi / 8))
    assert not rep.circle_ok
    assert rep.octagon_ok
    assert not rep.consistent


def test_check_feasible_far_point_infeasible_in_both():
    spec = BatterySpec(**PAPER_BATTERY)
    rep = check_feasible(spec, 5.3, 0.0)
    assert not rep.circle_ok and not rep.octagon_ok


def test_octagon_contains_circle_and_no_more():
    rng = np.random.default_rng(44)
    s = 5.0
    oct8 = OctagonConstraint(s_rated=s)
    angles = rng.uniform(0, 2 * np.pi, 10_000)
    radii = s * np.sqrt(rng.uniform(0, 1, 10_000))
    inside = np.all(
        np.cos(np.arange(8) * np.pi / 4)[:, None] * (radii * np.cos(angles))[None, :]
        + np.sin(np.arange(8) * np.pi / 4)[:, None] * (radii * np.sin(angles))[None, :]
        <= s + 1e-12,
        axis=0,
    )
    assert inside.all()
    # nothing beyond the vertex radius passes
    radii = oct8.vertex_radius * rng.uniform(1.0 + 1e-9, 2.0, 10_000)
    outside_pts = np.all(
        np.cos(np.arange(8) * np.pi / 4)[:, None] * (radii * np.cos(angles))[None, :]
        + np.sin(np.arange(8) * np.pi / 4)[:, None] * (radii * np.sin(angles))[None, :]
        <= s,
        axis=0,
    )
    assert not outside_pts.any()
