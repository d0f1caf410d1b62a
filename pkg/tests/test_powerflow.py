import numpy as np
import pytest

from droopopt.network import build_rx
from droopopt.powerflow import (
    InjectionProfile,
    PowerFlowError,
    ac_power_flow,
    baseline_deviation,
    lindistflow_solve,
    losses,
    substation_power,
    voltage_from_deviation,
)

from conftest import newton_ac_voltages, random_feeder, random_loading


def test_zero_injections_zero_state(chain3):
    m = build_rx(chain3)
    st = lindistflow_solve(chain3, m, InjectionProfile.build(2))
    assert np.all(st.E == 0) and np.all(st.P == 0) and np.all(st.Q == 0)


def test_chain_load_solution(chain3):
    m = build_rx(chain3)
    st = lindistflow_solve(chain3, m, InjectionProfile.build(2, p_load=[0.0, 0.5]))
    assert np.allclose(st.E, [0.1, 0.3])
    assert np.allclose(st.P, [0.5, 0.5])
    assert np.allclose(st.Q, [0.0, 0.0])


def test_superposition_and_scaling(chain3):
    rng = np.random.default_rng(3)
    m = build_rx(chain3)
    a = InjectionProfile.build(2, *rng.normal(size=(4, 2)))
    b = InjectionProfile.build(2, *rng.normal(size=(4, 2)))
    sa = lindistflow_solve(chain3, m, a)
    sb = lindistflow_solve(chain3, m, b)
    sab = lindistflow_solve(chain3, m, a + b)
    assert np.allclose(sab.E, sa.E + sb.E, atol=1e-14)
    assert np.allclose(sab.P, sa.P + sb.P, atol=1e-14)


def test_baseline_deviation_matches_product(chain3):
    m = build_rx(chain3)
    e = baseline_deviation(m, [0.0, 0.5], [0.0, 0.0])
    assert np.allclose(e, [0.1, 0.3])
    assert np.allclose(baseline_deviation(m, [0, 0], [0, 0]), 0.0)


def test_baseline_deviation_reactive_only(single_bus):
    m = build_rx(single_bus)
    e = baseline_deviation(m, [0.0], [0.5])
    assert np.allclose(e, m.X @ [0.5])


def test_voltage_from_deviation_values():
    assert voltage_from_deviation(np.array([0.0]))[0] == 1.0
    assert abs(voltage_from_deviation(np.array([0.3]))[0] - 0.8366600265340756) < 1e-15
    assert abs(voltage_from_deviation(np.array([-0.21]))[0] - 1.1) < 1e-15


def test_voltage_from_deviation_rejects_collapse():
    with pytest.raises(PowerFlowError, match="collapse"):
        voltage_from_deviation(np.array([1.0]))


def test_ac_flat_profile_zero_load(chain3):
    st = ac_power_flow(chain3, InjectionProfile.build(2))
    assert st.converged and st.iterations == 1
    assert np.allclose(st.V, 1.0)
    assert st.mismatch == 0.0


def test_ac_against_newton_oracle(chain3):
    inj = InjectionProfile.build(2, p_load=[0.0, 0.5])
    st = ac_power_flow(chain3, inj)
    assert st.converged
    V_oracle = newton_ac_voltages(chain3, np.array([0.0 + 0j, 0.5 + 0j]))
    assert np.max(np.abs(st.V - V_oracle)) < 1e-6


def test_ac_linear_agreement_mild_load(chain3):
    # At household-scale loading the two models agree to well under 1%.
    m = build_rx(chain3)
    inj = InjectionProfile.build(2, p_load=[0.0, 0.1])
    ac = ac_power_flow(chain3, inj)
    lin = voltage_from_deviation(lindistflow_solve(chain3, m, inj).E)
    assert np.max(np.abs(lin - np.abs(ac.V[1:]))) < 0.01


def test_ac_heavy_load_flagged():
    # Forcing voltage far below 0.5 p.u. must not silently "converge".
    import droopopt.network as net

    f = net.validate_radial(
        net.Feeder(buses=(0, 1), segments=(net.LineSegment(0, 1, 0.3, 0.1),))
    )
    st = ac_power_flow(f, InjectionProfile.build(1, p_load=[3.0]))
    assert not st.converged


def test_losses_zero_flow(chain3):
    m = build_rx(chain3)
    st = lindistflow_solve(chain3, m, InjectionProfile.build(2))
    total, per = losses(st, chain3)
    assert total == 0.0 and np.all(per == 0.0)


def test_linear_loss_chain_value(chain3):
    m = build_rx(chain3)
    st = lindistflow_solve(chain3, m, InjectionProfile.build(2, p_load=[0.0, 0.5]))
    total, per = losses(st, chain3)
    assert abs(total - 0.075) < 1e-15
    assert np.allclose(per, [0.1 * 0.25, 0.2 * 0.25])


def test_ac_and_linear_losses_close_at_light_load():
    rng = np.random.default_rng(21)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        f = random_feeder(rng, n)
        m = build_rx(f)
        p, q = random_loading(rng, m, n, e_cap=0.05)
        inj = InjectionProfile.build(n, p_load=p, q_load=q)
        ac = ac_power_flow(f, inj)
        assert ac.converged
        assert np.all(np.abs(np.abs(ac.V) - 1.0) <= 0.05)
        loss_ac, _ = losses(ac, f)
        loss_lin, _ = losses(lindistflow_solve(f, m, inj), f)
        if loss_ac > 1e-9:
            assert abs(loss_lin - loss_ac) / loss_ac < 0.05


def test_slack_flow_balances_total_consumption():
    rng = np.random.default_rng(22)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        f = random_feeder(rng, n)
        m = build_rx(f)
        u = rng.normal(scale=0.05, size=n)
        p = rng.normal(scale=0.05, size=n)
        st = lindistflow_solve(f, m, InjectionProfile.build(n, u=u, p_load=p))
        root = sum(st.P[k] for k, s in enumerate(f.segments) if s.from_bus == 0)
        assert abs(root - np.sum(u + p)) < 1e-12


def test_ac_mismatch_invariant_on_random_feeders():
    rng = np.random.default_rng(23)
    for _ in range(30):
        n = int(rng.integers(2, 15))
        f = random_feeder(rng, n)
        m = build_rx(f)
        p, q = random_loading(rng, m, n)
        st = ac_power_flow(f, InjectionProfile.build(n, p_load=p, q_load=q))
        assert st.converged
        assert st.mismatch <= 1e-8


def test_substation_power_is_sum_of_root_segments(star3):
    inj = InjectionProfile.build(2, p_load=[0.2, 0.3], q_load=[0.05, 0.05])
    st = ac_power_flow(star3, inj)
    s = substation_power(st, star3)
    # Consumption plus losses, so slightly above the raw total.
    assert s.real > 0.5
    assert abs(s - (st.S_branch[0] + st.S_branch[1])) < 1e-15
