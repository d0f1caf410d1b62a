import numpy as np
import pytest

from droopopt.network import (
    Feeder,
    FeederError,
    LineSegment,
    build_incidence,
    build_rx,
    path_to_root,
    validate_radial,
)
from droopopt.powerflow import branch_flows

from conftest import random_feeder


def test_chain_rx_entries(chain3):
    m = build_rx(chain3)
    assert np.allclose(m.R, [[0.2, 0.2], [0.2, 0.6]])
    assert np.allclose(m.X, 0.0)


def test_single_segment_rx(single_bus):
    m = build_rx(single_bus)
    assert np.allclose(m.R, [[0.1]])
    assert np.allclose(m.X, [[0.1]])


def test_star_disjoint_paths_give_zero_offdiagonal(star3):
    m = build_rx(star3)
    assert m.R[0, 1] == 0.0
    assert m.R[1, 0] == 0.0
    assert np.allclose(np.diag(m.R), [0.2, 0.4])


def test_incidence_chain(chain3):
    D = build_incidence(chain3).D
    assert np.array_equal(D, [[-1.0, 1.0], [0.0, -1.0]])


def test_incidence_single_segment(single_bus):
    D = build_incidence(single_bus).D
    assert np.array_equal(D, [[-1.0]])


def test_incidence_star(star3):
    D = build_incidence(star3).D
    assert np.array_equal(D, np.diag([-1.0, -1.0]))


def test_path_to_root_examples(chain3, star3):
    path = path_to_root(chain3, 2)
    assert [(s.from_bus, s.to_bus) for s in path] == [(0, 1), (1, 2)]
    path = path_to_root(chain3, 1)
    assert [(s.from_bus, s.to_bus) for s in path] == [(0, 1)]
    path = path_to_root(star3, 2)
    assert [(s.from_bus, s.to_bus) for s in path] == [(0, 2)]


def test_path_to_root_rejects_bad_bus(chain3):
    with pytest.raises(FeederError, match="unknown bus"):
        path_to_root(chain3, 9)
    with pytest.raises(FeederError):
        path_to_root(chain3, 0)


def test_validate_minimal_chain_ok():
    f = Feeder(buses=(0, 1, 2), segments=(LineSegment(0, 1, 0.1, 0.0),
                                          LineSegment(1, 2, 0.2, 0.0)))
    validated = validate_radial(f)
    assert [(s.from_bus, s.to_bus) for s in validated.segments] == [(0, 1), (1, 2)]


def test_validate_detects_cycle():
    f = Feeder(
        buses=(0, 1, 2),
        segments=(
            LineSegment(0, 1, 0.1, 0.0),
            LineSegment(1, 2, 0.1, 0.0),
            LineSegment(2, 0, 0.1, 0.0),
        ),
    )
    with pytest.raises(FeederError, match="cycle detected"):
        validate_radial(f)


def test_validate_detects_disconnection():
    f = Feeder(
        buses=(0, 1, 2, 3),
        segments=(LineSegment(0, 1, 0.1, 0.0), LineSegment(2, 3, 0.1, 0.0)),
    )
    with pytest.raises(FeederError, match="disconnected"):
        validate_radial(f)


def test_validate_detects_duplicate_segment():
    f = Feeder(
        buses=(0, 1, 2),
        segments=(
            LineSegment(0, 1, 0.1, 0.0),
            LineSegment(1, 0, 0.2, 0.0),
            LineSegment(1, 2, 0.1, 0.0),
        ),
    )
    with pytest.raises(FeederError, match="duplicate segment|cycle"):
        validate_radial(f)


def test_zero_impedance_segment_rejected():
    with pytest.raises(FeederError, match="zero-impedance"):
        LineSegment(0, 1, 0.0, 0.0)


def test_bus_indices_must_be_dense():
    f = Feeder(buses=(0, 2), segments=(LineSegment(0, 2, 0.1, 0.0),))
    with pytest.raises(FeederError, match="0..N"):
        validate_radial(f)


def test_orientation_normalized_toward_root():
    # Segments listed child-first still orient parent -> child.
    f = Feeder(
        buses=(0, 1, 2),
        segments=(LineSegment(2, 1, 0.2, 0.0), LineSegment(1, 0, 0.1, 0.0)),
    )
    validated = validate_radial(f)
    assert [(s.from_bus, s.to_bus) for s in validated.segments] == [(0, 1), (1, 2)]
    assert validated.segments[0].r_pu == 0.1


def test_segment_order_independent_of_input_order():
    a = Feeder(
        buses=(0, 1, 2, 3),
        segments=(
            LineSegment(0, 1, 0.1, 0.0),
            LineSegment(0, 2, 0.2, 0.0),
            LineSegment(2, 3, 0.3, 0.0),
        ),
    )
    b = Feeder(buses=(0, 1, 2, 3), segments=tuple(reversed(a.segments)))
    order_a = [(s.from_bus, s.to_bus) for s in validate_radial(a).segments]
    order_b = [(s.from_bus, s.to_bus) for s in validate_radial(b).segments]
    assert order_a == order_b


def test_rx_symmetric_positive_definite_on_random_trees():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 21))
        f = random_feeder(rng, n)
        m = build_rx(f)
        assert np.allclose(m.R, m.R.T)
        assert np.allclose(m.X, m.X.T)
        np.linalg.cholesky(m.R)  # raises if not positive definite
        np.linalg.cholesky(m.X)
        assert np.all(m.R >= 0) and np.all(m.X >= 0)


def test_diagonal_dominates_rows():
    rng = np.random.default_rng(12)
    for _ in range(50):
        f = random_feeder(rng, int(rng.integers(2, 15)))
        R = build_rx(f).R
        assert np.all(np.diag(R)[:, None] >= R - 1e-15)


def test_incidence_flow_identity_random():
    # D P + (u + p_load) = 0 exactly for flows accumulated from consumptions.
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(2, 15))
        f = random_feeder(rng, n)
        D = build_incidence(f).D
        net_p = rng.normal(size=n)
        net_q = rng.normal(size=n)
        P, Q = branch_flows(f, net_p, net_q)
        assert np.max(np.abs(D @ P + net_p)) <= 1e-12
        assert np.max(np.abs(D @ Q + net_q)) <= 1e-12
