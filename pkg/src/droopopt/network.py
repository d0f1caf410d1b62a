"""Radial feeder model and the graph-derived matrices built from it.

A feeder is a rooted tree: bus 0 is the substation (slack) bus, every other
bus hangs below it through exactly one impedance segment.  All downstream
quantities are per-unit on the feeder's (power_base_va, voltage_base_v).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

SLACK_BUS = 0


class FeederError(ValueError):
    """Raised for a structurally invalid feeder (cycle, island, bad segment)."""


@dataclass(frozen=True)
class LineSegment:
    """Impedance segment between a parent bus and its child."""

    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise FeederError(f"segment ({self.from_bus},{self.to_bus}) is a self-loop")
        if self.r_pu < 0 or self.x_pu < 0:
            raise FeederError(
                f"segment ({self.from_bus},{self.to_bus}) has negative impedance"
            )
        if self.r_pu == 0 and self.x_pu == 0:
            raise FeederError(
                f"zero-impedance segment ({self.from_bus},{self.to_bus})"
            )


@dataclass(frozen=True)
class Feeder:
    """Radial distribution feeder.

    buses must be exactly {0, 1, ..., N}; segments connect them as a tree
    rooted at bus 0.  slack_voltage is the fixed magnitude at bus 0 (p.u.).
    """

    buses: tuple[int, ...]
    segments: tuple[LineSegment, ...]
    slack_voltage: float = 1.0
    power_base_va: float = 1.0
    voltage_base_v: float = 1.0

    @property
    def n(self) -> int:
        """Number of downstream (non-slack) buses."""
        return len(self.buses) - 1

    def segment_index(self) -> dict[tuple[int, int], int]:
        return {(s.from_bus, s.to_bus): k for k, s in enumerate(self.segments)}

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {b: [] for b in self.buses}
        for s in self.segments:
            out[s.from_bus].append(s.to_bus)
        return out

    def parent(self) -> dict[int, int]:
        return {s.to_bus: s.from_bus for s in self.segments}


@dataclass(frozen=True)
class SensitivityMatrices:
    """Squared-voltage sensitivity matrices of a validated feeder.

    Entry (i, j) is twice the impedance summed over the segments shared by
    the root paths of buses i+1 and j+1.  Symmetric positive definite.
    """

    R: np.ndarray
    X: np.ndarray

    @property
    def n(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class IncidenceMatrix:
    """Node-arc incidence matrix over the downstream buses.

    Rows follow buses 1..N, columns follow the feeder's segment order.
    Column for segment (m, n) carries +1 at row m (absent when m is the
    slack) and -1 at row n.
    """

    D: np.ndarray


def validate_radial(feeder: Feeder) -> Feeder:
    """Check the tree structure and orient every segment away from bus 0.

    Returns a feeder whose segments are in breadth-first order from the
    slack bus with from_bus the parent of to_bus.  Raises FeederError for
    cycles, disconnected buses, duplicate or dangling segments.
    """
    buses = sorted(feeder.buses)
    if SLACK_BUS not in buses:
        raise FeederError("slack bus 0 missing")
    if len(set(buses)) != len(buses):
        raise FeederError("duplicate bus index")
    if buses != list(range(len(buses))):
        raise FeederError("bus indices must be exactly 0..N")
    n = len(buses) - 1
    if len(feeder.segments) != n:
        # |E| != N cannot be a spanning tree: too many edges means a cycle,
        # too few means an island.
        kind = "cycle detected" if len(feeder.segments) > n else "disconnected bus"
        raise FeederError(
            f"{kind}: {len(feeder.segments)} segments for {n} downstream buses"
        )

    adjacency: dict[int, list[tuple[int, LineSegment]]] = {b: [] for b in buses}
    seen_pairs = set()
    for seg in feeder.segments:
        if seg.from_bus not in adjacency or seg.to_bus not in adjacency:
            raise FeederError(
                f"segment ({seg.from_bus},{seg.to_bus}) references unknown bus"
            )
        pair = frozenset((seg.from_bus, seg.to_bus))
        if pair in seen_pairs:
            raise FeederError(
                f"duplicate segment between buses {seg.from_bus} and {seg.to_bus}"
            )
        seen_pairs.add(pair)
        adjacency[seg.from_bus].append((seg.to_bus, seg))
        adjacency[seg.to_bus].append((seg.from_bus, seg))

    # BFS from the slack; with |E| = N, reaching every bus exactly once
    # certifies the tree property and fixes the canonical segment order.
    # Neighbor lists are sorted so the order is independent of input order.
    oriented: list[LineSegment] = []
    visited = {SLACK_BUS}
    queue = deque([SLACK_BUS])
    while queue:
        parent = queue.popleft()
        for child, seg in sorted(adjacency[parent], key=lambda cs: cs[0]):
            if child in visited:
                continue
            if seg.from_bus != parent:
                seg = replace(seg, from_bus=parent, to_bus=seg.from_bus)
            oriented.append(seg)
            visited.add(child)
            queue.append(child)
    if len(visited) != len(buses):
        missing = sorted(set(buses) - visited)
        raise FeederError(f"disconnected bus(es): {missing}")

    return replace(feeder, buses=tuple(buses), segments=tuple(oriented))


def path_to_root(feeder: Feeder, bus: int) -> list[LineSegment]:
    """Ordered segments of the unique path from bus 0 down to `bus`."""
    if bus == SLACK_BUS:
        raise FeederError("slack bus has no path to itself")
    parent_of = feeder.parent()
    index = feeder.segment_index()
    if bus not in parent_of:
        raise FeederError(f"unknown bus {bus}")
    path: list[LineSegment] = []
    node = bus
    while node != SLACK_BUS:
        p = parent_of[node]
        path.append(feeder.segments[index[(p, node)]])
        node = p
    path.reverse()
    return path


def _paths_as_sets(feeder: Feeder) -> list[set[int]]:
    """Per downstream bus, the set of segment column indices on its root path."""
    index = feeder.segment_index()
    parent_of = feeder.parent()
    paths: list[set[int]] = []
    for bus in range(1, feeder.n + 1):
        cols: set[int] = set()
        node = bus
        while node != SLACK_BUS:
            p = parent_of[node]
            cols.add(index[(p, node)])
            node = p
        paths.append(cols)
    return paths


def build_rx(feeder: Feeder) -> SensitivityMatrices:
    """Build the N x N resistance and reactance sensitivity matrices.

    Entry (i, j) = sum of 2*r (resp. 2*x) over segments shared by the root
    paths of buses i+1 and j+1.
    """
    n = feeder.n
    paths = _paths_as_sets(feeder)
    r = np.array([s.r_pu for s in feeder.segments])
    x = np.array([s.x_pu for s in feeder.segments])
    R = np.zeros((n, n))
    X = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            shared = list(paths[i] & paths[j])
            if shared:
                R[i, j] = R[j, i] = 2.0 * r[shared].sum()
                X[i, j] = X[j, i] = 2.0 * x[shared].sum()
    return SensitivityMatrices(R=R, X=X)


def build_incidence(feeder: Feeder) -> IncidenceMatrix:
    """Node-arc incidence matrix D with D@P + u + p_load = 0 for branch flows P."""
    n = feeder.n
    D = np.zeros((n, len(feeder.segments)))
    for k, seg in enumerate(feeder.segments):
        if seg.from_bus != SLACK_BUS:
            D[seg.from_bus - 1, k] = 1.0
        D[seg.to_bus - 1, k] = -1.0
    return IncidenceMatrix(D=D)
