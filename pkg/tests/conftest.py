"""Shared builders: hand-made micro problems plus seeded generated instances."""

from __future__ import annotations

import numpy as np
import pytest

from agh.env import SubProblem, VehicleStart
from agh.instgen import GenConfig, generate
from agh.model import Fleet, Flight, Instance, OperationSpec


def line_dist(n: int) -> np.ndarray:
    """Depot at 0, flights at x = 1..n on a line: dist[i, j] = |i - j|."""
    xs = np.arange(n + 1, dtype=float)
    return np.abs(xs[:, None] - xs[None, :])


def make_sub(
    n: int = 3,
    capacity: int = 10,
    demand: tuple[int, ...] | None = None,
    window_start: tuple[float, ...] | None = None,
    window_end: tuple[float, ...] | None = None,
    duration: tuple[float, ...] | None = None,
    speed: float = 1.0,
    dist: np.ndarray | None = None,
    initial_vehicles: tuple[VehicleStart, ...] = (),
) -> SubProblem:
    """A small single-fleet sub-problem with line geometry and wide windows."""
    raw = demand if demand is not None else tuple([1] * n)
    return SubProblem(
        op_id=1,
        level=0,
        flight_ids=tuple(range(1, n + 1)),
        demand=tuple(d / capacity for d in raw),
        duration=duration if duration is not None else tuple([1.0] * n),
        window_start=window_start if window_start is not None else tuple([0.0] * n),
        window_end=window_end if window_end is not None else tuple([1000.0] * n),
        dist=dist if dist is not None else line_dist(n),
        speed=speed,
        capacity=capacity,
        horizon=1000.0,
        initial_vehicles=initial_vehicles,
    )


def two_level_ops() -> tuple[OperationSpec, ...]:
    """Two chained operations; worst chain fits the shortest turnaround."""
    return (
        OperationSpec(op_id=1, name="alpha", level=0, duration_by_flight_type=(8.0, 9.0, 9.0)),
        OperationSpec(op_id=2, name="beta", level=1, duration_by_flight_type=(6.0, 7.0, 7.0)),
    )


def three_level_ops() -> tuple[OperationSpec, ...]:
    """Four operations over three levels (two parallel ones in the middle)."""
    return (
        OperationSpec(op_id=1, name="alpha", level=0, duration_by_flight_type=(7.0, 8.0, 8.0)),
        OperationSpec(op_id=2, name="beta", level=1, duration_by_flight_type=(5.0, 6.0, 6.0)),
        OperationSpec(op_id=3, name="gamma", level=1, duration_by_flight_type=(4.0, 4.0, 5.0)),
        OperationSpec(op_id=4, name="delta", level=2, duration_by_flight_type=(4.0, 5.0, 5.0)),
    )


def gen_instance(
    n: int,
    seed: int,
    ops: tuple[OperationSpec, ...] | None = None,
    **kwargs,
) -> Instance:
    cfg = GenConfig(
        n_flights=n,
        seed=seed,
        operations=ops if ops is not None else two_level_ops(),
        **kwargs,
    )
    return generate(cfg)


def full_instance(n: int, seed: int) -> Instance:
    """Default operation table (ten fleets over four levels)."""
    return generate(GenConfig(n_flights=n, seed=seed))


def hand_instance() -> Instance:
    """Two flights, two chained ops, square geometry; everything by hand."""
    ops = (
        OperationSpec(op_id=1, name="alpha", level=0, duration_by_flight_type=(10.0,)),
        OperationSpec(op_id=2, name="beta", level=1, duration_by_flight_type=(5.0,)),
    )
    fleets = (
        Fleet(op_id=1, capacity=4, speed=1.0, max_vehicles=2),
        Fleet(op_id=2, capacity=4, speed=1.0, max_vehicles=2),
    )
    flights = (
        Flight(flight_id=1, gate_id=1, flight_type=0, arrival=0.0, departure=100.0,
               demand_by_op=(2, 1)),
        Flight(flight_id=2, gate_id=2, flight_type=0, arrival=5.0, departure=120.0,
               demand_by_op=(1, 2)),
    )
    gates = ((0.0, 0.0), (3.0, 0.0), (0.0, 4.0))
    return Instance(flights=flights, operations=ops, fleets=fleets, gate_positions=gates)


@pytest.fixture
def sub3() -> SubProblem:
    return make_sub(3)


@pytest.fixture
def hand_inst() -> Instance:
    return hand_instance()
