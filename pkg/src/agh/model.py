"""Core domain types: operations, flights, fleets, instances, routes, solutions.

Conventions used everywhere downstream:

* Node 0 is the depot; flights are nodes 1..n (ids equal indices).
* One service operation is performed by exactly one homogeneous fleet, so
  operations and fleets share ``op_id`` (1..F, contiguous).
* Precedence is by level: every operation at level p must complete before any
  operation at level p+1 starts on the same flight. Levels are contiguous
  from 0 and every level is non-empty.
* Distances are Euclidean over gate coordinates and shared by all fleets;
  travel time divides distance by the fleet's speed.
* Times are minutes as floats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AghError, FormatError

SCHEMA_VERSION = 1
DEPOT = 0


@dataclass(frozen=True)
class OperationSpec:
    """One ground-service operation type (== one fleet's job)."""

    op_id: int
    name: str
    level: int
    duration_by_flight_type: tuple[float, ...]

    def duration(self, flight_type: int) -> float:
        return self.duration_by_flight_type[flight_type]


@dataclass(frozen=True)
class Fleet:
    """The homogeneous vehicle fleet serving one operation."""

    op_id: int
    capacity: int
    speed: float
    max_vehicles: int


@dataclass(frozen=True)
class Flight:
    """One aircraft turnaround: gate, type, time window, per-operation demand."""

    flight_id: int
    gate_id: int
    flight_type: int
    arrival: float
    departure: float
    demand_by_op: tuple[int, ...]  # index op_id - 1

    def demand(self, op_id: int) -> int:
        return self.demand_by_op[op_id - 1]


@dataclass(frozen=True)
class Instance:
    """A full ground-handling problem over one airport layout."""

    flights: tuple[Flight, ...]
    operations: tuple[OperationSpec, ...]
    fleets: tuple[Fleet, ...]
    gate_positions: tuple[tuple[float, float], ...]  # index 0 = depot
    _dist: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pos = np.empty((self.n + 1, 2))
        pos[0] = self.gate_positions[0]
        for fl in self.flights:
            pos[fl.flight_id] = self.gate_positions[fl.gate_id]
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        dist.flags.writeable = False
        object.__setattr__(self, "_dist", dist)

    @property
    def n(self) -> int:
        return len(self.flights)

    @property
    def n_ops(self) -> int:
        return len(self.operations)

    @property
    def cost_matrix(self) -> np.ndarray:
        """Symmetric (n+1)x(n+1) distance table; row/col 0 is the depot."""
        return self._dist

    def cost(self, i: int, j: int) -> float:
        return float(self._dist[i, j])

    def flight(self, flight_id: int) -> Flight:
        fl = self.flights[flight_id - 1]
        if fl.flight_id != flight_id:
            raise AghError(f"flight ids not contiguous at {flight_id}")
        return fl

    def operation(self, op_id: int) -> OperationSpec:
        op = self.operations[op_id - 1]
        if op.op_id != op_id:
            raise AghError(f"operation ids not contiguous at {op_id}")
        return op

    def fleet(self, op_id: int) -> Fleet:
        fl = self.fleets[op_id - 1]
        if fl.op_id != op_id:
            raise AghError(f"fleet ids not contiguous at {op_id}")
        return fl

    def levels(self) -> list[int]:
        return sorted({op.level for op in self.operations})

    def ops_at_level(self, level: int) -> list[OperationSpec]:
        return [op for op in self.operations if op.level == level]

    @property
    def horizon(self) -> float:
        """Latest departure; the time-normalization scale for the policy."""
        if not self.flights:
            return 1.0
        return max(fl.departure for fl in self.flights)


@dataclass(frozen=True)
class Route:
    """One vehicle's tour for one operation; the depot is implicit at both ends."""

    op_id: int
    visits: tuple[int, ...]
    start_times: tuple[float, ...]


@dataclass(frozen=True)
class GlobalSolution:
    """Routes for every (flight, operation) pair plus the total distance."""

    routes: tuple[Route, ...]
    objective: float


@dataclass
class ValidationReport:
    errors: list[str]

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_instance(inst: Instance) -> ValidationReport:
    """Collect every structural invariant violation; empty report iff well-formed."""
    errors: list[str] = []
    n_types = 0
    for k, op in enumerate(inst.operations):
        if op.op_id != k + 1:
            errors.append(f"operation ids must be contiguous 1..F (index {k} has id {op.op_id})")
        if any(d <= 0 for d in op.duration_by_flight_type):
            errors.append(f"op {op.op_id}: all durations must be > 0")
        n_types = max(n_types, len(op.duration_by_flight_type))
    levels = sorted({op.level for op in inst.operations})
    if inst.operations and levels != list(range(len(levels))):
        errors.append(f"levels must form a contiguous range 0..P-1, got {levels}")
    if len(inst.fleets) != len(inst.operations):
        errors.append("one fleet per operation required")
    for k, fl in enumerate(inst.fleets):
        if fl.op_id != k + 1:
            errors.append(f"fleet ids must mirror operation ids (index {k} has id {fl.op_id})")
        if fl.capacity < 1:
            errors.append(f"fleet {fl.op_id}: capacity must be >= 1")
        if fl.speed <= 0:
            errors.append(f"fleet {fl.op_id}: speed must be > 0")
        if fl.max_vehicles < 1:
            errors.append(f"fleet {fl.op_id}: max_vehicles must be >= 1")
    if not inst.gate_positions:
        errors.append("gate_positions must include the depot at index 0")
    for k, fl in enumerate(inst.flights):
        if fl.flight_id != k + 1:
            errors.append(f"flight ids must be contiguous 1..n (index {k} has id {fl.flight_id})")
        if not (1 <= fl.gate_id < len(inst.gate_positions)):
            errors.append(f"flight {fl.flight_id}: gate_id {fl.gate_id} out of range")
        if not (0 <= fl.flight_type < n_types) and inst.operations:
            errors.append(f"flight {fl.flight_id}: flight_type {fl.flight_type} has no duration entry")
        if not fl.arrival < fl.departure:
            errors.append(f"flight {fl.flight_id}: arrival/departure order violated")
        if fl.arrival < 0:
            errors.append(f"flight {fl.flight_id}: arrival must be non-negative")
        if len(fl.demand_by_op) != len(inst.operations):
            errors.append(f"flight {fl.flight_id}: demand entries != number of operations")
            continue
        for op in inst.operations:
            d = fl.demand(op.op_id)
            if d < 1:
                errors.append(f"flight {fl.flight_id} op {op.op_id}: demand >= 1 violated")
            elif d > inst.fleets[op.op_id - 1].capacity:
                errors.append(f"flight {fl.flight_id} op {op.op_id}: demand {d} exceeds fleet capacity")
    return ValidationReport(errors)


def travel_time(inst: Instance, op_id: int, i: int, j: int) -> float:
    """Minutes for fleet ``op_id`` to move between nodes i and j (0 = depot)."""
    return inst.cost(i, j) / inst.fleet(op_id).speed


def global_cost(inst: Instance, sol: GlobalSolution) -> float:
    """Total traveled distance over all routes, depot legs included."""
    total = 0.0
    for route in sol.routes:
        prev = DEPOT
        for fid in route.visits:
            if not (1 <= fid <= inst.n):
                raise AghError(f"route references unknown flight {fid}")
            total += inst.cost(prev, fid)
            prev = fid
        total += inst.cost(prev, DEPOT)
    return total


# --- JSON serialization ------------------------------------------------------


def _flight_to_dict(fl: Flight) -> dict:
    return {
        "flight_id": fl.flight_id,
        "gate_id": fl.gate_id,
        "flight_type": fl.flight_type,
        "arrival": fl.arrival,
        "departure": fl.departure,
        "demand_by_op": list(fl.demand_by_op),
    }


def _flight_from_dict(d: dict) -> Flight:
    return Flight(
        flight_id=int(d["flight_id"]),
        gate_id=int(d["gate_id"]),
        flight_type=int(d["flight_type"]),
        arrival=float(d["arrival"]),
        departure=float(d["departure"]),
        demand_by_op=tuple(int(x) for x in d["demand_by_op"]),
    )


def instance_to_dict(inst: Instance) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "instance",
        "operations": [
            {
                "op_id": op.op_id,
                "name": op.name,
                "level": op.level,
                "duration_by_flight_type": list(op.duration_by_flight_type),
            }
            for op in inst.operations
        ],
        "fleets": [
            {
                "op_id": fl.op_id,
                "capacity": fl.capacity,
                "speed": fl.speed,
                "max_vehicles": fl.max_vehicles,
            }
            for fl in inst.fleets
        ],
        "flights": [_flight_to_dict(fl) for fl in inst.flights],
        "gate_positions": [list(p) for p in inst.gate_positions],
    }


def instance_from_dict(d: dict) -> Instance:
    _check_header(d, "instance")
    return Instance(
        flights=tuple(_flight_from_dict(x) for x in d["flights"]),
        operations=tuple(
            OperationSpec(
                op_id=int(x["op_id"]),
                name=str(x["name"]),
                level=int(x["level"]),
                duration_by_flight_type=tuple(float(v) for v in x["duration_by_flight_type"]),
            )
            for x in d["operations"]
        ),
        fleets=tuple(
            Fleet(
                op_id=int(x["op_id"]),
                capacity=int(x["capacity"]),
                speed=float(x["speed"]),
                max_vehicles=int(x["max_vehicles"]),
            )
            for x in d["fleets"]
        ),
        gate_positions=tuple((float(p[0]), float(p[1])) for p in d["gate_positions"]),
    )


def solution_to_dict(sol: GlobalSolution) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "solution",
        "objective": sol.objective,
        "routes": [
            {
                "op_id": r.op_id,
                "visits": list(r.visits),
                "start_times": list(r.start_times),
            }
            for r in sol.routes
        ],
    }


def solution_from_dict(d: dict) -> GlobalSolution:
    _check_header(d, "solution")
    return GlobalSolution(
        routes=tuple(
            Route(
                op_id=int(r["op_id"]),
                visits=tuple(int(v) for v in r["visits"]),
                start_times=tuple(float(t) for t in r["start_times"]),
            )
            for r in d["routes"]
        ),
        objective=float(d["objective"]),
    )


def _check_header(d: dict, kind: str) -> None:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {d.get('schema_version')!r}")
    if d.get("kind") != kind:
        raise FormatError(f"expected kind {kind!r}, got {d.get('kind')!r}")


def to_json(obj: Instance | GlobalSolution) -> str:
    """Canonical JSON text; floats round-trip bit-exactly via repr."""
    if isinstance(obj, Instance):
        d = instance_to_dict(obj)
    elif isinstance(obj, GlobalSolution):
        d = solution_to_dict(obj)
    else:
        raise FormatError(f"cannot serialize {type(obj).__name__}")
    return json.dumps(d, indent=2) + "\n"


def from_json(text: str) -> Instance | GlobalSolution:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise FormatError("top-level JSON value must be an object")
    kind = d.get("kind")
    if kind == "instance":
        return instance_from_dict(d)
    if kind == "solution":
        return solution_from_dict(d)
    raise FormatError(f"unknown document kind {kind!r}")


def isclose(a: float, b: float, tol: float = 1e-9) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
