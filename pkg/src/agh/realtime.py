"""Rolling-horizon simulation: flights reveal over time, plans re-optimize.

A stream starts from a set of flights known upfront and reveals the rest one
by one at their arrival times. At every reveal the clock jumps to that time,
every service already started is frozen (vehicle, position and start time
become immutable), and the remaining work — unfrozen services plus the new
flight — is re-planned. Vehicles caught mid-route resume from their last
frozen stop with their residual capacity and release time; vehicles whose
whole route froze have retired home; vehicles that never left the depot
dissolve back into the pool.

Residual sub-problems reuse the single-fleet environment unchanged by
shifting all times so the current clock becomes zero: a fresh depot vehicle
then departs "now" exactly as the environment assumes. Window starts follow
the usual precedence propagation, merging frozen completion times with the
ones produced earlier in the same re-plan.

A revealed flight that cannot be served even with dedicated fresh vehicles
(its windows are too tight from the current clock) is rejected and logged;
the simulation continues without it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import framework
from .env import SubProblem, VehicleStart, replay, routes_from_actions
from .errors import FormatError, InfeasibleError
from .heuristics import nearest_neighbor
from .model import (
    SCHEMA_VERSION,
    Flight,
    GlobalSolution,
    Instance,
    Route,
)

PlanRoute = tuple[tuple[int, ...], tuple[float, ...]]  # (flight ids, start times)
PlanSnapshot = dict[int, tuple[PlanRoute, ...]]


@dataclass(frozen=True)
class ArrivalStream:
    """Flights known at time zero plus flights revealed at their arrival."""

    initial: tuple[Flight, ...]
    future: tuple[Flight, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        arrivals = [f.arrival for f in self.future]
        if arrivals != sorted(arrivals):
            raise FormatError("future flights must be sorted by arrival time")
        ids = [f.flight_id for f in self.initial] + [f.flight_id for f in self.future]
        if len(set(ids)) != len(ids):
            raise FormatError("stream flight ids must be unique")


@dataclass(frozen=True)
class Event:
    """One log row: a re-optimization or a rejection-only reveal."""

    time: float
    revealed: tuple[int, ...]  # flight ids accepted at this event
    rejected: tuple[int, ...]  # flight ids rejected at this event
    n_frozen: int  # (flight, op) services frozen at this time
    n_pending: int  # (flight, op) services re-planned at this event
    total_cost: float
    incremental_cost: float
    plan: PlanSnapshot


@dataclass(frozen=True)
class _Resume:
    position: int  # template node (flight id) the vehicle stands at
    ready: float  # absolute time the vehicle frees up
    capacity: float  # residual normalized capacity


def make_stream(inst: Instance, n_initial: int, seed: int = 0) -> ArrivalStream:
    """Split an instance's flights into known-at-zero and revealed-at-arrival.

    The future subset is drawn uniformly at random; its flights reveal in
    arrival order.
    """
    if not (0 <= n_initial <= inst.n):
        raise ValueError(f"n_initial must lie in 0..{inst.n}")
    rng = np.random.default_rng(seed)
    future_ids = set(
        int(i) + 1 for i in rng.choice(inst.n, size=inst.n - n_initial, replace=False)
    )
    initial = tuple(f for f in inst.flights if f.flight_id not in future_ids)
    future = tuple(
        sorted(
            (f for f in inst.flights if f.flight_id in future_ids),
            key=lambda f: (f.arrival, f.flight_id),
        )
    )
    return ArrivalStream(initial=initial, future=future, seed=seed)


def _residual_subproblem(
    inst: Instance,
    op,
    subset: list[int],
    completions: dict[tuple[int, int], float],
    vehicles: list[_Resume],
    clock: float,
) -> SubProblem:
    """One fleet's sub-problem over a flight subset, times shifted by -clock."""
    fleet = inst.fleet(op.op_id)
    nodes = [0] + subset
    dist = inst.cost_matrix[np.ix_(nodes, nodes)]
    flights = [inst.flight(fid) for fid in subset]
    return SubProblem(
        op_id=op.op_id,
        level=op.level,
        flight_ids=tuple(subset),
        demand=tuple(f.demand(op.op_id) / fleet.capacity for f in flights),
        duration=tuple(op.duration(f.flight_type) for f in flights),
        window_start=tuple(
            framework.window_start(fid, op.level, completions, inst) - clock
            for fid in subset
        ),
        window_end=tuple(
            framework.window_end(fid, op.level, inst) - clock for fid in subset
        ),
        dist=dist,
        speed=fleet.speed,
        capacity=fleet.capacity,
        horizon=inst.horizon,
        gate_ids=tuple(f.gate_id for f in flights),
        initial_vehicles=tuple(
            VehicleStart(
                ready_time=max(v.ready, clock) - clock,
                capacity=v.capacity,
                travel_row=tuple(inst.cost_matrix[v.position, nodes] / fleet.speed),
                dist_row=tuple(inst.cost_matrix[v.position, nodes]),
            )
            for v in vehicles
        ),
    )


def _service_feasible_alone(inst: Instance, flight: Flight, clock: float) -> bool:
    """Can dedicated fresh vehicles serve every operation from ``clock`` on?"""
    completions: dict[tuple[int, int], float] = {}
    try:
        for group in framework.group_by_level(inst.operations):
            for op in group:
                sub = _residual_subproblem(
                    inst, op, [flight.flight_id], completions, [], clock
                )
                actions = nearest_neighbor(sub)
                starts = framework.start_times(sub, routes_from_actions(sub, actions))
                completions[(flight.flight_id, op.op_id)] = (
                    starts[flight.flight_id] + clock + op.duration(flight.flight_type)
                )
    except InfeasibleError:
        return False
    return True


def _plan_cost(inst: Instance, plan: dict[int, list[list]]) -> float:
    """Total distance of the whole plan, depot legs included.

    Accumulated per fleet then summed, matching the one-shot decomposition's
    grouping bit for bit (so an empty stream reproduces its objective exactly).
    """
    total = 0.0
    for op in inst.operations:
        op_total = 0.0
        for visits, _starts in plan.get(op.op_id, []):
            prev = 0
            for fid in visits:
                op_total += float(inst.cost_matrix[prev, fid])
                prev = fid
            op_total += float(inst.cost_matrix[prev, 0])
        total += op_total
    return total


def _snapshot(plan: dict[int, list[list]]) -> PlanSnapshot:
    return {
        op_id: tuple((tuple(v), tuple(s)) for v, s in routes)
        for op_id, routes in plan.items()
    }


def _reoptimize(
    inst: Instance,
    solver: framework.SubSolver,
    plan: dict[int, list[list]],
    active_ids: list[int],
    new_ids: list[int],
    clock: float,
) -> tuple[dict[int, list[list]], int, int]:
    """Freeze started services, re-plan the rest; returns (plan, frozen, pending)."""
    new_plan: dict[int, list[list]] = {}
    completions: dict[tuple[int, int], float] = {}
    n_frozen = 0
    n_pending = 0
    for group in framework.group_by_level(inst.operations):
        for op in group:
            frozen_routes: list[list] = []  # keep their position in route order
            open_slots: list[tuple[list[int], list[float]]] = []  # frozen prefixes
            vehicles: list[_Resume] = []
            pending: list[int] = list(new_ids)
            for visits, starts in plan.get(op.op_id, []):
                cut = 0
                while cut < len(starts) and starts[cut] < clock:
                    cut += 1
                for fid, t0 in zip(visits[:cut], starts[:cut]):
                    fl = inst.flight(fid)
                    completions[(fid, op.op_id)] = t0 + op.duration(fl.flight_type)
                n_frozen += cut
                pending.extend(visits[cut:])
                if cut == len(visits):
                    frozen_routes.append([list(visits), list(starts)])
                elif cut > 0:
                    fleet = inst.fleet(op.op_id)
                    used = sum(
                        inst.flight(f).demand(op.op_id) / fleet.capacity
                        for f in visits[:cut]
                    )
                    last = visits[cut - 1]
                    vehicles.append(
                        _Resume(
                            position=last,
                            ready=completions[(last, op.op_id)],
                            capacity=1.0 - used,
                        )
                    )
                    open_slots.append([list(visits[:cut]), list(starts[:cut])])
            pending = sorted(set(pending))
            n_pending += len(pending)
            routes: list[list[int]] = [[] for _ in vehicles]
            starts_abs: dict[int, float] = {}
            if pending or vehicles:
                sub = _residual_subproblem(
                    inst, op, pending, completions, vehicles, clock
                )
                actions = tuple(int(a) for a in solver(sub))
                replay(sub, actions)
                routes = routes_from_actions(sub, actions)
                rel = framework.start_times(sub, routes)
                starts_abs = {fid: t + clock for fid, t in rel.items()}
                for j, fid in enumerate(sub.flight_ids):
                    completions[(fid, op.op_id)] = (
                        starts_abs[fid] + sub.duration[j]
                    )
            op_routes: list[list] = list(frozen_routes)
            for k, (pvisits, pstarts) in enumerate(open_slots):
                tail = [sub.flight_ids[v - 1] for v in routes[k]]
                op_routes.append(
                    [pvisits + tail, pstarts + [starts_abs[f] for f in tail]]
                )
            for k in range(len(vehicles), len(routes)):
                if routes[k]:
                    tail = [sub.flight_ids[v - 1] for v in routes[k]]
                    op_routes.append([tail, [starts_abs[f] for f in tail]])
            new_plan[op.op_id] = op_routes
    return new_plan, n_frozen, n_pending


def simulate(
    stream: ArrivalStream,
    solver: framework.SubSolver,
    inst_template: Instance,
    batch_window: float = 0.0,
) -> tuple[GlobalSolution, list[Event]]:
    """Run the stream to completion; returns the stitched plan and the log.

    Re-optimization triggers on every reveal; reveals within ``batch_window``
    of each other are handled together at the latest arrival of the batch.
    """
    known = {f.flight_id: f for f in inst_template.flights}
    for f in stream.initial + stream.future:
        if known.get(f.flight_id) != f:
            raise FormatError(
                f"stream flight {f.flight_id} does not match the instance template"
            )
    plan: dict[int, list[list]] = {}
    events: list[Event] = []
    accepted: list[int] = sorted(f.flight_id for f in stream.initial)
    total = 0.0
    plan, n_frozen, n_pending = _reoptimize(
        inst_template, solver, plan, accepted, accepted, 0.0
    )
    total = _plan_cost(inst_template, plan)
    events.append(
        Event(
            time=0.0,
            revealed=tuple(accepted),
            rejected=(),
            n_frozen=n_frozen,
            n_pending=n_pending,
            total_cost=total,
            incremental_cost=total,
            plan=_snapshot(plan),
        )
    )
    queue = list(stream.future)
    while queue:
        batch = [queue.pop(0)]
        while queue and queue[0].arrival - batch[0].arrival <= batch_window:
            batch.append(queue.pop(0))
        clock = max(f.arrival for f in batch)
        ok = [f for f in batch if _service_feasible_alone(inst_template, f, clock)]
        bad = [f.flight_id for f in batch if f not in ok]
        if not ok:
            events.append(
                Event(
                    time=clock,
                    revealed=(),
                    rejected=tuple(bad),
                    n_frozen=sum(
                        1
                        for rts in plan.values()
                        for _v, starts in rts
                        for t0 in starts
                        if t0 < clock
                    ),
                    n_pending=0,
                    total_cost=total,
                    incremental_cost=0.0,
                    plan=_snapshot(plan),
                )
            )
            continue
        new_ids = sorted(f.flight_id for f in ok)
        accepted = sorted(accepted + new_ids)
        plan, n_frozen, n_pending = _reoptimize(
            inst_template, solver, plan, accepted, new_ids, clock
        )
        new_total = _plan_cost(inst_template, plan)
        events.append(
            Event(
                time=clock,
                revealed=tuple(new_ids),
                rejected=tuple(bad),
                n_frozen=n_frozen,
                n_pending=n_pending,
                total_cost=new_total,
                incremental_cost=new_total - total,
                plan=_snapshot(plan),
            )
        )
        total = new_total
    _, renumber = accepted_instance(inst_template, accepted)
    routes = []
    for op in inst_template.operations:
        for visits, starts in plan.get(op.op_id, []):
            routes.append(
                Route(
                    op_id=op.op_id,
                    visits=tuple(renumber[f] for f in visits),
                    start_times=tuple(starts),
                )
            )
    return GlobalSolution(routes=tuple(routes), objective=total), events


def accepted_instance(
    inst: Instance, accepted_ids: list[int]
) -> tuple[Instance, dict[int, int]]:
    """Instance over the accepted flights, renumbered 1..k in old-id order."""
    ids = sorted(accepted_ids)
    renumber = {fid: k + 1 for k, fid in enumerate(ids)}
    flights = tuple(
        replace(inst.flight(fid), flight_id=renumber[fid]) for fid in ids
    )
    return (
        Instance(
            flights=flights,
            operations=inst.operations,
            fleets=inst.fleets,
            gate_positions=inst.gate_positions,
        ),
        renumber,
    )


def accepted_ids_from_events(stream: ArrivalStream, events: list[Event]) -> list[int]:
    ids = [f.flight_id for f in stream.initial]
    for e in events[1:]:
        ids.extend(e.revealed)
    return sorted(ids)


# --- stream serialization -----------------------------------------------------


def stream_to_dict(stream: ArrivalStream) -> dict:
    from .model import _flight_to_dict

    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "stream",
        "seed": stream.seed,
        "initial": [_flight_to_dict(f) for f in stream.initial],
        "future": [_flight_to_dict(f) for f in stream.future],
    }


def stream_from_dict(d: dict) -> ArrivalStream:
    from .model import _flight_from_dict

    if d.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {d.get('schema_version')!r}")
    if d.get("kind") != "stream":
        raise FormatError(f"expected kind 'stream', got {d.get('kind')!r}")
    return ArrivalStream(
        initial=tuple(_flight_from_dict(x) for x in d["initial"]),
        future=tuple(_flight_from_dict(x) for x in d["future"]),
        seed=int(d.get("seed", 0)),
    )


def stream_to_json(stream: ArrivalStream) -> str:
    return json.dumps(stream_to_dict(stream), indent=2) + "\n"


def stream_from_json(text: str) -> ArrivalStream:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    return stream_from_dict(d)
