"""Level-by-level decomposition: one routing sub-problem per fleet.

Operations are grouped by precedence level. Levels are solved in ascending
order; within a level, fleets are solved in ascending op_id (their
sub-problems are independent, so this order only fixes determinism). A
flight's window for level p opens when all its level p-1 services complete,
and closes early enough to leave room for the longest chain of later levels
(so feasibility never propagates backwards).

A sub-solver is any callable taking a SubProblem and returning the action
sequence of a full episode (see env). The framework replays the actions to
recover per-vehicle routes, service start times, and completion times.
"""

from __future__ import annotations

from typing import Callable, Sequence

from .env import SubProblem, replay, routes_from_actions, tour_cost
from .errors import InfeasibleError
from .model import GlobalSolution, Instance, OperationSpec, Route

SubSolver = Callable[[SubProblem], Sequence[int]]


def group_by_level(ops: Sequence[OperationSpec]) -> list[list[OperationSpec]]:
    """Operations partitioned by level, ascending; op_id ascending within."""
    levels = sorted({op.level for op in ops})
    if levels != list(range(len(levels))):
        raise InfeasibleError(f"operation levels not contiguous from 0: {levels}")
    groups: list[list[OperationSpec]] = [[] for _ in levels]
    for op in sorted(ops, key=lambda o: o.op_id):
        groups[op.level].append(op)
    return groups


def window_start(
    flight_id: int, level: int, completions: dict[tuple[int, int], float], inst: Instance
) -> float:
    """Earliest start of level-``level`` service at a flight.

    Level 0 opens at the flight's arrival; later levels open when every
    previous-level operation at that flight has completed.
    """
    flight = inst.flight(flight_id)
    if level == 0:
        return flight.arrival
    prev_ops = [op for op in inst.operations if op.level == level - 1]
    vals = []
    for op in prev_ops:
        key = (flight_id, op.op_id)
        if key not in completions:
            raise InfeasibleError(
                f"missing completion of op {op.op_id} at flight {flight_id} "
                f"needed for level {level}"
            )
        vals.append(completions[key])
    return max(vals)


def reserved_tail(inst: Instance, level: int, flight_type: int) -> float:
    """Time that later levels must still fit before departure (worst op each)."""
    total = 0.0
    for lv in range(level + 1, len(group_by_level(inst.operations))):
        total += max(
            op.duration(flight_type) for op in inst.operations if op.level == lv
        )
    return total


def window_end(flight_id: int, level: int, inst: Instance) -> float:
    """Latest completion of level-``level`` service at a flight."""
    flight = inst.flight(flight_id)
    return flight.departure - reserved_tail(inst, level, flight.flight_type)


def static_window_start(flight_id: int, level: int, inst: Instance) -> float:
    """Instance-only lower bound on the dynamic window start (used for audits)."""
    flight = inst.flight(flight_id)
    total = 0.0
    for lv in range(level):
        total += max(
            op.duration(flight.flight_type) for op in inst.operations if op.level == lv
        )
    return flight.arrival + total


def build_subproblem(
    inst: Instance,
    op: OperationSpec,
    completions: dict[tuple[int, int], float],
) -> SubProblem:
    """One fleet's sub-problem given completions of all previous levels."""
    fleet = inst.fleet(op.op_id)
    flights = inst.flights
    starts = tuple(
        window_start(fl.flight_id, op.level, completions, inst) for fl in flights
    )
    ends = tuple(window_end(fl.flight_id, op.level, inst) for fl in flights)
    return SubProblem(
        op_id=op.op_id,
        level=op.level,
        flight_ids=tuple(fl.flight_id for fl in flights),
        demand=tuple(fl.demand(op.op_id) / fleet.capacity for fl in flights),
        duration=tuple(op.duration(fl.flight_type) for fl in flights),
        window_start=starts,
        window_end=ends,
        dist=inst.cost_matrix,
        speed=fleet.speed,
        capacity=fleet.capacity,
        horizon=inst.horizon,
        gate_ids=tuple(fl.gate_id for fl in flights),
    )


def completion_times(sub: SubProblem, routes: Sequence[Sequence[int]]) -> dict[int, float]:
    """Completion time per flight id, replaying each route's schedule."""
    from .env import schedule, vehicle_for_route

    done: dict[int, float] = {}
    for k, visits in enumerate(routes):
        starts = schedule(sub, list(visits), vehicle_for_route(sub, k))
        if starts is None:
            raise InfeasibleError(f"op {sub.op_id}: route {k} is not feasible")
        for node, t in zip(visits, starts):
            fid = sub.flight_ids[node - 1]
            if fid in done:
                raise InfeasibleError(f"op {sub.op_id}: flight {fid} served twice")
            done[fid] = t + sub.duration[node - 1]
    missing = set(sub.flight_ids) - set(done)
    if missing:
        raise InfeasibleError(f"op {sub.op_id}: flights never served: {sorted(missing)}")
    return done


def start_times(sub: SubProblem, routes: Sequence[Sequence[int]]) -> dict[int, float]:
    """Service start time per flight id (same replay as completion_times)."""
    comp = completion_times(sub, routes)
    return {
        fid: comp[fid] - sub.duration[j]
        for j, fid in enumerate(sub.flight_ids)
    }


def solve(inst: Instance, solver: SubSolver) -> GlobalSolution:
    """Run the full decomposition with one sub-solver for every fleet."""
    completions: dict[tuple[int, int], float] = {}
    all_routes: list[Route] = []
    objective = 0.0
    for group in group_by_level(inst.operations):
        for op in group:
            sub = build_subproblem(inst, op, completions)
            actions = tuple(int(a) for a in solver(sub))
            replay(sub, actions)  # raises if the solver violated the mask
            routes = routes_from_actions(sub, actions)
            starts = start_times(sub, routes)
            objective += tour_cost(sub, actions)
            for visits in routes:
                if not visits:
                    continue
                fids = tuple(sub.flight_ids[v - 1] for v in visits)
                all_routes.append(
                    Route(
                        op_id=op.op_id,
                        visits=fids,
                        start_times=tuple(starts[f] for f in fids),
                    )
                )
            for j, fid in enumerate(sub.flight_ids):
                completions[(fid, op.op_id)] = starts[fid] + sub.duration[j]
    return GlobalSolution(routes=tuple(all_routes), objective=float(objective))


def subproblems_at_level(
    inst: Instance, level: int, completions: dict[tuple[int, int], float]
) -> list[SubProblem]:
    """All sub-problems of one level (exposed for tests and tooling)."""
    return [
        build_subproblem(inst, op, completions)
        for op in group_by_level(inst.operations)[level]
    ]


def route_count_by_op(sol: GlobalSolution) -> dict[int, int]:
    counts: dict[int, int] = {}
    for r in sol.routes:
        counts[r.op_id] = counts.get(r.op_id, 0) + 1
    return counts
