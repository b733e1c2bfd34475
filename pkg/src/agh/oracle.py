"""Exact solvers at micro scale; the ground truth the test suite leans on.

``exact_subproblem`` runs depth-first branch-and-bound directly over env
episodes, so its notion of feasibility is identical to every other solver's.
``exhaustive_subproblem`` is the same search without pruning — it exists to
certify the branch-and-bound. ``exact_global`` enumerates entire multi-fleet
solutions (route structures plus earliest-start schedules) and is the only
component that optimizes across operations jointly.
"""

from __future__ import annotations

from itertools import permutations

from .env import DEPOT, SubProblem, feasible_mask, reset, step
from .errors import InfeasibleError, SizeLimitError
from .model import GlobalSolution, Instance, Route

SUBPROBLEM_LIMIT = 7
GLOBAL_FLIGHT_LIMIT = 3
GLOBAL_OP_LIMIT = 2


def _min_incoming(sub: SubProblem) -> list[float]:
    """Admissible per-flight bound: cheapest arc that could serve it."""
    mins = [0.0] * (sub.n + 1)
    for j in range(1, sub.n + 1):
        best = min(float(sub.dist[i][j]) for i in range(sub.n + 1) if i != j)
        for v in sub.initial_vehicles:
            best = min(best, v.dist_row[j])
        mins[j] = best
    return mins


def _retire_tail(sub: SubProblem, vehicles_used: int) -> float:
    return sum(v.dist_row[DEPOT] for v in sub.initial_vehicles[vehicles_used:])


def _search(sub: SubProblem, prune: bool) -> tuple[tuple[int, ...], float]:
    min_in = _min_incoming(sub)
    best_cost = float("inf")
    best_actions: tuple[int, ...] | None = None

    def rec(s, cost: float) -> None:
        nonlocal best_cost, best_actions
        if s.done:
            total = cost
            if s.last_node != DEPOT:
                total += s.dist_row[DEPOT]
            total += _retire_tail(sub, s.vehicles_used)
            if total < best_cost:
                best_cost, best_actions = total, s.partial
            return
        if prune:
            bound = cost + sum(min_in[j + 1] for j in range(sub.n) if not s.served[j])
            if bound >= best_cost:
                return
        mask = feasible_mask(s)
        for a in range(sub.n + 1):
            if not mask[a]:
                continue
            leg = 0.0
            if a != DEPOT:
                leg = s.dist_row[a]
            elif s.last_node != DEPOT:
                leg = s.dist_row[DEPOT]
            rec(step(s, a), cost + leg)

    rec(reset(sub), 0.0)
    if best_actions is None:
        raise InfeasibleError("no feasible episode exists for this sub-problem")
    return best_actions, best_cost


def exact_subproblem(
    sub: SubProblem, limit: int = SUBPROBLEM_LIMIT
) -> tuple[tuple[int, ...], float]:
    """Minimum-cost episode by branch-and-bound; lexicographically first optimum.

    Actions are explored in ascending node order, and equal-cost leaves never
    replace the incumbent, so the returned sequence is the smallest optimal
    one in lexicographic order.
    """
    if sub.n > limit:
        raise SizeLimitError(f"exact search limited to {limit} flights, got {sub.n}")
    return _search(sub, prune=True)


def exhaustive_subproblem(sub: SubProblem, limit: int = 5) -> tuple[tuple[int, ...], float]:
    """Plain enumeration of every feasible episode (certifies the B&B)."""
    if sub.n > limit:
        raise SizeLimitError(f"exhaustive search limited to {limit} flights, got {sub.n}")
    return _search(sub, prune=False)


def _sequence_partitions(items: list[int]):
    """Every set of disjoint sequences covering items, each set yielded once.

    A set of sequences is a permutation cut into segments; requiring segment
    heads to ascend makes each set appear exactly once.
    """
    n = len(items)
    if n == 0:
        yield []
        return
    for perm in permutations(items):
        for cuts in range(1 << (n - 1)):
            segs: list[list[int]] = [[perm[0]]]
            for idx in range(1, n):
                if cuts & (1 << (idx - 1)):
                    segs.append([perm[idx]])
                else:
                    segs[-1].append(perm[idx])
            heads = [s[0] for s in segs]
            if heads == sorted(heads):
                yield segs


def _global_schedule(
    inst: Instance, chosen: dict[int, list[list[int]]], semantics: str
) -> dict[tuple[int, int], float] | None:
    """Earliest feasible start times for fixed routes, or None.

    Processes levels in order; a start must clear its route predecessor, its
    static window opening, and all completions of the previous level at the
    same flight. Earliest starts are jointly minimal, so feasibility of this
    schedule decides feasibility outright.
    """
    from . import framework

    starts: dict[tuple[int, int], float] = {}
    for group in framework.group_by_level(inst.operations):
        for op in group:
            fleet = inst.fleet(op.op_id)
            for visits in chosen[op.op_id]:
                clock = 0.0
                prev = 0
                for fid in visits:
                    fl = inst.flight(fid)
                    lo = framework.static_window_start(fid, op.level, inst)
                    if op.level > 0:
                        for prev_op in inst.operations:
                            if prev_op.level == op.level - 1:
                                lo = max(
                                    lo,
                                    starts[(fid, prev_op.op_id)]
                                    + prev_op.duration(fl.flight_type),
                                )
                    t = max(clock + inst.cost(prev, fid) / fleet.speed, lo)
                    hi = framework.window_end(fid, op.level, inst)
                    if semantics == "complete_by_window":
                        hi -= op.duration(fl.flight_type)
                    if t > hi + 1e-9:
                        return None
                    starts[(fid, op.op_id)] = t
                    clock = t + op.duration(fl.flight_type)
                    prev = fid
    return starts


def exact_global(
    inst: Instance, semantics: str = "complete_by_window"
) -> tuple[GlobalSolution, float]:
    """Joint optimum over all fleets by full enumeration (micro instances).

    Enumerates every combination of per-fleet route structures within fleet
    size and capacity, keeps those admitting a feasible schedule, and returns
    the cheapest (first found on ties, with a deterministic enumeration
    order).
    """
    if inst.n > GLOBAL_FLIGHT_LIMIT or inst.n_ops > GLOBAL_OP_LIMIT:
        raise SizeLimitError(
            f"global enumeration limited to {GLOBAL_FLIGHT_LIMIT} flights / "
            f"{GLOBAL_OP_LIMIT} operations, got {inst.n} / {inst.n_ops}"
        )
    flights = [fl.flight_id for fl in inst.flights]
    per_fleet: dict[int, list[list[list[int]]]] = {}
    for op in inst.operations:
        fleet = inst.fleet(op.op_id)
        options = []
        for segs in _sequence_partitions(flights):
            if len(segs) > fleet.max_vehicles:
                continue
            if any(
                sum(inst.flight(f).demand(op.op_id) for f in seg) > fleet.capacity
                for seg in segs
            ):
                continue
            options.append(segs)
        per_fleet[op.op_id] = options

    def route_set_cost(segs: list[list[int]]) -> float:
        total = 0.0
        for seg in segs:
            prev = 0
            for fid in seg:
                total += inst.cost(prev, fid)
                prev = fid
            total += inst.cost(prev, 0)
        return total

    op_ids = [op.op_id for op in inst.operations]
    best: tuple[float, dict[int, list[list[int]]], dict] | None = None

    def rec(idx: int, chosen: dict[int, list[list[int]]], cost: float) -> None:
        nonlocal best
        if best is not None and cost >= best[0]:
            return
        if idx == len(op_ids):
            starts = _global_schedule(inst, chosen, semantics)
            if starts is None:
                return
            best = (cost, {k: [seg[:] for seg in v] for k, v in chosen.items()}, starts)
            return
        op_id = op_ids[idx]
        for segs in per_fleet[op_id]:
            chosen[op_id] = segs
            rec(idx + 1, chosen, cost + route_set_cost(segs))
        del chosen[op_id]

    rec(0, {}, 0.0)
    if best is None:
        raise InfeasibleError("no feasible global solution exists")
    cost, chosen, starts = best
    routes = []
    for op in inst.operations:
        for seg in chosen[op.op_id]:
            routes.append(
                Route(
                    op_id=op.op_id,
                    visits=tuple(seg),
                    start_times=tuple(starts[(f, op.op_id)] for f in seg),
                )
            )
    return GlobalSolution(routes=tuple(routes), objective=cost), cost
