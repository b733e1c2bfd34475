"""Construction baselines: nearest neighbor, insertion rules, savings merges.

Every solver returns a complete episode as an action tuple (see env), so the
orchestrator can replay it for start times. Solvers that reason over routes
use the pinned-vehicle convention: route k belongs to ``initial_vehicles[k]``
while k is within that tuple, and to a fresh depot vehicle past it. On
ordinary sub-problems (no resumed vehicles) this reduces to the classic
algorithms.
"""

from __future__ import annotations

import numpy as np

from .env import (
    DEPOT,
    RolloutState,
    SubProblem,
    actions_from_routes,
    feasible_mask,
    reset,
    route_cost,
    schedule,
    step,
    vehicle_for_route,
)
from .errors import InfeasibleError

INSERTION_RULES = ("random", "nearest", "farthest")


def _greedy_pick(s: RolloutState) -> int:
    """Feasible flight with least travel from the current position, else depot."""
    mask = feasible_mask(s)
    best = DEPOT
    best_t = float("inf")
    for j in range(1, s.sub.n + 1):
        if mask[j] and s.travel_row[j] < best_t:
            best, best_t = j, s.travel_row[j]
    return best


def nearest_neighbor(sub: SubProblem) -> tuple[int, ...]:
    """Serve the closest feasible flight; dispatch a new vehicle when stuck."""
    s = reset(sub)
    while not s.done:
        s = step(s, _greedy_pick(s))
    return s.partial


def route_feasible(sub: SubProblem, visits: list[int], route_index: int) -> bool:
    return schedule(sub, visits, vehicle_for_route(sub, route_index)) is not None


def best_insertion(
    sub: SubProblem, routes: list[list[int]], customer: int
) -> tuple[int, int, float] | None:
    """Cheapest feasible (route, position) for one customer, scanning in order.

    Returns (route index, position, cost increase), or None when no existing
    route admits the customer. Ties keep the first position scanned.
    """
    best: tuple[int, int, float] | None = None
    for k, visits in enumerate(routes):
        base = route_cost(sub, visits, k)
        for pos in range(len(visits) + 1):
            cand = visits[:pos] + [customer] + visits[pos:]
            if schedule(sub, cand, vehicle_for_route(sub, k)) is None:
                continue
            delta = route_cost(sub, cand, k) - base
            if best is None or delta < best[2]:
                best = (k, pos, delta)
    return best


def open_route(sub: SubProblem, routes: list[list[int]], customer: int) -> None:
    """Append a fresh single-customer route; error if even that cannot run."""
    if schedule(sub, [customer], None) is None:
        raise InfeasibleError(
            f"op {sub.op_id}: flight {sub.flight_ids[customer - 1]} cannot be "
            f"served even by a fresh vehicle"
        )
    routes.append([customer])


def _insert_or_open(sub: SubProblem, routes: list[list[int]], customer: int) -> None:
    found = best_insertion(sub, routes, customer)
    if found is None:
        open_route(sub, routes, customer)
    else:
        k, pos, _ = found
        routes[k].insert(pos, customer)


def insertion(sub: SubProblem, rule: str, seed: int | None = None) -> tuple[int, ...]:
    """Insert customers one by one at their cheapest feasible position.

    ``rule`` picks the next customer: a uniform draw, the one closest to any
    routed node, or the one farthest from any routed node (the depot counts
    as routed from the start). Ties go to the lowest flight id.
    """
    if rule not in INSERTION_RULES:
        raise ValueError(f"unknown insertion rule {rule!r}")
    rng = np.random.default_rng(seed)
    routes: list[list[int]] = [[] for _ in sub.initial_vehicles]
    unrouted = list(range(1, sub.n + 1))
    routed_nodes = [DEPOT]
    while unrouted:
        if rule == "random":
            c = unrouted[int(rng.integers(len(unrouted)))]
        else:
            sign = 1.0 if rule == "nearest" else -1.0
            scores = []
            for c0 in unrouted:
                ds = [float(sub.dist[r][c0]) for r in routed_nodes]
                scores.append(min(ds) if rule == "nearest" else max(ds))
            pick = min(range(len(unrouted)), key=lambda t: (sign * scores[t], unrouted[t]))
            c = unrouted[pick]
        unrouted.remove(c)
        _insert_or_open(sub, routes, c)
        routed_nodes.append(c)
    return tuple(actions_from_routes(sub, routes))


def savings_order(sub: SubProblem) -> list[tuple[int, int]]:
    """Customer pairs by descending savings c(i,0)+c(0,j)-c(i,j); lex ties."""
    pairs = []
    for i in range(1, sub.n + 1):
        for j in range(1, sub.n + 1):
            if i == j:
                continue
            s = sub.dist[i][DEPOT] + sub.dist[DEPOT][j] - sub.dist[i][j]
            pairs.append((-s, i, j))
    pairs.sort()
    return [(i, j) for _, i, j in pairs]


def cws(sub: SubProblem) -> tuple[int, ...]:
    """Clarke-Wright savings with merge feasibility checked by replay.

    Starts from one fresh route per customer, seeded in ascending
    window-start order, then walks the savings list once, joining the end of
    i's route to the start of j's route whenever the concatenation replays
    feasibly. Resumed vehicles (realtime) take no merges and simply retire.
    """
    order = sorted(range(1, sub.n + 1), key=lambda j: (sub.window_start[j - 1], j))
    routes: list[list[int]] = [[] for _ in sub.initial_vehicles]
    for c in order:
        open_route(sub, routes, c)
    n_pinned = len(sub.initial_vehicles)
    route_of = {c: n_pinned + k for k, c in enumerate(order)}
    for i, j in savings_order(sub):
        ri, rj = route_of[i], route_of[j]
        if ri == rj or ri < n_pinned or rj < n_pinned:
            continue
        if routes[ri][-1] != i or routes[rj][0] != j:
            continue
        merged = routes[ri] + routes[rj]
        if schedule(sub, merged, None) is None:
            continue
        routes[ri] = merged
        for c in routes[rj]:
            route_of[c] = ri
        routes[rj] = []
    kept = routes[:n_pinned] + [r for r in routes[n_pinned:] if r]
    return tuple(actions_from_routes(sub, kept))
