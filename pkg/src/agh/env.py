"""Single-fleet routing MDP: states, feasibility masks, transitions, tour cost.

A sub-problem is one fleet's slice of the global problem: every flight needs
this fleet's operation within a per-flight time window. An episode builds all
vehicle tours action by action; action 0 ends the current vehicle's tour and
dispatches the next one, action j (1..n local) serves flight j next.

Service at j starts at max(clock + travel, window start) and must *complete*
by the window end. Demands are normalized by vehicle capacity so a fresh
vehicle has capacity 1.

``initial_vehicles`` supports resuming vehicles mid-route (used by the
realtime simulator): those vehicles are consumed first, in order, each
starting from its recorded position, clock, and residual capacity. With the
default empty tuple the episode starts from a fresh depot vehicle and the
classic semantics apply unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InvalidActionError

EPS = 1e-9
DEPOT = 0


@dataclass(frozen=True)
class VehicleStart:
    """A vehicle resuming off-depot: where it sits, when it frees, what remains."""

    ready_time: float
    capacity: float
    travel_row: tuple[float, ...]  # minutes to [depot] + local flights
    dist_row: tuple[float, ...]  # distance to [depot] + local flights


@dataclass(frozen=True, eq=False)
class SubProblem:
    """One fleet's VRPTW slice at a fixed precedence level.

    Local node indexing: 0 is the depot, k in 1..n is ``flight_ids[k-1]``.
    ``demand`` is normalized by capacity (each value in (0, 1]).
    """

    op_id: int
    level: int
    flight_ids: tuple[int, ...]
    demand: tuple[float, ...]
    duration: tuple[float, ...]
    window_start: tuple[float, ...]
    window_end: tuple[float, ...]
    dist: np.ndarray  # (n+1, n+1), row/col 0 = depot
    speed: float
    capacity: int
    horizon: float
    gate_ids: tuple[int, ...] = ()
    initial_vehicles: tuple[VehicleStart, ...] = ()
    travel: np.ndarray = field(init=False, repr=False)
    _arrays: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        dist = np.asarray(self.dist, dtype=float)
        dist.flags.writeable = False
        object.__setattr__(self, "dist", dist)
        travel = dist / self.speed
        travel.flags.writeable = False
        object.__setattr__(self, "travel", travel)
        arrays = (
            np.asarray(self.demand, dtype=float),
            np.asarray(self.duration, dtype=float),
            np.asarray(self.window_start, dtype=float),
            np.asarray(self.window_end, dtype=float),
        )
        for a in arrays:
            a.flags.writeable = False
        object.__setattr__(self, "_arrays", arrays)
        for j, (a, b) in enumerate(zip(self.window_start, self.window_end)):
            if a > b + EPS:
                raise InfeasibleError(
                    f"op {self.op_id}: empty window [{a}, {b}] for flight "
                    f"{self.flight_ids[j]}"
                )
        for d in self.demand:
            if not (0.0 < d <= 1.0 + EPS):
                raise InfeasibleError(f"op {self.op_id}: normalized demand {d} outside (0, 1]")

    @property
    def n(self) -> int:
        return len(self.flight_ids)

    def demand_arr(self) -> np.ndarray:
        return self._arrays[0]

    def duration_arr(self) -> np.ndarray:
        return self._arrays[1]

    def a_arr(self) -> np.ndarray:
        return self._arrays[2]

    def b_arr(self) -> np.ndarray:
        return self._arrays[3]


@dataclass(frozen=True)
class RolloutState:
    """Immutable episode state; ``step`` returns a fresh state."""

    sub: SubProblem
    partial: tuple[int, ...]
    last_node: int  # local node; -1 while a resumed vehicle has not moved yet
    remaining_capacity: float
    clock: float
    served: tuple[bool, ...]
    vehicles_used: int  # initial vehicles consumed so far
    fresh_vehicle: bool  # current vehicle has not served anything yet
    travel_row: tuple[float, ...]
    dist_row: tuple[float, ...]

    @property
    def n_served(self) -> int:
        return sum(self.served)

    @property
    def done(self) -> bool:
        return all(self.served)


def _activate(sub: SubProblem, index: int) -> dict:
    """State fields for dispatching vehicle ``index`` (initial ones first)."""
    if index < len(sub.initial_vehicles):
        v = sub.initial_vehicles[index]
        return {
            "last_node": -1,
            "remaining_capacity": v.capacity,
            "clock": v.ready_time,
            "travel_row": v.travel_row,
            "dist_row": v.dist_row,
        }
    return {
        "last_node": DEPOT,
        "remaining_capacity": 1.0,
        "clock": 0.0,
        "travel_row": tuple(sub.travel[DEPOT]),
        "dist_row": tuple(sub.dist[DEPOT]),
    }


def reset(sub: SubProblem) -> RolloutState:
    return RolloutState(
        sub=sub,
        partial=(),
        served=(False,) * sub.n,
        vehicles_used=min(1, len(sub.initial_vehicles)),
        fresh_vehicle=True,
        **_activate(sub, 0),
    )


def _flight_mask(s: RolloutState) -> np.ndarray:
    sub = s.sub
    arrive = s.clock + np.asarray(s.travel_row[1:])
    start = np.maximum(arrive, sub.a_arr())
    ok = ~np.asarray(s.served)
    ok &= sub.demand_arr() <= s.remaining_capacity + EPS
    ok &= start + sub.duration_arr() <= sub.b_arr() + EPS
    return ok


def feasible_mask(s: RolloutState) -> np.ndarray:
    """Boolean per node (index 0 depot), True = selectable now.

    A flight is selectable iff unserved, within remaining capacity, and its
    service would complete inside its window. The depot (end current tour) is
    blocked only while the vehicle still sits at the depot and some flight is
    selectable — this forbids depot-to-depot no-ops but lets a resumed
    vehicle (last_node -1) retire immediately.
    """
    sub = s.sub
    mask = np.empty(sub.n + 1, dtype=bool)
    flights = _flight_mask(s)
    any_flight = bool(flights.any())
    mask[1:] = flights
    mask[0] = not (s.last_node == DEPOT and any_flight)
    if not any_flight and not s.done and s.last_node == DEPOT:
        # Every future vehicle is identical to this fresh one: a dead end.
        unservable = next(
            sub.flight_ids[j] for j in range(sub.n) if not s.served[j]
        )
        raise InfeasibleError(
            f"op {sub.op_id}: no vehicle can serve flight {unservable} "
            f"(and possibly others) from the depot"
        )
    return mask


def step(s: RolloutState, action: int) -> RolloutState:
    sub = s.sub
    if not (0 <= action <= sub.n):
        raise InvalidActionError(f"action {action} out of range 0..{sub.n}")
    mask = feasible_mask(s)
    if not mask[action]:
        raise InvalidActionError(f"action {action} is masked in the current state")
    if action == DEPOT:
        return RolloutState(
            sub=sub,
            partial=s.partial + (DEPOT,),
            served=s.served,
            vehicles_used=min(s.vehicles_used + 1, len(sub.initial_vehicles)),
            fresh_vehicle=True,
            **_activate(sub, s.vehicles_used),
        )
    j = action - 1
    start = max(s.clock + s.travel_row[action], sub.window_start[j])
    served = list(s.served)
    served[j] = True
    return RolloutState(
        sub=sub,
        partial=s.partial + (action,),
        last_node=action,
        remaining_capacity=s.remaining_capacity - sub.demand[j],
        clock=start + sub.duration[j],
        served=tuple(served),
        vehicles_used=s.vehicles_used,
        fresh_vehicle=False,
        travel_row=tuple(sub.travel[action]),
        dist_row=tuple(sub.dist[action]),
    )


def tour_cost(sub: SubProblem, actions: tuple[int, ...] | list[int]) -> float:
    """Distance traveled over the episode, including every depot leg.

    Vehicles that end away from the depot (episode end, or a retired resumed
    vehicle) are charged their leg home; unused resumed vehicles are charged
    their leg home too, since they physically stand mid-route.
    """
    cost = 0.0
    vehicles_used = min(1, len(sub.initial_vehicles))
    fields = _activate(sub, 0)
    dist_row = fields["dist_row"]
    moved = fields["last_node"] == -1  # a resumed vehicle already stands out
    for a in actions:
        if a == DEPOT:
            if moved:
                cost += dist_row[DEPOT]
            if vehicles_used < len(sub.initial_vehicles):
                fields = _activate(sub, vehicles_used)
                vehicles_used += 1
            else:
                fields = _activate(sub, len(sub.initial_vehicles) + 1)
            dist_row = fields["dist_row"]
            moved = fields["last_node"] == -1
        else:
            cost += dist_row[a]
            dist_row = tuple(sub.dist[a])
            moved = True
    if moved:
        cost += dist_row[DEPOT]
    for v in sub.initial_vehicles[vehicles_used:]:
        cost += v.dist_row[DEPOT]
    return float(cost)


def schedule(
    sub: SubProblem, visits: list[int] | tuple[int, ...], vehicle: VehicleStart | None = None
) -> list[float] | None:
    """Start times for one vehicle's visit sequence, or None if infeasible.

    Service is as early as possible; this is exactly the env transition, so a
    schedule exists iff the visits replay without a masked action.
    """
    if vehicle is None:
        clock, cap, trow = 0.0, 1.0, sub.travel[DEPOT]
    else:
        clock, cap, trow = vehicle.ready_time, vehicle.capacity, vehicle.travel_row
    starts: list[float] = []
    for node in visits:
        j = node - 1
        if sub.demand[j] > cap + EPS:
            return None
        start = max(clock + trow[node], sub.window_start[j])
        if start + sub.duration[j] > sub.window_end[j] + EPS:
            return None
        starts.append(start)
        clock = start + sub.duration[j]
        cap -= sub.demand[j]
        trow = sub.travel[node]
    return starts


def vehicle_for_route(sub: SubProblem, route_index: int) -> VehicleStart | None:
    """Resumed vehicle bound to this route slot, or None for a fresh vehicle."""
    if route_index < len(sub.initial_vehicles):
        return sub.initial_vehicles[route_index]
    return None


def route_cost(sub: SubProblem, visits: list[int] | tuple[int, ...], route_index: int = 10**9) -> float:
    """Distance of one route including both depot legs (resume-aware)."""
    v = vehicle_for_route(sub, route_index)
    if v is None:
        if not visits:
            return 0.0
        prev_row = sub.dist[DEPOT]
    else:
        prev_row = np.asarray(v.dist_row)
        if not visits:
            return float(prev_row[DEPOT])
    cost = 0.0
    for node in visits:
        cost += float(prev_row[node])
        prev_row = sub.dist[node]
    cost += float(prev_row[DEPOT])
    return cost


def routes_cost(sub: SubProblem, routes: list[list[int]]) -> float:
    """Total distance of a route set under the pinned-vehicle convention."""
    total = 0.0
    for k, visits in enumerate(routes):
        v = vehicle_for_route(sub, k)
        if v is None:
            if not visits:
                continue
            row = sub.dist[DEPOT]
        else:
            row = np.asarray(v.dist_row)
            if not visits:
                total += float(row[DEPOT])
                continue
        prev_row = row
        for node in visits:
            total += float(prev_row[node])
            prev_row = sub.dist[node]
        total += float(prev_row[DEPOT])
    # Pinned vehicles beyond the provided list still go home.
    for k in range(len(routes), len(sub.initial_vehicles)):
        total += float(sub.initial_vehicles[k].dist_row[DEPOT])
    return total


def routes_from_actions(sub: SubProblem, actions: tuple[int, ...] | list[int]) -> list[list[int]]:
    """Split an action sequence into per-vehicle visit lists (local indices).

    The first ``len(initial_vehicles)`` lists belong to the resumed vehicles in
    order (padded with empty lists if the episode never reached them).
    """
    routes: list[list[int]] = [[]]
    for a in actions:
        if a == DEPOT:
            routes.append([])
        else:
            routes[-1].append(a)
    while routes and not routes[-1] and len(routes) > len(sub.initial_vehicles):
        routes.pop()
    while len(routes) < len(sub.initial_vehicles):
        routes.append([])
    return routes


def actions_from_routes(sub: SubProblem, routes: list[list[int]]) -> list[int]:
    """Inverse of routes_from_actions under the pinned-vehicle convention."""
    actions: list[int] = []
    n_pinned = len(sub.initial_vehicles)
    tail = len(routes)
    while tail > n_pinned and not routes[tail - 1]:
        tail -= 1
    for k in range(tail):
        actions.extend(routes[k])
        if k < tail - 1:
            actions.append(DEPOT)
    return actions


def replay(sub: SubProblem, actions: tuple[int, ...] | list[int]) -> RolloutState:
    """Run the full action sequence through step, returning the final state."""
    s = reset(sub)
    for a in actions:
        s = step(s, a)
    return s
