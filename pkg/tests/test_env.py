"""Episode mechanics: masking, transitions, costs, and route conversions."""

from __future__ import annotations

import numpy as np
import pytest

from agh import env
from agh.env import (
    DEPOT,
    VehicleStart,
    actions_from_routes,
    feasible_mask,
    replay,
    reset,
    routes_cost,
    routes_from_actions,
    schedule,
    step,
    tour_cost,
)
from agh.errors import InfeasibleError, InvalidActionError
from agh.framework import build_subproblem, group_by_level

from conftest import full_instance, line_dist, make_sub


def random_rollout(sub, rng) -> tuple[int, ...]:
    s = reset(sub)
    while not s.done:
        mask = feasible_mask(s)
        choices = np.flatnonzero(mask)
        s = step(s, int(rng.choice(choices)))
    return s.partial


def test_reset_starts_fresh_at_depot(sub3):
    s = reset(sub3)
    assert s.partial == ()
    assert s.last_node == DEPOT
    assert s.clock == 0.0
    assert s.remaining_capacity == 1.0
    assert not s.done and s.n_served == 0


def test_depot_masked_while_flights_feasible(sub3):
    s = reset(sub3)
    mask = feasible_mask(s)
    assert not mask[DEPOT]  # depot-to-depot no-ops are forbidden
    assert mask[1:].all()


def test_step_clock_waits_for_window_opening():
    sub = make_sub(2, window_start=(10.0, 0.0), duration=(2.0, 2.0))
    s = step(reset(sub), 1)
    # Travel from depot to node 1 takes 1 time unit; service waits until 10.
    assert s.clock == 10.0 + 2.0
    assert s.served == (True, False)
    assert s.last_node == 1


def test_step_clock_travel_bound():
    sub = make_sub(3)
    s = step(reset(sub), 3)
    assert s.clock == pytest.approx(3.0 + 1.0)  # travel 3, duration 1
    s = step(s, 1)
    assert s.clock == pytest.approx(4.0 + 2.0 + 1.0)  # back from x=3 to x=1


def test_capacity_masks_and_depot_reset():
    sub = make_sub(3, capacity=2, demand=(1, 1, 1))
    s = step(step(reset(sub), 1), 2)
    mask = feasible_mask(s)
    assert not mask[3]  # no capacity left for the third flight
    assert mask[DEPOT]
    s = step(s, DEPOT)
    assert s.remaining_capacity == 1.0  # fresh vehicle
    assert feasible_mask(s)[3]
    s = step(s, 3)
    assert s.done


def test_window_closing_masks_flight():
    sub = make_sub(2, window_end=(3.0, 1000.0), duration=(2.0, 2.0))
    s = step(reset(sub), 2)  # travel 2, finish at 4
    mask = feasible_mask(s)
    # Reaching node 1 from node 2 takes 1; start 5, completion 7 > 3.
    assert not mask[1]
    assert mask[DEPOT]
    s = step(s, DEPOT)
    # A fresh vehicle arrives at 1, completes at 3 == window end: feasible.
    assert feasible_mask(s)[1]
    s = step(s, 1)
    assert s.clock == pytest.approx(3.0)


def test_masked_action_raises(sub3):
    s = reset(sub3)
    with pytest.raises(InvalidActionError):
        step(s, DEPOT)
    with pytest.raises(InvalidActionError):
        step(s, 5)


def test_unservable_flight_raises_dead_end():
    sub = make_sub(2, window_end=(0.5, 1000.0), duration=(2.0, 2.0))
    # Flight 1 can never complete by 0.5, not even by a fresh depot vehicle,
    # but the dead end is only certain once a fresh vehicle fails too.
    s = step(step(reset(sub), 2), DEPOT)
    with pytest.raises(InfeasibleError):
        feasible_mask(s)


def test_empty_window_rejected_at_construction():
    with pytest.raises(InfeasibleError):
        make_sub(2, window_start=(10.0, 0.0), window_end=(5.0, 1000.0))


def test_demand_normalization_enforced():
    with pytest.raises(InfeasibleError):
        make_sub(2, demand=(11, 1), capacity=10)  # demand above capacity
    with pytest.raises(InfeasibleError):
        make_sub(2, demand=(0, 1), capacity=10)  # zero demand


def test_tour_cost_hand_case():
    sub = make_sub(3)
    # 0->1->2->3->0: 1 + 1 + 1 + 3 = 6.
    assert tour_cost(sub, (1, 2, 3)) == pytest.approx(6.0)
    # 0->1->0 | 0->2->3->0: 2 + (2 + 1 + 3) = 8.
    assert tour_cost(sub, (1, DEPOT, 2, 3)) == pytest.approx(8.0)


def test_tour_cost_matches_replayed_distance_fuzz():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(2, 7))
        sub = make_sub(n, capacity=4, demand=tuple(int(rng.integers(1, 4)) for _ in range(n)))
        actions = random_rollout(sub, rng)
        routes = routes_from_actions(sub, actions)
        assert tour_cost(sub, actions) == pytest.approx(routes_cost(sub, routes))


def test_routes_actions_round_trip_fuzz():
    rng = np.random.default_rng(1)
    for trial in range(30):
        n = int(rng.integers(2, 7))
        sub = make_sub(n, capacity=3, demand=tuple(int(rng.integers(1, 3)) for _ in range(n)))
        actions = random_rollout(sub, rng)
        routes = routes_from_actions(sub, actions)
        assert tuple(actions_from_routes(sub, routes)) == tuple(actions)
        served = sorted(v for r in routes for v in r)
        assert served == list(range(1, n + 1))


def test_replay_reaches_same_state_as_manual_steps(sub3):
    s = reset(sub3)
    for a in (2, DEPOT, 1, 3):
        s = step(s, a)
    r = replay(sub3, (2, DEPOT, 1, 3))
    assert r == s
    assert r.done


def test_schedule_matches_replay_starts():
    sub = make_sub(3, window_start=(5.0, 0.0, 0.0), duration=(2.0, 3.0, 1.0))
    starts = schedule(sub, [1, 2, 3])
    s = reset(sub)
    expected = []
    for a in (1, 2, 3):
        arrive = s.clock + s.travel_row[a]
        expected.append(max(arrive, sub.window_start[a - 1]))
        s = step(s, a)
    assert starts == pytest.approx(expected)


def test_schedule_rejects_infeasible_sequences():
    sub = make_sub(2, capacity=2, demand=(2, 2))
    assert schedule(sub, [1, 2]) is None  # capacity
    tight = make_sub(2, window_end=(3.0, 3.0), duration=(2.0, 2.0))
    assert schedule(tight, [2, 1]) is None  # window


def test_resumed_vehicle_can_retire_immediately():
    v = VehicleStart(
        ready_time=0.0,
        capacity=0.5,
        travel_row=(2.0, 1.0, 3.0),
        dist_row=(2.0, 1.0, 3.0),
    )
    sub = make_sub(2, initial_vehicles=(v,))
    s = reset(sub)
    assert s.last_node == -1
    assert s.remaining_capacity == 0.5
    mask = feasible_mask(s)
    assert mask[DEPOT]  # retiring mid-route is always allowed
    assert mask[1:].all()


def test_resumed_vehicle_ready_time_and_rows():
    v = VehicleStart(
        ready_time=7.0,
        capacity=1.0,
        travel_row=(2.0, 1.0, 3.0),
        dist_row=(20.0, 10.0, 30.0),
    )
    sub = make_sub(2, initial_vehicles=(v,))
    s = step(reset(sub), 1)
    assert s.clock == pytest.approx(7.0 + 1.0 + 1.0)  # ready + travel + duration
    # Retiring now pays the stored distance home for the leg already out.
    assert tour_cost(sub, (1, DEPOT, 2)) == pytest.approx(
        10.0 + line_dist(2)[1, 0] + 2.0 + 2.0
    )


def test_unused_resumed_vehicles_pay_way_home():
    vs = tuple(
        VehicleStart(ready_time=0.0, capacity=1.0, travel_row=(d, d, d), dist_row=(d, d, d))
        for d in (5.0, 7.0)
    )
    sub = make_sub(2, initial_vehicles=vs)
    # First resumed vehicle serves everything; second still walks home (7).
    assert tour_cost(sub, (1, 2)) == pytest.approx(5.0 + 1.0 + 2.0 + 7.0)


def test_pinned_routes_convention():
    vs = tuple(
        VehicleStart(ready_time=0.0, capacity=1.0, travel_row=(1.0,) * 4, dist_row=(1.0,) * 4)
        for _ in range(2)
    )
    sub = make_sub(3, initial_vehicles=vs)
    routes = routes_from_actions(sub, (DEPOT, 1, 2, 3))
    assert routes == [[], [1, 2, 3]]
    assert actions_from_routes(sub, [[], [1, 2, 3]]) == [DEPOT, 1, 2, 3]
    # Fresh-vehicle routes follow the pinned slots.
    routes = routes_from_actions(sub, (DEPOT, DEPOT, 1, 2, 3))
    assert routes == [[], [], [1, 2, 3]]


def test_build_subproblem_normalizes_demand():
    inst = full_instance(5, seed=2)
    op = group_by_level(inst.operations)[0][0]
    sub = build_subproblem(inst, op, {})
    fleet = inst.fleet(op.op_id)
    for j, fid in enumerate(sub.flight_ids):
        assert sub.demand[j] == inst.flight(fid).demand(op.op_id) / fleet.capacity
        assert 0.0 < sub.demand[j] <= 1.0
    assert sub.dist.shape == (6, 6)
    assert sub.travel == pytest.approx(sub.dist / fleet.speed)
