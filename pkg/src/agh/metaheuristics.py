"""Improvement baselines over route sets: simulated annealing and LNS.

All searches start from the nearest-neighbor construction, keep the incumbent
feasible at every step (candidate moves are replayed before acceptance), and
return the best solution seen. Stopping is iteration-bounded by default so
runs are reproducible; wall-clock limits are optional and checked
cooperatively between candidate evaluations.

Random-number use per iteration is fixed (documented in each solver), so a
fixed seed yields an identical trajectory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .env import SubProblem, actions_from_routes, routes_cost, routes_from_actions, schedule, vehicle_for_route
from .errors import InfeasibleError
from .heuristics import best_insertion, nearest_neighbor, open_route, route_cost


@dataclass(frozen=True)
class SaParams:
    """Swap-based annealing: sample a neighborhood, accept by Metropolis."""

    neighborhood_size: int = 500
    max_iter: int = 100
    t0: float = 200.0
    cooling: float = 0.9
    time_limit: float | None = None  # seconds

    def __post_init__(self) -> None:
        if min(self.neighborhood_size, self.max_iter) <= 0 or self.t0 <= 0:
            raise ValueError("neighborhood_size, max_iter and t0 must be positive")
        if not (0.0 < self.cooling < 1.0):
            raise ValueError("cooling must lie in (0, 1)")


@dataclass(frozen=True)
class LnsParams:
    """Destroy a random customer subset, repair by cheapest insertion."""

    destroy_fraction: float = 0.5
    max_iter: int = 100
    iter_time_limit: float | None = None
    total_time_limit: float | None = None
    acceptance: str = "greedy"  # or "metropolis"
    t0: float = 200.0
    cooling: float = 0.95
    cool_every: int = 10

    def __post_init__(self) -> None:
        if not (0.0 < self.destroy_fraction < 1.0):
            raise ValueError("destroy_fraction must lie in (0, 1)")
        if self.max_iter < 0 or self.t0 <= 0 or self.cool_every <= 0:
            raise ValueError("max_iter must be >= 0; t0 and cool_every positive")
        if self.acceptance not in ("greedy", "metropolis"):
            raise ValueError(f"unknown acceptance {self.acceptance!r}")
        if not (0.0 < self.cooling < 1.0):
            raise ValueError("cooling must lie in (0, 1)")


def _position_index(routes: list[list[int]]) -> dict[int, tuple[int, int]]:
    where: dict[int, tuple[int, int]] = {}
    for k, visits in enumerate(routes):
        for idx, c in enumerate(visits):
            where[c] = (k, idx)
    return where


def _swap_delta(
    sub: SubProblem, routes: list[list[int]], where: dict[int, tuple[int, int]], c1: int, c2: int
) -> float | None:
    """Cost change of exchanging two customers, or None if the swap is infeasible."""
    (k1, i1), (k2, i2) = where[c1], where[c2]
    if k1 == k2:
        visits = routes[k1][:]
        visits[i1], visits[i2] = visits[i2], visits[i1]
        if schedule(sub, visits, vehicle_for_route(sub, k1)) is None:
            return None
        return route_cost(sub, visits, k1) - route_cost(sub, routes[k1], k1)
    v1, v2 = routes[k1][:], routes[k2][:]
    v1[i1], v2[i2] = c2, c1
    if schedule(sub, v1, vehicle_for_route(sub, k1)) is None:
        return None
    if schedule(sub, v2, vehicle_for_route(sub, k2)) is None:
        return None
    return (
        route_cost(sub, v1, k1)
        + route_cost(sub, v2, k2)
        - route_cost(sub, routes[k1], k1)
        - route_cost(sub, routes[k2], k2)
    )


def _apply_swap(routes: list[list[int]], where: dict[int, tuple[int, int]], c1: int, c2: int) -> None:
    (k1, i1), (k2, i2) = where[c1], where[c2]
    routes[k1][i1], routes[k2][i2] = c2, c1


def simulated_annealing(
    sub: SubProblem, p: SaParams = SaParams(), seed: int = 0
) -> tuple[int, ...]:
    """Anneal over customer swaps starting from nearest neighbor.

    Each iteration draws customer pairs in a random order, keeps the first
    ``neighborhood_size`` feasible swaps, and offers the best of them to the
    Metropolis rule (always take improvements, otherwise accept with
    probability exp(-delta/T)); T is multiplied by ``cooling`` afterwards.
    Per-iteration randomness: one pair-order permutation, then one uniform
    draw only when the best swap worsens the incumbent.
    """
    rng = np.random.default_rng(seed)
    routes = routes_from_actions(sub, nearest_neighbor(sub))
    best_routes = [r[:] for r in routes]
    best_cost = cur_cost = routes_cost(sub, routes)
    deadline = None if p.time_limit is None else time.monotonic() + p.time_limit
    all_pairs = [
        (c1, c2) for c1 in range(1, sub.n + 1) for c2 in range(c1 + 1, sub.n + 1)
    ]
    if not all_pairs:
        return tuple(actions_from_routes(sub, best_routes))
    T = p.t0
    for _ in range(p.max_iter):
        if deadline is not None and time.monotonic() > deadline:
            break
        where = _position_index(routes)
        candidates: list[tuple[float, int, int, int]] = []
        for order_idx in rng.permutation(len(all_pairs)):
            if len(candidates) >= p.neighborhood_size:
                break
            if deadline is not None and time.monotonic() > deadline:
                break
            c1, c2 = all_pairs[order_idx]
            delta = _swap_delta(sub, routes, where, c1, c2)
            if delta is not None:
                candidates.append((delta, len(candidates), c1, c2))
        if not candidates:
            break  # state unchanged, no later iteration can differ
        delta, _, c1, c2 = min(candidates)
        accept = delta <= 0 or rng.random() < math.exp(-delta / T)
        if accept:
            _apply_swap(routes, where, c1, c2)
            cur_cost = routes_cost(sub, routes)
            if cur_cost < best_cost:
                best_cost = cur_cost
                best_routes = [r[:] for r in routes]
        T *= p.cooling
    return tuple(actions_from_routes(sub, best_routes))


def _destroyed(
    sub: SubProblem, routes: list[list[int]], removed: set[int]
) -> list[list[int]]:
    n_pinned = len(sub.initial_vehicles)
    out: list[list[int]] = []
    for k, visits in enumerate(routes):
        kept = [c for c in visits if c not in removed]
        if kept or k < n_pinned:
            out.append(kept)
    return out


def lns(sub: SubProblem, p: LnsParams = LnsParams(), seed: int = 0) -> tuple[int, ...]:
    """Large-neighborhood search: remove a random block, reinsert greedily.

    Per iteration: remove ceil(destroy_fraction * n) customers (a slice of a
    random permutation), reinsert them in a fresh random order, each at its
    cheapest feasible position (opening a new vehicle when nothing fits).
    Greedy acceptance keeps strictly better candidates; the metropolis
    variant accepts worse ones with probability exp(-delta/T) and cools T by
    ``cooling`` every ``cool_every`` iterations. Per-iteration randomness:
    two permutations, then one uniform draw for a worsening metropolis offer.
    """
    rng = np.random.default_rng(seed)
    routes = routes_from_actions(sub, nearest_neighbor(sub))
    best_routes = [r[:] for r in routes]
    best_cost = cur_cost = routes_cost(sub, routes)
    n = sub.n
    if n == 0:
        return tuple(actions_from_routes(sub, best_routes))
    k_remove = math.ceil(p.destroy_fraction * n)
    t_end = None if p.total_time_limit is None else time.monotonic() + p.total_time_limit
    T = p.t0
    for it in range(p.max_iter):
        if t_end is not None and time.monotonic() > t_end:
            break
        iter_end = (
            None if p.iter_time_limit is None else time.monotonic() + p.iter_time_limit
        )
        removed = rng.permutation(np.arange(1, n + 1))[:k_remove]
        order = rng.permutation(removed)
        cand = _destroyed(sub, routes, set(int(c) for c in removed))
        failed = False
        for c in order:
            if iter_end is not None and time.monotonic() > iter_end:
                failed = True
                break
            c = int(c)
            found = best_insertion(sub, cand, c)
            if found is None:
                try:
                    open_route(sub, cand, c)
                except InfeasibleError:
                    failed = True
                    break
            else:
                k, pos, _ = found
                cand[k].insert(pos, c)
        if not failed:
            cand_cost = routes_cost(sub, cand)
            delta = cand_cost - cur_cost
            if p.acceptance == "greedy":
                accept = delta < 0
            else:
                accept = delta <= 0 or rng.random() < math.exp(-delta / T)
            if accept:
                routes, cur_cost = cand, cand_cost
                if cur_cost < best_cost:
                    best_cost = cur_cost
                    best_routes = [r[:] for r in routes]
        if p.acceptance == "metropolis" and (it + 1) % p.cool_every == 0:
            T *= p.cooling
    return tuple(actions_from_routes(sub, best_routes))


def lns_sa(sub: SubProblem, p: LnsParams = LnsParams(), seed: int = 0) -> tuple[int, ...]:
    """LNS with the Metropolis acceptance rule (annealed temperature)."""
    return lns(sub, replace(p, acceptance="metropolis"), seed)
