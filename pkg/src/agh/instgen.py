"""Seeded random generation of ground-handling instances.

The layout is synthetic: a depot at the origin and gates arranged along
terminal piers, spaced tens of meters apart so typical inter-gate distances
are a few hundred meters and depot-to-gate travel takes a handful of minutes
at the default speed. Only the metric structure matters to the solvers.

Turnarounds (30/34/33 minutes by flight type) comfortably exceed the summed
per-level duration maxima of the default operation table plus worst-case
depot travel, so every generated flight is individually servable by a fresh
vehicle; the masking rules rely on this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AghError, FormatError
from .model import Fleet, Flight, Instance, OperationSpec

TURNAROUND_BY_TYPE = (30.0, 34.0, 33.0)
N_FLIGHT_TYPES = 3
DEFAULT_SPEED = 400.0

# Hour-of-day weights for the bimodal "busy airport" arrival histogram.
EMPIRICAL_HOUR_WEIGHTS = (
    2, 1, 1, 1, 1, 2, 5, 7, 8, 7, 6, 5, 6, 7, 7, 6, 6, 7, 8, 7, 5, 4, 3, 2,
)

# (name, level, minutes per flight type)
DEFAULT_OPERATION_TABLE = (
    ("disembarkation", 0, (5.0, 6.0, 5.0)),
    ("water_supply", 0, (3.0, 4.0, 4.0)),
    ("baggage_unloading", 0, (4.0, 5.0, 5.0)),
    ("fueling", 1, (6.0, 6.0, 6.0)),
    ("catering", 1, (4.0, 5.0, 5.0)),
    ("cleaning", 1, (4.0, 4.0, 4.0)),
    ("lavatory_service", 1, (3.0, 3.0, 3.0)),
    ("baggage_loading", 2, (4.0, 5.0, 5.0)),
    ("boarding", 2, (5.0, 6.0, 6.0)),
    ("pushback", 3, (3.0, 3.0, 3.0)),
)

DEMAND_DISTS = ("uniform", "gaussian", "poisson")
ARRIVAL_DISTS = ("empirical", "gaussian", "poisson")


def default_operations(table: tuple = DEFAULT_OPERATION_TABLE) -> tuple[OperationSpec, ...]:
    """The ten standard turnaround operations over four precedence levels."""
    return tuple(
        OperationSpec(op_id=k + 1, name=name, level=level, duration_by_flight_type=durs)
        for k, (name, level, durs) in enumerate(table)
    )


def default_capacity(n_flights: int) -> int:
    """Fleet capacity grows with instance size."""
    for bound, cap in ((20, 30), (50, 40), (100, 50), (200, 60)):
        if n_flights <= bound:
            return cap
    return 70


@dataclass(frozen=True)
class GenConfig:
    n_flights: int
    seed: int
    n_gates: int = 91
    n_terminals: int = 3
    demand_dist: str = "uniform"
    arrival_dist: str = "empirical"
    capacity: int | None = None
    max_vehicles: int | None = None
    speed: float = DEFAULT_SPEED
    operations: tuple[OperationSpec, ...] = field(default_factory=default_operations)
    arrival_hour_weights: tuple[float, ...] = EMPIRICAL_HOUR_WEIGHTS

    def validate(self) -> None:
        if self.n_flights < 0:
            raise AghError("n_flights must be >= 0")
        if self.n_gates < 1:
            raise AghError("n_gates must be >= 1")
        if self.n_terminals < 1:
            raise AghError("n_terminals must be >= 1")
        if self.demand_dist not in DEMAND_DISTS:
            raise AghError(f"demand_dist must be one of {DEMAND_DISTS}")
        if self.arrival_dist not in ARRIVAL_DISTS:
            raise AghError(f"arrival_dist must be one of {ARRIVAL_DISTS}")
        if self.speed <= 0:
            raise AghError("speed must be > 0")
        if len(self.arrival_hour_weights) != 24 or min(self.arrival_hour_weights) < 0:
            raise AghError("arrival_hour_weights must be 24 non-negative values")


def gate_layout(n_gates: int, n_terminals: int) -> tuple[tuple[float, float], ...]:
    """Deterministic apron geometry: depot at the origin, gates along piers.

    Coordinates are meters. Gates sit 50 m apart along each terminal pier,
    piers 500 m apart starting 600 m from the depot.
    """
    positions: list[tuple[float, float]] = [(0.0, 0.0)]
    per_terminal = math.ceil(n_gates / n_terminals)
    for g in range(n_gates):
        t, k = divmod(g, per_terminal)
        positions.append((150.0 + 50.0 * k, 600.0 + 500.0 * t))
    return tuple(positions)


def _hour_weights(cfg: GenConfig) -> np.ndarray:
    if cfg.arrival_dist == "empirical":
        w = np.asarray(cfg.arrival_hour_weights, dtype=float)
    elif cfg.arrival_dist == "gaussian":
        hours = np.arange(24, dtype=float)
        w = np.exp(-0.5 * hours**2)
    else:  # poisson, rate 4
        lam = 4.0
        hours = np.arange(24)
        w = np.array([lam**h * math.exp(-lam) / math.factorial(h) for h in hours])
    total = w.sum()
    if total <= 0:
        raise AghError("arrival hour weights sum to zero")
    return w / total


def sample_arrival(cfg: GenConfig, rng: np.random.Generator) -> float:
    """Minutes since midnight: an hour bucket, then uniform within the hour."""
    hour = int(rng.choice(24, p=_hour_weights(cfg)))
    return 60.0 * hour + 60.0 * float(rng.random())


def sample_demand(dist: str, rng: np.random.Generator, capacity: int = 10**9) -> int:
    """An integer demand >= 1 (and never above the fleet capacity)."""
    if dist == "uniform":
        value = int(rng.integers(1, 10))
    elif dist == "gaussian":
        value = int(round(float(rng.normal(5.0, math.sqrt(2.5)))))
    elif dist == "poisson":
        value = int(rng.poisson(5.0))
    else:
        raise AghError(f"unknown demand distribution {dist!r}")
    return max(1, min(value, capacity))


def generate(cfg: GenConfig) -> Instance:
    """Deterministic in cfg (seed included): same config, same instance bytes.

    Draw order per flight: type, gate, arrival hour, arrival minute, then one
    demand per operation in op_id order.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    ops = cfg.operations
    n_types = min(len(op.duration_by_flight_type) for op in ops) if ops else N_FLIGHT_TYPES
    capacity = cfg.capacity if cfg.capacity is not None else default_capacity(cfg.n_flights)
    max_vehicles = cfg.max_vehicles if cfg.max_vehicles is not None else max(cfg.n_flights, 1)
    hour_w = _hour_weights(cfg)

    flights = []
    for fid in range(1, cfg.n_flights + 1):
        ftype = int(rng.integers(0, min(n_types, N_FLIGHT_TYPES)))
        gate = int(rng.integers(1, cfg.n_gates + 1))
        hour = int(rng.choice(24, p=hour_w))
        arrival = 60.0 * hour + 60.0 * float(rng.random())
        departure = arrival + TURNAROUND_BY_TYPE[ftype]
        demands = tuple(sample_demand(cfg.demand_dist, rng, capacity) for _ in ops)
        flights.append(
            Flight(
                flight_id=fid,
                gate_id=gate,
                flight_type=ftype,
                arrival=arrival,
                departure=departure,
                demand_by_op=demands,
            )
        )

    fleets = tuple(
        Fleet(op_id=op.op_id, capacity=capacity, speed=cfg.speed, max_vehicles=max_vehicles)
        for op in ops
    )
    return Instance(
        flights=tuple(flights),
        operations=ops,
        fleets=fleets,
        gate_positions=gate_layout(cfg.n_gates, cfg.n_terminals),
    )


def operations_from_config(text: str) -> tuple[OperationSpec, ...]:
    """Parse an operation table from ``name level d0 d1 d2`` lines.

    Blank lines and ``#`` comments are ignored. Levels must already be
    contiguous from 0 in the file.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise FormatError(f"operation table line {lineno}: need name, level, durations")
        try:
            level = int(parts[1])
            durs = tuple(float(x) for x in parts[2:])
        except ValueError as exc:
            raise FormatError(f"operation table line {lineno}: {exc}") from exc
        rows.append((parts[0], level, durs))
    if not rows:
        raise FormatError("operation table is empty")
    return default_operations(tuple(rows))


def scaled_config(cfg: GenConfig, n_flights: int, seed: int) -> GenConfig:
    """The same generation law at a different size/seed."""
    return replace(cfg, n_flights=n_flights, seed=seed)
