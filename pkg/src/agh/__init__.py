"""Ground-handling fleet routing: multi-fleet VRP with precedence levels.

The package models airport turnaround servicing as one vehicle-routing
problem per service fleet, chained by precedence: each fleet's sub-problem
is a capacitated VRP with time windows whose window starts propagate from
the completions of the previous level. It ships exact micro-scale oracles,
classical construction and improvement heuristics, an attention-based
policy trained by self-critical REINFORCE, a constraint checker with LP
export, and a rolling-horizon simulator for flights revealed over time.

Heavy optional machinery (the neural policy and training loop, which pull
in torch) lives in :mod:`agh.policy` and :mod:`agh.train`; import those
directly when needed.
"""

from .env import (
    DEPOT,
    EPS,
    RolloutState,
    SubProblem,
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
from .errors import (
    AghError,
    FormatError,
    InfeasibleError,
    InvalidActionError,
    SizeLimitError,
)
from .framework import SubSolver, build_subproblem, group_by_level, solve
from .heuristics import INSERTION_RULES, cws, insertion, nearest_neighbor
from .instgen import GenConfig, generate
from .metaheuristics import LnsParams, SaParams, lns, lns_sa, simulated_annealing
from .milp import build, check_solution, emit_lp, parse_lp
from .model import (
    Fleet,
    Flight,
    GlobalSolution,
    Instance,
    OperationSpec,
    Route,
    ValidationReport,
    from_json,
    global_cost,
    to_json,
    validate_instance,
)
from .oracle import exact_global, exact_subproblem, exhaustive_subproblem
from .realtime import ArrivalStream, make_stream, simulate

__version__ = "0.1.0"

__all__ = [
    "AghError",
    "ArrivalStream",
    "DEPOT",
    "EPS",
    "Fleet",
    "Flight",
    "FormatError",
    "GenConfig",
    "GlobalSolution",
    "INSERTION_RULES",
    "InfeasibleError",
    "Instance",
    "InvalidActionError",
    "LnsParams",
    "OperationSpec",
    "RolloutState",
    "Route",
    "SaParams",
    "SizeLimitError",
    "SubProblem",
    "SubSolver",
    "ValidationReport",
    "VehicleStart",
    "actions_from_routes",
    "build",
    "build_subproblem",
    "check_solution",
    "cws",
    "emit_lp",
    "exact_global",
    "exact_subproblem",
    "exhaustive_subproblem",
    "feasible_mask",
    "from_json",
    "generate",
    "global_cost",
    "group_by_level",
    "insertion",
    "lns",
    "lns_sa",
    "make_stream",
    "nearest_neighbor",
    "parse_lp",
    "replay",
    "reset",
    "routes_cost",
    "routes_from_actions",
    "schedule",
    "simulate",
    "simulated_annealing",
    "solve",
    "step",
    "to_json",
    "tour_cost",
    "validate_instance",
    "__version__",
]
