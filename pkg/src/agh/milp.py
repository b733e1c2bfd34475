"""Exact mixed-integer formulation, LP text emission, and solution checking.

Node indexing per fleet: 0 is the source depot, 1..n the flights, n+1 the
sink depot (same physical location as 0). Arcs into the source, arcs out of
the sink, and the empty tour arc source->sink are excluded outright, so the
"no such arc" constraints hold by construction.

Variables:
  x_f{op}_v{v}_{i}_{j}   binary, vehicle v of fleet op travels arc (i, j)
  T_f{op}_v{v}_i{i}      continuous, start of service of vehicle v at flight i

Constraint rows are tagged by family: serve-once ("eq2"), per-vehicle flow
conservation ("eq3"), fleet size ("eq4"), dispatch/return balance ("eq5"),
vehicle capacity ("eq7"), big-M time propagation ("eq8_lin"), and
precedence between operation levels ("eq10", conditioned on which vehicles
actually serve the flight). Time windows ("eq9") become variable bounds;
binaries ("eq11") and non-negativity ("eq12") live in the LP sections.

Time propagation rows are emitted for arcs whose head is a flight; the
return time to the sink is unconstrained (the sink carries no clock).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import framework
from .errors import FormatError
from .model import GlobalSolution, Instance, global_cost

BIG_M = 1_000_000.0
TOL = 1e-6

SEMANTICS = ("start_in_window", "complete_by_window")


@dataclass(frozen=True)
class Violation:
    equation: str
    message: str


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[Violation, ...]
    objective: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_equation(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for v in self.violations:
            counts[v.equation] = counts.get(v.equation, 0) + 1
        return counts


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[float, str], ...]
    sense: str  # "<=", ">=", "="
    rhs: float


@dataclass(frozen=True)
class MilpModel:
    objective: tuple[tuple[float, str], ...]
    constraints: tuple[Constraint, ...]
    bounds: tuple[tuple[str, float, float], ...]  # continuous vars
    binaries: tuple[str, ...]
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_binary(self) -> int:
        return len(self.binaries)

    @property
    def n_continuous(self) -> int:
        return len(self.bounds)


def _xname(op_id: int, v: int, i: int, j: int) -> str:
    return f"x_f{op_id}_v{v}_{i}_{j}"


def _tname(op_id: int, v: int, i: int) -> str:
    return f"T_f{op_id}_v{v}_i{i}"


def arcs(n: int) -> list[tuple[int, int]]:
    """All admissible arcs: sink has no out-arcs, source no in-arcs, no 0->sink."""
    sink = n + 1
    out: list[tuple[int, int]] = []
    for i in range(n + 1):  # source and flights
        for j in list(range(1, n + 1)) + [sink]:
            if j == i or (i == 0 and j == sink):
                continue
            out.append((i, j))
    return out


def _arc_cost(inst: Instance, i: int, j: int) -> float:
    n = inst.n
    a = 0 if i == n + 1 else i
    b = 0 if j == n + 1 else j
    return inst.cost(a, b)


def build(inst: Instance, semantics: str = "start_in_window") -> MilpModel:
    """Assemble the full model; every row is named after its family."""
    if semantics not in SEMANTICS:
        raise ValueError(f"unknown semantics {semantics!r}")
    n = inst.n
    sink = n + 1
    arc_list = arcs(n)
    objective: list[tuple[float, str]] = []
    constraints: list[Constraint] = []
    bounds: list[tuple[str, float, float]] = []
    binaries: list[str] = []

    groups = framework.group_by_level(inst.operations)
    for op in inst.operations:
        fleet = inst.fleet(op.op_id)
        V = fleet.max_vehicles
        for v in range(V):
            for (i, j) in arc_list:
                name = _xname(op.op_id, v, i, j)
                binaries.append(name)
                objective.append((_arc_cost(inst, i, j), name))
        # eq2: each flight serviced exactly once by this fleet
        for j in range(1, n + 1):
            terms = [
                (1.0, _xname(op.op_id, v, i, j))
                for v in range(V)
                for i in range(n + 1)
                if i != j
            ]
            constraints.append(Constraint(f"eq2_f{op.op_id}_j{j}", tuple(terms), "=", 1.0))
        # eq3: what enters a flight leaves it, per vehicle
        for v in range(V):
            for u in range(1, n + 1):
                terms = [(1.0, _xname(op.op_id, v, i, u)) for i in range(n + 1) if i != u]
                terms += [
                    (-1.0, _xname(op.op_id, v, u, j))
                    for j in list(range(1, n + 1)) + [sink]
                    if j != u
                ]
                constraints.append(
                    Constraint(f"eq3_f{op.op_id}_v{v}_u{u}", tuple(terms), "=", 0.0)
                )
        # eq4: at most V vehicles dispatched
        terms = [(1.0, _xname(op.op_id, v, 0, j)) for v in range(V) for j in range(1, n + 1)]
        constraints.append(Constraint(f"eq4_f{op.op_id}", tuple(terms), "<=", float(V)))
        # eq5: every dispatched vehicle returns
        terms = [(1.0, _xname(op.op_id, v, 0, j)) for v in range(V) for j in range(1, n + 1)]
        terms += [
            (-1.0, _xname(op.op_id, v, i, sink)) for v in range(V) for i in range(1, n + 1)
        ]
        constraints.append(Constraint(f"eq5_f{op.op_id}", tuple(terms), "=", 0.0))
        # eq7: vehicle capacity over served demand
        for v in range(V):
            terms = []
            for i in range(1, n + 1):
                d = float(inst.flight(i).demand(op.op_id))
                for j in list(range(1, n + 1)) + [sink]:
                    if j != i:
                        terms.append((d, _xname(op.op_id, v, i, j)))
            constraints.append(
                Constraint(f"eq7_f{op.op_id}_v{v}", tuple(terms), "<=", float(fleet.capacity))
            )
        # eq8 linearized: service chaining along chosen arcs (heads are flights)
        for v in range(V):
            for (i, j) in arc_list:
                if j == sink:
                    continue
                dur_i = 0.0 if i == 0 else op.duration(inst.flight(i).flight_type)
                t_ij = _arc_cost(inst, i, j) / fleet.speed
                terms = [(-1.0, _tname(op.op_id, v, j)), (BIG_M, _xname(op.op_id, v, i, j))]
                if i != 0:
                    terms.insert(0, (1.0, _tname(op.op_id, v, i)))
                constraints.append(
                    Constraint(
                        f"eq8_lin_f{op.op_id}_v{v}_{i}_{j}",
                        tuple(terms),
                        "<=",
                        BIG_M - dur_i - t_ij,
                    )
                )
        # eq9 + eq12: window bounds on start times
        for v in range(V):
            for i in range(1, n + 1):
                fl = inst.flight(i)
                a = framework.static_window_start(i, op.level, inst)
                b = framework.window_end(i, op.level, inst)
                if semantics == "complete_by_window":
                    b -= op.duration(fl.flight_type)
                bounds.append((_tname(op.op_id, v, i), a, b))

    # eq10: precedence between consecutive levels, active only for the
    # vehicles that actually serve the flight (big-M on service indicators)
    for lv in range(1, len(groups)):
        for op1 in groups[lv - 1]:
            for op2 in groups[lv]:
                V1 = inst.fleet(op1.op_id).max_vehicles
                V2 = inst.fleet(op2.op_id).max_vehicles
                for i in range(1, n + 1):
                    d1 = op1.duration(inst.flight(i).flight_type)
                    for v1 in range(V1):
                        for v2 in range(V2):
                            terms = [
                                (1.0, _tname(op2.op_id, v2, i)),
                                (-1.0, _tname(op1.op_id, v1, i)),
                            ]
                            terms += [
                                (-BIG_M, _xname(op1.op_id, v1, i, j))
                                for j in list(range(1, n + 1)) + [sink]
                                if j != i
                            ]
                            terms += [
                                (-BIG_M, _xname(op2.op_id, v2, i, j))
                                for j in list(range(1, n + 1)) + [sink]
                                if j != i
                            ]
                            constraints.append(
                                Constraint(
                                    f"eq10_f{op1.op_id}_{op2.op_id}_i{i}_v{v1}_{v2}",
                                    tuple(terms),
                                    ">=",
                                    d1 - 2.0 * BIG_M,
                                )
                            )

    meta = {
        "n": n,
        "semantics": semantics,
        "arcs": len(arc_list),
    }
    return MilpModel(
        objective=tuple(objective),
        constraints=tuple(constraints),
        bounds=tuple(bounds),
        binaries=tuple(binaries),
        meta=meta,
    )


def _num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _poly(terms: tuple[tuple[float, str], ...]) -> str:
    parts: list[str] = []
    for coef, var in terms:
        if coef < 0:
            parts.append(f"- {_num(-coef)} {var}")
        elif parts:
            parts.append(f"+ {_num(coef)} {var}")
        else:
            parts.append(f"{_num(coef)} {var}")
    return " ".join(parts) if parts else "0"


def emit_lp(model: MilpModel) -> str:
    """Deterministic LP-format text (Minimize / Subject To / Bounds / Binaries)."""
    lines: list[str] = ["Minimize", f" obj: {_poly(model.objective)}", "Subject To"]
    for c in model.constraints:
        lines.append(f" {c.name}: {_poly(c.terms)} {c.sense} {_num(c.rhs)}")
    lines.append("Bounds")
    for var, lo, hi in model.bounds:
        lines.append(f" {_num(lo)} <= {var} <= {_num(hi)}")
    lines.append("Binaries")
    for k in range(0, len(model.binaries), 8):
        lines.append(" " + " ".join(model.binaries[k : k + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def parse_lp(text: str) -> MilpModel:
    """Read back LP text produced by emit_lp (general enough for hand files)."""
    section = None
    objective: list[tuple[float, str]] = []
    constraints: list[Constraint] = []
    bounds: list[tuple[str, float, float]] = []
    binaries: list[str] = []
    pending: list[str] = []

    def flush_row(tokens: list[str], into_obj: bool) -> None:
        if not tokens:
            return
        name = None
        if tokens[0].endswith(":"):
            name = tokens[0][:-1]
            tokens = tokens[1:]
        elif len(tokens) > 1 and tokens[1] == ":":
            name = tokens[0]
            tokens = tokens[2:]
        sense = None
        rhs = 0.0
        for si, tok in enumerate(tokens):
            if tok in ("<=", ">=", "=", "<", ">"):
                sense = {"<": "<=", ">": ">="}.get(tok, tok)
                rhs = float(tokens[si + 1])
                tokens = tokens[:si]
                break
        terms: list[tuple[float, str]] = []
        sign = 1.0
        coef: float | None = None
        for tok in tokens:
            if tok == "+":
                sign = 1.0
            elif tok == "-":
                sign = -1.0
            else:
                try:
                    value = float(tok)
                except ValueError:
                    terms.append((sign * (1.0 if coef is None else coef), tok))
                    sign, coef = 1.0, None
                else:
                    coef = value
        if into_obj:
            objective.extend(terms)
        else:
            if sense is None:
                raise FormatError(f"constraint row without relation: {' '.join(tokens)}")
            constraints.append(Constraint(name or f"c{len(constraints)}", tuple(terms), sense, rhs))

    def end_pending(into_obj: bool) -> None:
        nonlocal pending
        if pending:
            flush_row(pending, into_obj)
            pending = []

    for raw in text.splitlines():
        line = raw.split("\\")[0].rstrip()
        if not line.strip():
            continue
        head = line.strip().lower()
        if head in ("minimize", "maximize", "subject to", "st", "s.t.", "bounds", "binaries", "binary", "general", "end"):
            end_pending(section == "obj")
            section = {
                "minimize": "obj",
                "maximize": "obj",
                "subject to": "cons",
                "st": "cons",
                "s.t.": "cons",
                "bounds": "bounds",
                "binaries": "bin",
                "binary": "bin",
                "general": "gen",
                "end": "end",
            }[head]
            continue
        tokens = line.replace(":", " : ").replace("<=", " <= ").replace(">=", " >= ").split()
        tokens = [t for t in tokens if t]
        # re-join "name :" into "name:" for flush_row
        if ":" in tokens:
            k = tokens.index(":")
            tokens = tokens[: k - 1] + [tokens[k - 1] + ":"] + tokens[k + 1 :]
        if section == "obj":
            if tokens and tokens[0].endswith(":") and pending:
                end_pending(True)
            pending.extend(tokens)
        elif section == "cons":
            if tokens and tokens[0].endswith(":") and pending:
                end_pending(False)
            pending.extend(tokens)
            if any(t in ("<=", ">=", "=") for t in pending):
                # rows end at their relation + rhs
                k = max(i for i, t in enumerate(pending) if t in ("<=", ">=", "="))
                if k + 1 < len(pending):
                    row, pending = pending[: k + 2], pending[k + 2 :]
                    flush_row(row, False)
        elif section == "bounds":
            if len(tokens) == 5 and tokens[1] == "<=" and tokens[3] == "<=":
                bounds.append((tokens[2], float(tokens[0]), float(tokens[4])))
            elif len(tokens) == 3 and tokens[1] in ("<=", ">="):
                if tokens[1] == "<=":
                    bounds.append((tokens[0], 0.0, float(tokens[2])))
                else:
                    bounds.append((tokens[0], float(tokens[2]), float("inf")))
            else:
                raise FormatError(f"unsupported bounds line: {line!r}")
        elif section == "bin":
            binaries.extend(tokens)
    end_pending(section == "obj")
    return MilpModel(
        objective=tuple(objective),
        constraints=tuple(constraints),
        bounds=tuple(bounds),
        binaries=tuple(binaries),
    )


def parse_solution_text(text: str) -> dict[str, float]:
    """Read 'var value' lines (comments with # allowed) from an external solver."""
    values: dict[str, float] = {}
    for raw in text.splitlines():
        line = raw.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"expected 'var value': {line!r}")
        try:
            values[parts[0]] = float(parts[1])
        except ValueError:
            raise FormatError(f"non-numeric value: {line!r}") from None
    return values


def assignment_to_solution(inst: Instance, values: dict[str, float]) -> GlobalSolution:
    """Rebuild routes and start times from variable values (x round to 0/1)."""
    from .model import Route

    n = inst.n
    sink = n + 1
    routes: list[Route] = []
    total = 0.0
    for op in inst.operations:
        V = inst.fleet(op.op_id).max_vehicles
        for v in range(V):
            succ: dict[int, int] = {}
            for (i, j) in arcs(n):
                if values.get(_xname(op.op_id, v, i, j), 0.0) > 0.5:
                    if i in succ:
                        raise FormatError(
                            f"vehicle {v} of fleet {op.op_id} leaves node {i} twice"
                        )
                    succ[i] = j
            if 0 not in succ:
                continue
            visits: list[int] = []
            node = succ[0]
            while node != sink:
                visits.append(node)
                if node not in succ:
                    raise FormatError(
                        f"vehicle {v} of fleet {op.op_id} strands at node {node}"
                    )
                node = succ[node]
                if len(visits) > n:
                    raise FormatError("cycle detected in arc assignment")
            starts = tuple(
                values.get(_tname(op.op_id, v, i), 0.0) for i in visits
            )
            routes.append(Route(op_id=op.op_id, visits=tuple(visits), start_times=starts))
            prev = 0
            for i in visits:
                total += inst.cost(prev, i)
                prev = i
            total += inst.cost(prev, 0)
    return GlobalSolution(routes=tuple(routes), objective=total)


def solution_to_assignment(inst: Instance, sol: GlobalSolution) -> dict[str, float]:
    """Chosen arcs to 1 and serving start times; absent variables are zero.

    Vehicles are numbered by route order within each fleet. Start times of
    vehicles that do not serve a flight are left out (they default to the
    window's lower bound, which satisfies their bounds trivially).
    """
    n = inst.n
    sink = n + 1
    values: dict[str, float] = {}
    counter: dict[int, int] = {}
    for r in sol.routes:
        v = counter.get(r.op_id, 0)
        counter[r.op_id] = v + 1
        prev = 0
        for fid, t in zip(r.visits, r.start_times):
            values[_xname(r.op_id, v, prev, fid)] = 1.0
            values[_tname(r.op_id, v, fid)] = t
            prev = fid
        values[_xname(r.op_id, v, prev, sink)] = 1.0
    return values


def check_solution(
    inst: Instance, sol: GlobalSolution, semantics: str = "complete_by_window"
) -> ConstraintReport:
    """Evaluate every constraint family on the solution; report violations.

    Flow conservation, the depot-arc exclusions, binary domains, and
    non-negativity hold by construction of the induced assignment for any
    structurally valid route set, so they can never fire here; the remaining
    families are evaluated directly.
    """
    if semantics not in SEMANTICS:
        raise ValueError(f"unknown semantics {semantics!r}")
    violations: list[Violation] = []
    by_op: dict[int, list] = {op.op_id: [] for op in inst.operations}
    for r in sol.routes:
        if r.op_id not in by_op:
            violations.append(Violation("structure", f"unknown op {r.op_id} in route"))
            continue
        by_op[r.op_id].append(r)

    starts: dict[tuple[int, int], float] = {}  # (flight, op) -> service start
    for op in inst.operations:
        fleet = inst.fleet(op.op_id)
        routes = by_op[op.op_id]
        if len(routes) > fleet.max_vehicles:
            violations.append(
                Violation(
                    "eq4",
                    f"fleet {op.op_id} uses {len(routes)} vehicles, "
                    f"limit {fleet.max_vehicles}",
                )
            )
        served: dict[int, int] = {}
        for r in routes:
            for fid in r.visits:
                served[fid] = served.get(fid, 0) + 1
        for fl in inst.flights:
            c = served.get(fl.flight_id, 0)
            if c != 1:
                violations.append(
                    Violation(
                        "eq2",
                        f"op {op.op_id} serves flight {fl.flight_id} {c} times",
                    )
                )
        for k, r in enumerate(routes):
            if len(r.visits) != len(r.start_times):
                violations.append(
                    Violation("structure", f"op {op.op_id} route {k}: length mismatch")
                )
                continue
            load = 0.0
            clock = 0.0
            prev = 0
            for fid, t in zip(r.visits, r.start_times):
                if not (1 <= fid <= inst.n):
                    violations.append(
                        Violation("structure", f"op {op.op_id}: unknown flight {fid}")
                    )
                    continue
                fl = inst.flight(fid)
                dur = op.duration(fl.flight_type)
                load += fl.demand(op.op_id)
                a = framework.static_window_start(fid, op.level, inst)
                b = framework.window_end(fid, op.level, inst)
                if t < -TOL:
                    violations.append(
                        Violation("eq12", f"op {op.op_id} flight {fid}: start {t} < 0")
                    )
                if t < a - TOL:
                    violations.append(
                        Violation(
                            "eq9",
                            f"op {op.op_id} flight {fid}: start {t} before window {a}",
                        )
                    )
                limit = b if semantics == "start_in_window" else b - dur
                if t > limit + TOL:
                    violations.append(
                        Violation(
                            "eq9",
                            f"op {op.op_id} flight {fid}: start {t} after latest {limit}"
                            f" ({semantics})",
                        )
                    )
                travel = inst.cost(prev, fid) / fleet.speed
                if t + TOL < clock + travel:
                    violations.append(
                        Violation(
                            "eq8",
                            f"op {op.op_id} flight {fid}: start {t} before reachable "
                            f"{clock + travel}",
                        )
                    )
                if (fid, op.op_id) in starts:
                    pass  # duplicate already reported under eq2
                starts[(fid, op.op_id)] = t
                clock = t + dur
                prev = fid
            if load > fleet.capacity + TOL:
                violations.append(
                    Violation(
                        "eq7",
                        f"op {op.op_id} route {k}: load {load} exceeds {fleet.capacity}",
                    )
                )

    groups = framework.group_by_level(inst.operations)
    for lv in range(1, len(groups)):
        for op1 in groups[lv - 1]:
            for op2 in groups[lv]:
                for fl in inst.flights:
                    k1 = (fl.flight_id, op1.op_id)
                    k2 = (fl.flight_id, op2.op_id)
                    if k1 not in starts or k2 not in starts:
                        continue  # missing service already reported under eq2
                    need = starts[k1] + op1.duration(fl.flight_type)
                    if starts[k2] + TOL < need:
                        violations.append(
                            Violation(
                                "eq10",
                                f"flight {fl.flight_id}: op {op2.op_id} starts "
                                f"{starts[k2]} before op {op1.op_id} completes {need}",
                            )
                        )

    try:
        objective = global_cost(inst, sol)
    except Exception as exc:  # structural issues already reported
        violations.append(Violation("structure", str(exc)))
        objective = float("nan")
    else:
        if abs(objective - sol.objective) > max(TOL, TOL * abs(objective)):
            violations.append(
                Violation(
                    "objective",
                    f"stored objective {sol.objective} != recomputed {objective}",
                )
            )
    return ConstraintReport(violations=tuple(violations), objective=objective)
