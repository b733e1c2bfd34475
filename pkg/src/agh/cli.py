"""Command-line surface: generate, solve, train, benchmark, simulate, verify.

Global flags come before the subcommand: ``--seed`` feeds every random
draw, ``--deterministic`` forces single-threaded execution and suppresses
wall-clock fields so reruns are byte-identical, ``--threads`` sizes the
benchmark worker pool and the tensor backend.

Exit codes: 0 on full success, 1 on errors (bad input, solver failure,
failed check), 2 when a benchmark completes but recorded solver failures.
"""

from __future__ import annotations

import shlex
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import framework, heuristics, metaheuristics, milp, oracle, realtime, report
from .errors import AghError
from .instgen import GenConfig, generate
from .metaheuristics import LnsParams, SaParams
from .model import (
    GlobalSolution,
    Instance,
    from_json,
    to_json,
)

SOLVER_NAMES = (
    "nn",
    "insertion_random",
    "insertion_nearest",
    "insertion_farthest",
    "cws",
    "sa",
    "lns",
    "lns_sa",
    "oracle",
    "policy",
)


@dataclass
class CliState:
    seed: int
    deterministic: bool
    threads: int


def child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _load_instance(path) -> Instance:
    obj = from_json(Path(path).read_text())
    if not isinstance(obj, Instance):
        raise AghError(f"{path}: not an instance file")
    return obj


def _load_solution(path) -> GlobalSolution:
    obj = from_json(Path(path).read_text())
    if not isinstance(obj, GlobalSolution):
        raise AghError(f"{path}: not a solution file")
    return obj


def make_solver(
    name: str,
    seed: int,
    budget: float | None = None,
    params: str | None = None,
    decode: str = "greedy",
    samples: int = 128,
) -> framework.SubSolver:
    """Bind a named sub-solver; metaheuristics get the time budget, the
    policy gets its parameter file and decode mode."""
    if name == "nn":
        return heuristics.nearest_neighbor
    if name.startswith("insertion_"):
        rule = name.removeprefix("insertion_")
        if rule not in heuristics.INSERTION_RULES:
            raise AghError(f"unknown insertion rule {rule!r}")
        return lambda sub: heuristics.insertion(sub, rule, seed)
    if name == "cws":
        return heuristics.cws
    if name == "sa":
        p = SaParams(time_limit=budget)
        return lambda sub: metaheuristics.simulated_annealing(sub, p, seed)
    if name == "lns":
        p = LnsParams(total_time_limit=budget)
        return lambda sub: metaheuristics.lns(sub, p, seed)
    if name == "lns_sa":
        p = LnsParams(total_time_limit=budget)
        return lambda sub: metaheuristics.lns_sa(sub, p, seed)
    if name == "oracle":
        return lambda sub: oracle.exact_subproblem(sub)[0]
    if name == "policy":
        from . import policy as pol

        if params is None:
            raise AghError("--params is required for the policy solver")
        net = pol.load_params(params)
        if decode == "best":
            return lambda sub: pol.sample_best(net, sub, samples, seed)[0]
        return pol.solver(net, mode=decode, seed=seed)
    raise AghError(f"unknown solver {name!r}; choose from {', '.join(SOLVER_NAMES)}")


def _handle(fn):
    """Convert domain errors into clean CLI failures."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AghError as exc:
            raise click.ClickException(str(exc)) from exc
        except OSError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Master random seed.")
@click.option(
    "--deterministic",
    is_flag=True,
    help="Single thread, no wall-clock output: reruns are byte-identical.",
)
@click.option("--threads", type=int, default=1, show_default=True)
@click.pass_context
def main(ctx, seed: int, deterministic: bool, threads: int) -> None:
    """Ground-handling fleet routing: instances, solvers, training, checks."""
    if threads < 1:
        raise click.ClickException("--threads must be >= 1")
    if deterministic:
        threads = 1
    ctx.obj = CliState(seed=seed, deterministic=deterministic, threads=threads)


@main.command()
@click.option("--n-flights", required=True, type=int)
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="File (count=1) or directory.")
@click.option("--n-gates", type=int, default=91, show_default=True)
@click.option(
    "--stream-initial",
    type=int,
    default=None,
    help="Also write an arrival stream with this many flights known at time zero.",
)
@click.option("--stream-out", type=click.Path(), default=None)
@click.pass_obj
@_handle
def gen(state: CliState, n_flights, count, out, n_gates, stream_initial, stream_out):
    """Generate random instances (and optionally an arrival stream)."""
    if count < 1:
        raise click.ClickException("--count must be >= 1")
    insts = []
    for i in range(count):
        cfg = GenConfig(n_flights=n_flights, seed=child_seed(state.seed, i), n_gates=n_gates)
        insts.append(generate(cfg))
    if count == 1:
        paths = [Path(out)]
        paths[0].parent.mkdir(parents=True, exist_ok=True)
    else:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"instance_{i:04d}.json" for i in range(count)]
    for inst, path in zip(insts, paths):
        path.write_text(to_json(inst))
    click.echo(f"wrote {count} instance(s) to {out}")
    if stream_initial is not None:
        if stream_out is None:
            raise click.ClickException("--stream-out is required with --stream-initial")
        stream = realtime.make_stream(insts[0], stream_initial, seed=state.seed)
        Path(stream_out).write_text(realtime.stream_to_json(stream))
        click.echo(f"wrote stream ({stream_initial} initial, {len(stream.future)} future) to {stream_out}")


@main.command()
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--solver", "solver_name", required=True, type=click.Choice(SOLVER_NAMES))
@click.option("--out", type=click.Path(), default=None, help="Write the solution JSON here.")
@click.option("--check", is_flag=True, help="Verify the solution before reporting it.")
@click.option("--budget", type=float, default=None, help="Per-sub-problem seconds for sa/lns.")
@click.option("--params", type=click.Path(exists=True), default=None, help="Policy parameters.")
@click.option(
    "--decode",
    type=click.Choice(("greedy", "sample", "best")),
    default="greedy",
    show_default=True,
)
@click.option("--samples", type=int, default=128, show_default=True)
@click.pass_obj
@_handle
def solve(state: CliState, instance_path, solver_name, out, check, budget, params, decode, samples):
    """Solve one instance with one solver through the level decomposition."""
    _set_torch_threads(state, solver_name)
    inst = _load_instance(instance_path)
    solver = make_solver(solver_name, state.seed, budget, params, decode, samples)
    t0 = time.monotonic()
    sol = framework.solve(inst, solver)
    dt = time.monotonic() - t0
    if check:
        rep = milp.check_solution(inst, sol, "complete_by_window")
        if not rep.ok:
            for v in rep.violations:
                click.echo(f"violation {v.equation}: {v.message}", err=True)
            raise click.ClickException(f"{len(rep.violations)} constraint violations")
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(to_json(sol))
    click.echo(f"objective {sol.objective!r}")
    if not state.deterministic:
        click.echo(f"seconds {dt:.3f}")


def _set_torch_threads(state: CliState, *solver_names: str) -> None:
    if any(n == "policy" for n in solver_names):
        import torch

        torch.set_num_threads(state.threads)


def _bench_one(
    inst: Instance, names: list[str], state: CliState, budget, params
) -> list[dict]:
    rows = []
    for name in names:
        solver = make_solver(name, state.seed, budget, params)
        t0 = time.monotonic()
        try:
            sol = framework.solve(inst, solver)
            rows.append(
                {
                    "solver": name,
                    "status": "ok",
                    "objective": sol.objective,
                    "seconds": time.monotonic() - t0,
                }
            )
        except AghError as exc:
            rows.append(
                {
                    "solver": name,
                    "status": f"failed: {exc}",
                    "objective": None,
                    "seconds": time.monotonic() - t0,
                }
            )
    return rows


@main.command()
@click.option(
    "--instances",
    "instances_path",
    required=True,
    type=click.Path(exists=True),
    help="Instance file or directory of *.json instances.",
)
@click.option("--solvers", required=True, help="Comma-separated solver names.")
@click.option("--out", required=True, type=click.Path(), help="Summary CSV path.")
@click.option("--detail", type=click.Path(), default=None, help="Per-instance CSV path.")
@click.option("--budget", type=float, default=None)
@click.option("--params", type=click.Path(exists=True), default=None)
@click.option("--plots", type=click.Path(), default=None, help="Directory for figures.")
@click.pass_context
@_handle
def bench(ctx, instances_path, solvers, out, detail, budget, params, plots):
    """Compare solvers across an instance batch: objective, gap, wall time."""
    state: CliState = ctx.obj
    names = [s.strip() for s in solvers.split(",") if s.strip()]
    if not names:
        raise click.ClickException("--solvers must name at least one solver")
    for n in names:
        if n not in SOLVER_NAMES:
            raise click.ClickException(f"unknown solver {n!r}")
    _set_torch_threads(state, *names)
    root = Path(instances_path)
    files = [root] if root.is_file() else sorted(root.glob("*.json"))
    if not files:
        raise click.ClickException(f"no instance files under {root}")
    insts = [_load_instance(f) for f in files]
    if state.threads > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            futures = [
                pool.submit(_bench_one, inst, names, state, budget, params)
                for inst in insts
            ]
            per_instance = [f.result() for f in futures]  # merged in instance order
    else:
        per_instance = [_bench_one(inst, names, state, budget, params) for inst in insts]

    detail_rows = []
    for f, rows in zip(files, per_instance):
        for r in rows:
            detail_rows.append(
                {
                    "instance": f.name,
                    "solver": r["solver"],
                    "status": r["status"],
                    "objective": "" if r["objective"] is None else r["objective"],
                    "seconds": 0.0 if state.deterministic else r["seconds"],
                }
            )
    summary = []
    for name in names:
        objs, gaps, secs, fails = [], [], [], 0
        for rows in per_instance:
            ok_costs = [r["objective"] for r in rows if r["objective"] is not None]
            best = min(ok_costs) if ok_costs else None
            mine = next(r for r in rows if r["solver"] == name)
            secs.append(mine["seconds"])
            if mine["objective"] is None:
                fails += 1
                continue
            objs.append(mine["objective"])
            gaps.append(abs(mine["objective"] - best) / best if best else 0.0)
        summary.append(
            {
                "solver": name,
                "instances": len(insts),
                "failures": fails,
                "mean_objective": float(np.mean(objs)) if objs else "",
                "mean_gap": float(np.mean(gaps)) if gaps else "",
                "mean_seconds": 0.0 if state.deterministic else float(np.mean(secs)),
            }
        )
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out, report.BENCH_COLUMNS, summary)
    if detail is not None:
        report.write_csv(detail, report.DETAIL_COLUMNS, detail_rows)
    for row in summary:
        click.echo(
            f"{row['solver']}: mean objective {row['mean_objective']}, "
            f"mean gap {row['mean_gap']}, failures {row['failures']}"
        )
    if plots is not None:
        for p in report.render(out, plots):
            click.echo(f"figure {p}")
    n_failures = sum(row["failures"] for row in summary)
    if n_failures:
        click.echo(f"{n_failures} solver failure(s) recorded", err=True)
        ctx.exit(2)


@main.command()
@click.option("--n-flights", type=int, default=10, show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--iters", type=int, default=50, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--val-size", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option(
    "--loss",
    type=click.Choice(("per_fleet", "L_G", "L_MG", "L_MF")),
    default="per_fleet",
    show_default=True,
)
@click.option("--alpha", type=float, default=0.95, show_default=True)
@click.option("--d-h", type=int, default=128, show_default=True)
@click.option("--n-layers", type=int, default=3, show_default=True)
@click.option("--n-heads", type=int, default=8, show_default=True)
@click.option("--out-params", required=True, type=click.Path())
@click.option("--log", "log_path", required=True, type=click.Path(), help="Training CSV.")
@click.option("--plots", type=click.Path(), default=None, help="Directory for figures.")
@click.pass_obj
@_handle
def train(state: CliState, n_flights, epochs, iters, batch_size, val_size, lr, loss, alpha,
          d_h, n_layers, n_heads, out_params, log_path, plots):
    """Train the attention policy with the self-critical baseline."""
    import torch

    from . import policy as pol
    from . import train as tr

    torch.set_num_threads(state.threads)
    cfg = tr.TrainConfig(
        epochs=epochs,
        iters_per_epoch=iters,
        batch_size=batch_size,
        lr=lr,
        loss=loss,
        mix_alpha=alpha,
        val_size=val_size,
        gen=GenConfig(n_flights=n_flights, seed=state.seed),
        seed=state.seed,
        d_h=d_h,
        n_layers=n_layers,
        n_heads=n_heads,
    )
    rows: list[dict] = []

    def progress(row: dict) -> None:
        rows.append(row)
        msg = (
            f"epoch {row['epoch']}: train {row['train_cost']:.2f} "
            f"val {row['val_cost']:.2f} baseline {row['baseline_cost']:.2f} "
            f"swapped {row['swapped']}"
        )
        if not state.deterministic:
            msg += f" ({row['seconds']:.1f}s)"
        click.echo(msg)

    result = tr.train(cfg, progress=progress)
    out_rows = [
        {**row, "seconds": 0.0 if state.deterministic else row["seconds"]}
        for row in result.history
    ]
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(log_path, report.TRAIN_COLUMNS, out_rows)
    Path(out_params).parent.mkdir(parents=True, exist_ok=True)
    pol.save_params(result.net, out_params)
    click.echo(f"params {out_params}")
    if plots is not None:
        for p in report.render(log_path, plots):
            click.echo(f"figure {p}")


@main.command()
@click.option("--initial", "initial_path", required=True, type=click.Path(exists=True),
              help="Instance holding every flight the stream may reveal.")
@click.option("--stream", "stream_path", required=True, type=click.Path(exists=True))
@click.option("--solver", "solver_name", default="nn", show_default=True,
              type=click.Choice(SOLVER_NAMES))
@click.option("--log", "log_path", required=True, type=click.Path(), help="Event CSV.")
@click.option("--out", type=click.Path(), default=None, help="Final solution JSON.")
@click.option("--out-instance", type=click.Path(), default=None,
              help="Instance over the accepted flights (for independent checking).")
@click.option("--check", is_flag=True)
@click.option("--batch-window", type=float, default=0.0, show_default=True)
@click.option("--params", type=click.Path(exists=True), default=None)
@click.pass_obj
@_handle
def realtime_cmd(state: CliState, initial_path, stream_path, solver_name, log_path, out,
                 out_instance, check, batch_window, params):
    """Simulate arrivals revealing over time with rolling re-optimization."""
    _set_torch_threads(state, solver_name)
    template = _load_instance(initial_path)
    stream = realtime.stream_from_json(Path(stream_path).read_text())
    solver = make_solver(solver_name, state.seed, params=params)
    sol, events = realtime.simulate(stream, solver, template, batch_window=batch_window)
    rows = [
        {
            "time": e.time,
            "revealed": ";".join(str(i) for i in e.revealed),
            "rejected": ";".join(str(i) for i in e.rejected),
            "n_frozen": e.n_frozen,
            "n_pending": e.n_pending,
            "total_cost": e.total_cost,
            "incremental_cost": e.incremental_cost,
        }
        for e in events
    ]
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(log_path, report.EVENT_COLUMNS, rows)
    accepted = realtime.accepted_ids_from_events(stream, events)
    final_inst, _ = realtime.accepted_instance(template, accepted)
    if out is not None:
        Path(out).write_text(to_json(sol))
    if out_instance is not None:
        Path(out_instance).write_text(to_json(final_inst))
    click.echo(f"objective {sol.objective!r}")
    click.echo(f"events {len(events)} accepted {len(accepted)} "
               f"rejected {sum(len(e.rejected) for e in events)}")
    if check:
        rep = milp.check_solution(final_inst, sol, "complete_by_window")
        if not rep.ok:
            for v in rep.violations:
                click.echo(f"violation {v.equation}: {v.message}", err=True)
            raise click.ClickException(f"{len(rep.violations)} constraint violations")
        click.echo("check ok")


main.add_command(realtime_cmd, name="realtime")


@main.command()
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--solution", "solution_path", required=True, type=click.Path(exists=True))
@click.option(
    "--semantics",
    type=click.Choice(milp.SEMANTICS),
    default="complete_by_window",
    show_default=True,
)
@click.pass_obj
@_handle
def check(state: CliState, instance_path, solution_path, semantics):
    """Verify a solution against every model constraint family."""
    inst = _load_instance(instance_path)
    sol = _load_solution(solution_path)
    rep = milp.check_solution(inst, sol, semantics)
    if rep.ok:
        click.echo(f"ok objective {sol.objective!r}")
        return
    for v in rep.violations:
        click.echo(f"violation {v.equation}: {v.message}")
    raise click.ClickException(f"{len(rep.violations)} constraint violations")


@main.command(name="export-lp")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option(
    "--semantics",
    type=click.Choice(milp.SEMANTICS),
    default="start_in_window",
    show_default=True,
)
@click.pass_obj
@_handle
def export_lp(state: CliState, instance_path, out, semantics):
    """Write the exact optimization model in LP text format."""
    inst = _load_instance(instance_path)
    model = milp.build(inst, semantics)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(milp.emit_lp(model))
    click.echo(
        f"wrote {out}: {model.n_binary} binaries, {model.n_continuous} continuous, "
        f"{len(model.constraints)} constraints"
    )


@main.command(name="solve-milp")
@click.option("--lp", "lp_path", required=True, type=click.Path(exists=True))
@click.option(
    "--solver-cmd",
    required=True,
    help="External solver template with {lp} and {sol} placeholders.",
)
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="Solution JSON path.")
@click.option("--sol-text", type=click.Path(), default=None,
              help="Where the solver should write its 'var value' text.")
@click.option("--check", is_flag=True)
@click.option(
    "--semantics",
    type=click.Choice(milp.SEMANTICS),
    default="start_in_window",
    show_default=True,
)
@click.pass_obj
@_handle
def solve_milp(state: CliState, lp_path, solver_cmd, instance_path, out, sol_text, check,
               semantics):
    """Run a user-supplied MILP solver binary on an exported LP file."""
    if "{lp}" not in solver_cmd or "{sol}" not in solver_cmd:
        raise click.ClickException("--solver-cmd must contain {lp} and {sol} placeholders")
    inst = _load_instance(instance_path)
    sol_path = Path(sol_text) if sol_text else Path(lp_path).with_suffix(".sol")
    cmd = [
        part.replace("{lp}", str(lp_path)).replace("{sol}", str(sol_path))
        for part in shlex.split(solver_cmd)
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise click.ClickException(
            f"solver command failed ({proc.returncode}): {proc.stderr.strip()}"
        )
    values = milp.parse_solution_text(sol_path.read_text())
    sol = milp.assignment_to_solution(inst, values)
    if out is not None:
        Path(out).write_text(to_json(sol))
    click.echo(f"objective {sol.objective!r}")
    if check:
        rep = milp.check_solution(inst, sol, semantics)
        if not rep.ok:
            for v in rep.violations:
                click.echo(f"violation {v.equation}: {v.message}", err=True)
            raise click.ClickException(f"{len(rep.violations)} constraint violations")
        click.echo("check ok")


if __name__ == "__main__":
    main()
