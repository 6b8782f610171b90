#!/usr/bin/env python3
"""
load_planner.py

Command-line entry point.

  solve        tabu search on the QUBO model, writes plan + report + energy
  exact        exact maximum-weight plan (branch and bound)
  export-qubo  sparse QUBO text file plus a JSON variable map
  bench        repeated seeded runs per constraint set, CSV + JSON reports
  calibrate    sampled penalty weights document
  convert      container CSV table + parameters -> instance document

Exit status: 0 feasible, 2 best plan found is infeasible, 1 error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from analytics_utils import BENCH_RUNS, CALIBRATION_SAMPLES, DATA_DIR, EXACT_LIMIT
from benchmark_runner import emit_report, run_benchmark
from cargo_model import ConstraintSet, ProblemInstance
from exact_solver import IntractableError, exact_solve
from instance_io import (dumps, emit_instance, emit_qubo, instance_from_csv, load_instance, load_weights,
                         plan_document, report_filename, variable_map, weights_document, write_json,
                         write_text)
from plan_analysis import decode, validate
from qubo_builder import PenaltyWeights, assemble, calibrate_weights, default_weights, penalty_breakdown
from tabu_solver import SolverParams, anneal_solve, tabu_solve

logger = logging.getLogger("load_planner")

PROG = "load_planner"
EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
ALL_SETS = ("pl", "pl+cl", "pl+cl+sl")


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with usage errors reported on one line and exit status 1."""

    def error(self, message):
        raise CliError(message)


# ----------------------------
# Shared helpers
# ----------------------------
def _instance(args) -> ProblemInstance:
    instance = load_instance(args.instance)
    label = getattr(args, "set", None)
    capacity = instance.constraints.capacity and not getattr(args, "no_capacity", False)
    if isinstance(label, str):
        return instance.with_constraints(ConstraintSet.parse(label, capacity=capacity))
    if capacity != instance.constraints.capacity:
        cs = instance.constraints
        return instance.with_constraints(ConstraintSet(cs.pl, cs.cl, cs.sl, capacity))
    return instance


def _weights(args, instance: ProblemInstance) -> PenaltyWeights:
    if getattr(args, "weights", None):
        return load_weights(args.weights)
    if getattr(args, "uncalibrated", False):
        return default_weights(instance)
    return calibrate_weights(instance, samples=args.samples, seed=args.seed)


def _params(args) -> SolverParams:
    return SolverParams(max_iterations=args.max_iterations, tabu_tenure=args.tenure, restarts=args.restarts,
                        seed=args.seed, target_energy=args.target_energy, stall_limit=args.stall_limit).check()


def _write(doc_or_text, output: Optional[str]):
    text = doc_or_text if isinstance(doc_or_text, str) else dumps(doc_or_text)
    if output:
        write_text(Path(output), text)
    else:
        sys.stdout.write(text)


# ----------------------------
# Commands
# ----------------------------
def cmd_solve(args) -> int:
    instance = _instance(args)
    weights = _weights(args, instance)
    model = assemble(instance, weights)
    solve = anneal_solve if args.anneal else tabu_solve
    sol = solve(model, _params(args))
    plan = decode(sol.bits, model.registry, instance)
    report = validate(plan, instance)
    extra = {
        "seed": args.seed,
        "solver": "anneal" if args.anneal else "tabu",
        "num_vars": model.num_vars,
        "iterations": sol.iterations_used,
        "penalties": penalty_breakdown(model, sol.bits),
        "weights": weights_document(weights),
    }
    if args.timing:
        extra["wall_time"] = sol.wall_time
    _write(plan_document(instance, plan, report, sol.energy, extra), args.output)
    feasible = report.feasible(instance.constraints)
    logger.info("solve %s [%s]: energy %.3f, weight %.1f kg, feasible=%s (%.3fs)", instance.name,
                instance.constraints.label, sol.energy, report.loaded_weight, feasible, sol.wall_time)
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def cmd_exact(args) -> int:
    instance = _instance(args)
    result = exact_solve(instance, force=args.force, limit=args.limit)
    extra = {"nodes": result.nodes, "optimal_weight": result.weight}
    if args.timing:
        extra["wall_time"] = result.wall_time
    _write(plan_document(instance, result.plan, result.report, None, extra), args.output)
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def cmd_export_qubo(args) -> int:
    instance = _instance(args)
    model = assemble(instance, _weights(args, instance))
    output = Path(args.output)
    write_text(output, emit_qubo(model))
    varmap = Path(args.varmap) if args.varmap else output.with_name(output.name + ".varmap.json")
    write_json(varmap, {"num_vars": model.num_vars, "variables": variable_map(model)})
    logger.info("Exported %d variables (%d slack) to %s", model.num_vars, model.registry.slack_count, output)
    return EXIT_OK


def _sets(values: Optional[List[str]]) -> List[str]:
    labels = []
    for value in values or ["pl"]:
        for part in value.split(","):
            part = part.strip().lower()
            if part == "all":
                labels += ALL_SETS
            elif part:
                labels.append(ConstraintSet.parse(part).label)
    return list(dict.fromkeys(labels))


def cmd_bench(args) -> int:
    if args.runs < 1:
        raise CliError(f"--runs must be >= 1, got {args.runs}")
    base = load_instance(args.instance)
    out_dir = Path(args.out)
    capacity = base.constraints.capacity and not args.no_capacity
    params = _params(args)
    for label in _sets(args.set):
        instance = base.with_constraints(ConstraintSet.parse(label, capacity=capacity))
        optimum = None
        if args.exact:
            try:
                optimum = exact_solve(instance, limit=args.limit).weight
            except IntractableError as e:
                logger.warning("No optimality statistics: %s", e)
        summary, records = run_benchmark(instance, params, args.runs, exact_optimum=optimum,
                                         weights=_weights(args, instance), progress=not args.no_progress)
        tag = label if capacity else f"{label}+nocap"
        write_text(out_dir / report_filename(instance.name, tag, args.runs, "csv"),
                   emit_report(summary, records, "tabular", timing=args.timing))
        write_text(out_dir / report_filename(instance.name, tag, args.runs, "json"),
                   emit_report(summary, records, "structured", timing=args.timing))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if args.samples < 1:
        raise CliError(f"--samples must be >= 1, got {args.samples}")
    instance = _instance(args)
    weights = calibrate_weights(instance, samples=args.samples, seed=args.seed)
    _write(weights_document(weights), args.output)
    return EXIT_OK


def cmd_convert(args) -> int:
    L = args.L
    parameters = {
        "N": args.N, "L": L, "W_max": args.W_max, "W_e": args.W_e, "x_cg_e": args.x_cg_e,
        "S_max_0": args.S_max_0,
        "x_cg_min": args.x_cg_min if args.x_cg_min is not None else -0.1 * L,
        "x_cg_max": args.x_cg_max if args.x_cg_max is not None else 0.2 * L,
        "x_cg_target": args.x_cg_target if args.x_cg_target is not None else 0.1 * L,
    }
    constraints = ConstraintSet.parse(args.set, capacity=not args.no_capacity)
    instance = instance_from_csv(Path(args.csv), parameters, constraints, name=args.name)
    _write(emit_instance(instance), args.output)
    return EXIT_OK


# ----------------------------
# CLI / Main
# ----------------------------
def _solver_flags(p):
    p.add_argument("--seed", type=int, default=0, help="Base random seed (solver and calibration)")
    p.add_argument("--restarts", type=int, default=20, help="Tabu restarts per run")
    p.add_argument("--max-iterations", type=int, default=None, help="Iterations per restart (default 50*num_vars)")
    p.add_argument("--tenure", type=int, default=None, help="Tabu tenure (default max(10, num_vars/4))")
    p.add_argument("--stall-limit", type=int, default=None, help="Non-improving iterations before a restart ends")
    p.add_argument("--target-energy", type=float, default=None, help="Stop as soon as this energy is reached")


def _weight_flags(p):
    p.add_argument("--weights", help="Penalty weights document (JSON)")
    p.add_argument("--uncalibrated", action="store_true", help="Use (1 + total mass)^2 for every penalty")
    p.add_argument("--samples", type=int, default=CALIBRATION_SAMPLES, help="Calibration samples")


def _constraint_flags(p, repeat=False):
    if repeat:
        p.add_argument("--set", action="append", help="Constraint set pl | pl+cl | pl+cl+sl | all (repeatable)")
    else:
        p.add_argument("--set", help="Override the instance's constraint set (pl, pl+cl, pl+cl+sl, none)")
    p.add_argument("--no-capacity", action="store_true", help="Drop the maximum payload constraint")


def build_parser() -> Parser:
    parser = Parser(prog=PROG, description="Aircraft cargo loading as a QUBO: solve, verify, export, benchmark.")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("solve", help="Tabu search on the QUBO model")
    p.add_argument("instance")
    p.add_argument("-o", "--output", help="Plan document path (default stdout)")
    p.add_argument("--anneal", action="store_true", help="Use the annealing baseline instead of tabu search")
    p.add_argument("--timing", action="store_true", help="Include wall-clock times in the output")
    _solver_flags(p)
    _weight_flags(p)
    _constraint_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("exact", help="Exact maximum-weight plan")
    p.add_argument("instance")
    p.add_argument("-o", "--output")
    p.add_argument("--force", action="store_true", help=f"Run even when n*N exceeds the limit ({EXACT_LIMIT})")
    p.add_argument("--limit", type=int, default=None, help="Size guard on n*N")
    p.add_argument("--timing", action="store_true")
    _constraint_flags(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("export-qubo", help="Write the QUBO model in sparse text form")
    p.add_argument("instance")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--varmap", help="Variable map path (default <output>.varmap.json)")
    p.add_argument("--seed", type=int, default=0, help="Calibration seed")
    _weight_flags(p)
    _constraint_flags(p)
    p.set_defaults(func=cmd_export_qubo)

    p = sub.add_parser("bench", help="Repeated seeded runs and reports")
    p.add_argument("instance")
    p.add_argument("--runs", type=int, default=BENCH_RUNS)
    p.add_argument("--out", default=str(DATA_DIR / "reports"), help="Report directory")
    p.add_argument("--exact", action="store_true", help="Compute the exact optimum for optimality rates")
    p.add_argument("--limit", type=int, default=None, help="Size guard for --exact")
    p.add_argument("--timing", action="store_true", help="Include wall-clock times in the reports")
    p.add_argument("--no-progress", action="store_true")
    _solver_flags(p)
    _weight_flags(p)
    _constraint_flags(p, repeat=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", help="Print sampled penalty weights")
    p.add_argument("instance")
    p.add_argument("-o", "--output")
    p.add_argument("--samples", type=int, default=CALIBRATION_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    _constraint_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("convert", help="Container CSV (id,type,mass) to an instance document")
    p.add_argument("csv")
    p.add_argument("-o", "--output")
    p.add_argument("--name")
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--L", type=float, default=40.0)
    p.add_argument("--W-max", dest="W_max", type=float, default=40000.0)
    p.add_argument("--W-e", dest="W_e", type=float, default=120000.0)
    p.add_argument("--x-cg-e", dest="x_cg_e", type=float, default=0.0)
    p.add_argument("--S-max-0", dest="S_max_0", type=float, default=26000.0)
    p.add_argument("--x-cg-min", dest="x_cg_min", type=float, default=None, help="Default -0.1*L")
    p.add_argument("--x-cg-max", dest="x_cg_max", type=float, default=None, help="Default 0.2*L")
    p.add_argument("--x-cg-target", dest="x_cg_target", type=float, default=None, help="Default 0.1*L")
    p.add_argument("--set", default="pl")
    p.add_argument("--no-capacity", action="store_true")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    debug = "--debug" in (argv if argv is not None else sys.argv[1:])
    logging.basicConfig(level=logging.DEBUG if debug else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"{PROG}: error: {e}".replace("\n", " "), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
