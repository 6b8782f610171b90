"""
benchmark_runner.py

Repeated seeded solver runs on one instance and constraint set, aggregated
into success rates, weight statistics, timing, a CoG histogram and the
shear-error histogram (runs with 0 / 1 / 2 / >=3 violating stations).

Run i uses seed base_seed + i; the model is assembled once and reused.
Only the solver call is timed.
"""
import io
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from analytics_utils import close
from cargo_model import ProblemInstance
from plan_analysis import LoadingPlan, ValidationReport, decode, validate
from qubo_builder import PenaltyWeights, QuadraticModel, assemble
from tabu_solver import SolverParams, tabu_solve

logger = logging.getLogger("benchmark_runner")

SHEAR_BINS = ("0", "1", "2", ">=3")
COG_BINS = 12

# Published results for the bundled datasets, shown next to tabular reports.
REFERENCE_RESULTS = {
    "airbus_35x20": {
        "pl": {"pct_pl_valid": 94.4, "pct_cl_valid": 99.6, "pct_sl_valid": 58.4, "mean_time": 32.9,
               "shear_errors": (58.4, 23.6, 8.6, 9.4), "position_vars": 700, "slack_vars": 71},
        "pl+cl": {"pct_pl_valid": 98.0, "pct_cl_valid": 100.0, "pct_sl_valid": 63.0, "mean_time": 35.5,
                  "shear_errors": (63.0, 21.6, 10.4, 5.0), "position_vars": 700, "slack_vars": 118},
        "pl+cl+sl": {"pct_pl_valid": 97.2, "pct_cl_valid": 100.0, "pct_sl_valid": 65.6, "mean_time": 38.2,
                     "shear_errors": (65.6, 24.2, 4.8, 5.4), "position_vars": 700, "slack_vars": 386},
    },
    "dwave_6x4": {
        "pl": {"pct_feasible": 100.0, "pct_optimal": 33.0, "mean_time": 0.161, "max_weight": 7500.0,
               "mean_weight": 7394.8, "exact_weight": 7500.0, "exact_time": 104.3},
    },
}


@dataclass
class TrialRecord:
    index: int
    seed: int
    constraints: str
    wall_time: float
    energy: float
    report: ValidationReport
    plan: LoadingPlan
    feasible: bool
    optimal: Optional[bool] = None

    @property
    def loaded_weight(self) -> float:
        return self.report.loaded_weight

    @property
    def cog(self) -> float:
        return self.report.cog

    @property
    def shear_violations(self) -> int:
        return self.report.shear_violations

    @property
    def occupied_positions(self) -> int:
        return int(self.plan.matrix.any(axis=0).sum())

    def as_dict(self, timing: bool = False) -> Dict[str, Any]:
        row = {
            "index": self.index, "seed": self.seed, "constraints": self.constraints, "energy": self.energy,
            "loaded_weight": self.loaded_weight, "cog": self.cog, "shear_violations": self.shear_violations,
            "pl_valid": self.report.pl_valid, "cl_valid": self.report.cl_valid, "sl_valid": self.report.sl_valid,
            "feasible": self.feasible, "optimal": self.optimal, "occupied_positions": self.occupied_positions,
        }
        if timing:
            row["wall_time"] = self.wall_time
        return row


@dataclass
class BenchmarkSummary:
    instance: str
    constraints: str
    runs: int
    pct_pl_valid: float
    pct_cl_valid: float
    pct_sl_valid: float
    pct_feasible: float
    mean_time: float
    max_weight: float
    mean_weight: float
    pct_optimal: Optional[float]
    mean_cog_error: float
    pct_saturated: float
    cog_histogram: Dict[str, Any]
    shear_error_histogram: Dict[str, int]
    best_index: Optional[int] = None
    exact_optimum: Optional[float] = None

    def as_dict(self, timing: bool = False) -> Dict[str, Any]:
        doc = {
            "instance": self.instance, "constraints": self.constraints, "runs": self.runs,
            "pct_pl_valid": self.pct_pl_valid, "pct_cl_valid": self.pct_cl_valid,
            "pct_sl_valid": self.pct_sl_valid, "pct_feasible": self.pct_feasible,
            "max_weight": self.max_weight, "mean_weight": self.mean_weight,
            "pct_optimal": self.pct_optimal, "exact_optimum": self.exact_optimum,
            "mean_cog_error": self.mean_cog_error, "pct_saturated": self.pct_saturated,
            "cog_histogram": self.cog_histogram, "shear_error_histogram": self.shear_error_histogram,
            "best_index": self.best_index,
        }
        if timing:
            doc["mean_time"] = self.mean_time
        return doc


def _pct(flags: Sequence[bool]) -> float:
    return 100.0 * sum(1 for f in flags if f) / len(flags) if flags else 0.0


def cog_edges(instance: ProblemInstance, values: Sequence[float], bins: int = COG_BINS) -> List[float]:
    """Equal-width bin edges that hit x_cg^min, x_cg^t and x_cg^max and cover every value."""
    lo, mid, hi = instance.cog_min, instance.cog_target, instance.cog_max
    span = hi - lo
    width = span / bins if span > 0 else 1.0
    left = max(1, int(round((mid - lo) / width))) if mid > lo else 0
    right = max(1, int(round((hi - mid) / width))) if hi > mid else 0
    edges = list(np.linspace(lo, mid, left + 1)) if left else [lo]
    edges += list(np.linspace(mid, hi, right + 1))[1:] if right else []
    data = [v for v in values if np.isfinite(v)]
    if data:
        while edges[0] > min(data):
            edges.insert(0, edges[0] - width)
        while edges[-1] < max(data):
            edges.append(edges[-1] + width)
    if len(edges) < 2:
        edges = [edges[0] - width / 2, edges[0] + width / 2]
    return [float(e) for e in edges]


def cog_histogram(instance: ProblemInstance, values: Sequence[float]) -> Dict[str, Any]:
    edges = cog_edges(instance, values)
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=edges)
    return {
        "edges": edges,
        "counts": [int(c) for c in counts],
        "markers": {"x_cg_min": instance.cog_min, "x_cg_target": instance.cog_target, "x_cg_max": instance.cog_max},
    }


def shear_histogram(violations: Sequence[int]) -> Dict[str, int]:
    hist = dict.fromkeys(SHEAR_BINS, 0)
    for v in violations:
        hist[SHEAR_BINS[min(int(v), 3)]] += 1
    return hist


def best_record(records: Sequence[TrialRecord]) -> Optional[TrialRecord]:
    """Heaviest feasible run, else the lowest-energy run; earliest index on ties."""
    if not records:
        return None
    feasible = [r for r in records if r.feasible]
    if feasible:
        return min(feasible, key=lambda r: (-r.loaded_weight, r.index))
    return min(records, key=lambda r: (r.energy, r.index))


def summarize(instance: ProblemInstance, records: Sequence[TrialRecord],
              exact_optimum: Optional[float] = None) -> BenchmarkSummary:
    if not records:
        raise ValueError("cannot summarize zero runs")
    feasible = [r for r in records if r.feasible]
    weights = [r.loaded_weight for r in feasible]
    best = best_record(records)
    return BenchmarkSummary(
        instance=instance.name,
        constraints=instance.constraints.label,
        runs=len(records),
        pct_pl_valid=_pct([r.report.pl_valid for r in records]),
        pct_cl_valid=_pct([r.report.cl_valid for r in records]),
        pct_sl_valid=_pct([r.report.sl_valid for r in records]),
        pct_feasible=_pct([r.feasible for r in records]),
        mean_time=float(np.mean([r.wall_time for r in records])),
        max_weight=float(max(weights)) if weights else 0.0,
        mean_weight=float(np.mean(weights)) if weights else 0.0,
        pct_optimal=_pct([bool(r.optimal) for r in records]) if exact_optimum is not None else None,
        mean_cog_error=float(np.mean([abs(r.cog - instance.cog_target) for r in records])),
        pct_saturated=_pct([r.occupied_positions == instance.N for r in feasible]),
        cog_histogram=cog_histogram(instance, [r.cog for r in records]),
        shear_error_histogram=shear_histogram([r.shear_violations for r in records]),
        best_index=best.index if best else None,
        exact_optimum=exact_optimum,
    )


def run_benchmark(instance: ProblemInstance, params: SolverParams, runs: int,
                  exact_optimum: Optional[float] = None, weights: Optional[PenaltyWeights] = None,
                  model: Optional[QuadraticModel] = None, progress: bool = True
                  ) -> Tuple[BenchmarkSummary, List[TrialRecord]]:
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if model is None:
        if weights is None:
            raise ValueError("either a model or penalty weights are required")
        model = assemble(instance, weights)
    label = instance.constraints.label
    logger.info("Benchmark %s [%s]: %d runs, base seed %d, %d variables",
                instance.name, label, runs, params.seed, model.num_vars)

    records = []
    for i in tqdm(range(runs), desc=f"{instance.name} {label}", disable=not progress):
        seed = int(params.seed) + i
        sol = tabu_solve(model, SolverParams(
            max_iterations=params.max_iterations, tabu_tenure=params.tabu_tenure, restarts=params.restarts,
            seed=seed, target_energy=params.target_energy, stall_limit=params.stall_limit))
        plan = decode(sol.bits, model.registry, instance)
        report = validate(plan, instance)
        feasible = report.feasible(instance.constraints)
        optimal = None
        if exact_optimum is not None:
            optimal = feasible and close(report.loaded_weight, exact_optimum, 1e-6)
        records.append(TrialRecord(i, seed, label, sol.wall_time, sol.energy, report, plan, feasible, optimal))
        logger.debug("run %d (seed %d): energy %.3f, weight %.1f, feasible=%s",
                     i, seed, sol.energy, report.loaded_weight, feasible)

    summary = summarize(instance, records, exact_optimum)
    logger.info("Benchmark %s [%s]: PL %.1f%% CL %.1f%% SL %.1f%% feasible %.1f%%, max %.1f kg, mean %.1f kg, %.3fs/run",
                instance.name, label, summary.pct_pl_valid, summary.pct_cl_valid, summary.pct_sl_valid,
                summary.pct_feasible, summary.max_weight, summary.mean_weight, summary.mean_time)
    return summary, records


# ----------------------------
# Reports
# ----------------------------
def _table_row(summary: BenchmarkSummary, timing: bool) -> Dict[str, Any]:
    hist = summary.shear_error_histogram
    row = {
        "case": summary.constraints.upper(), "runs": summary.runs,
        "pct_valid_pl": round(summary.pct_pl_valid, 2), "pct_valid_cl": round(summary.pct_cl_valid, 2),
        "pct_valid_sl": round(summary.pct_sl_valid, 2), "pct_feasible": round(summary.pct_feasible, 2),
        "max_weight": summary.max_weight, "mean_weight": round(summary.mean_weight, 2),
        "pct_optimal": None if summary.pct_optimal is None else round(summary.pct_optimal, 2),
    }
    for key in SHEAR_BINS:
        row[f"pct_shear_errors_{key}"] = round(100.0 * hist[key] / summary.runs, 2)
    if timing:
        row["mean_time_s"] = round(summary.mean_time, 4)
    return row


def _reference_row(summary: BenchmarkSummary, timing: bool) -> Optional[Dict[str, Any]]:
    ref = REFERENCE_RESULTS.get(summary.instance, {}).get(summary.constraints)
    if ref is None:
        return None
    row = {"case": f"{summary.constraints.upper()} (reference)", "runs": None,
           "pct_valid_pl": ref.get("pct_pl_valid", ref.get("pct_feasible")),
           "pct_valid_cl": ref.get("pct_cl_valid"), "pct_valid_sl": ref.get("pct_sl_valid"),
           "pct_feasible": ref.get("pct_feasible"), "max_weight": ref.get("max_weight"),
           "mean_weight": ref.get("mean_weight"), "pct_optimal": ref.get("pct_optimal")}
    errors = ref.get("shear_errors", (None,) * len(SHEAR_BINS))
    for key, value in zip(SHEAR_BINS, errors):
        row[f"pct_shear_errors_{key}"] = value
    if timing:
        row["mean_time_s"] = ref.get("mean_time")
    return row


def shear_curve(record: TrialRecord) -> List[Dict[str, Any]]:
    return [{"station": r.tag, "side": r.side, "x": r.x, "value": r.value, "limit": r.limit, "violated": r.violated}
            for r in record.report.shear]


def report_structure(summary: BenchmarkSummary, records: Sequence[TrialRecord], timing: bool = False) -> Dict[str, Any]:
    best = next((r for r in records if r.index == summary.best_index), None)
    series: Dict[str, Any] = {"cog_histogram": summary.cog_histogram}
    if best is not None:
        series["shear_curve"] = shear_curve(best)
        series["occupancy_matrix"] = {"container_ids": list(best.plan.container_ids),
                                      "matrix": best.plan.matrix.tolist()}
        series["disposition"] = [ids for _, ids in sorted(best.plan.occupancy.items())]
    return {
        "summary": summary.as_dict(timing),
        "records": [r.as_dict(timing) for r in records],
        "series": series,
    }


def emit_report(summary: BenchmarkSummary, records: Sequence[TrialRecord], fmt: str = "structured",
                timing: bool = False) -> str:
    """'tabular' gives a CSV table (plus the published reference row when one exists); 'structured' gives JSON."""
    if fmt == "tabular":
        rows = [_table_row(summary, timing)]
        ref = _reference_row(summary, timing)
        if ref is not None:
            rows.append(ref)
        buf = io.StringIO()
        pd.DataFrame(rows).to_csv(buf, index=False)
        return buf.getvalue()
    if fmt == "structured":
        return json.dumps(report_structure(summary, records, timing), indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text: str) -> Dict[str, Any]:
    return json.loads(text)
