import io
import unittest

import numpy as np
import pandas as pd
import pytest

from benchmark_runner import (SHEAR_BINS, cog_edges, cog_histogram, emit_report, parse_report, run_benchmark,
                              shear_histogram, summarize)
from exact_solver import exact_solve
from factories import airbus_instance, dwave_instance
from qubo_builder import assemble, calibrate_weights
from tabu_solver import SolverParams

QUICK = SolverParams(max_iterations=300, restarts=2, seed=11)


class TestHistograms(unittest.TestCase):
    def test_shear_bins(self):
        hist = shear_histogram([0, 0, 1, 2, 3, 7, 12])
        self.assertEqual(hist, {"0": 2, "1": 1, "2": 1, ">=3": 3})
        self.assertEqual(tuple(hist), SHEAR_BINS)

    def test_cog_edges_hit_markers(self):
        inst = dwave_instance()
        edges = cog_edges(inst, [-10.0, 0.0, 12.5])
        for marker in (inst.cog_min, inst.cog_target, inst.cog_max):
            self.assertTrue(any(abs(e - marker) < 1e-9 for e in edges))
        self.assertLessEqual(edges[0], -10.0)
        self.assertGreaterEqual(edges[-1], 12.5)
        self.assertTrue(all(b > a for a, b in zip(edges, edges[1:])))

    def test_cog_counts_cover_values(self):
        values = [-4.0, 0.0, 3.9, 4.0, 8.0, -6.5]
        hist = cog_histogram(dwave_instance(), values)
        self.assertEqual(sum(hist["counts"]), len(values))
        self.assertEqual(len(hist["counts"]), len(hist["edges"]) - 1)


class TestRunBenchmark(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.inst = dwave_instance()
        cls.model = assemble(cls.inst, calibrate_weights(cls.inst, 200, 0))

    def run_quick(self, runs, **kwargs):
        return run_benchmark(self.inst, QUICK, runs, model=self.model, progress=False, **kwargs)

    def test_rejects_zero_runs(self):
        with self.assertRaises(ValueError):
            self.run_quick(0)
        with self.assertRaises(ValueError):
            summarize(self.inst, [])

    def test_needs_model_or_weights(self):
        with self.assertRaises(ValueError):
            run_benchmark(self.inst, QUICK, 1, progress=False)

    def test_single_run_summary_matches_trial(self):
        summary, records = self.run_quick(1)
        (record,) = records
        self.assertEqual(summary.runs, 1)
        self.assertEqual(record.seed, QUICK.seed)
        self.assertEqual(summary.pct_pl_valid, 100.0 if record.report.pl_valid else 0.0)
        self.assertEqual(summary.max_weight, record.loaded_weight if record.feasible else 0.0)
        self.assertEqual(summary.best_index, 0)
        self.assertEqual(sum(summary.shear_error_histogram.values()), 1)

    def test_summary_recomputes_from_records(self):
        summary, records = self.run_quick(4, exact_optimum=7500.0)
        self.assertEqual([r.seed for r in records], [11, 12, 13, 14])
        again = summarize(self.inst, records, exact_optimum=7500.0)
        self.assertEqual(again.as_dict(), summary.as_dict())
        feasible = [r.loaded_weight for r in records if r.feasible]
        self.assertAlmostEqual(summary.mean_weight, float(np.mean(feasible)) if feasible else 0.0)
        self.assertEqual(sum(summary.shear_error_histogram.values()), 4)
        self.assertEqual(sum(summary.cog_histogram["counts"]), 4)
        self.assertIsNotNone(summary.pct_optimal)
        self.assertTrue(all(r.optimal == (r.feasible and r.loaded_weight == 7500.0) for r in records))

    def test_structured_report_is_reproducible(self):
        a = emit_report(*self.run_quick(3))
        b = emit_report(*self.run_quick(3))
        self.assertEqual(a, b)
        doc = parse_report(a)
        self.assertNotIn("mean_time", doc["summary"])
        self.assertNotIn("wall_time", doc["records"][0])
        self.assertEqual(len(doc["records"]), 3)
        self.assertIn("shear_curve", doc["series"])
        self.assertEqual(len(doc["series"]["disposition"]), self.inst.N)

    def test_timing_is_opt_in(self):
        summary, records = self.run_quick(1)
        doc = parse_report(emit_report(summary, records, timing=True))
        self.assertIn("mean_time", doc["summary"])
        self.assertIn("wall_time", doc["records"][0])

    def test_tabular_report_has_reference_row(self):
        summary, records = self.run_quick(2)
        table = pd.read_csv(io.StringIO(emit_report(summary, records, "tabular")))
        self.assertEqual(list(table["case"]), ["PL", "PL (reference)"])
        self.assertEqual(table.loc[1, "pct_optimal"], 33.0)
        self.assertNotIn("mean_time_s", table.columns)
        shear_cols = [f"pct_shear_errors_{k}" for k in SHEAR_BINS]
        self.assertAlmostEqual(float(table.loc[0, shear_cols].sum()), 100.0)

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            emit_report(*self.run_quick(1), fmt="xml")


@pytest.mark.slow
class TestAirbusAcceptance(unittest.TestCase):
    PARAMS = SolverParams(max_iterations=5000, restarts=2, seed=0)
    _cache = {}

    def bench(self, constraints, runs, capacity=True):
        key = (constraints, runs, capacity)
        if key not in self._cache:
            inst = airbus_instance(constraints, capacity=capacity)
            weights = calibrate_weights(inst, 1000, 0)
            self._cache[key] = run_benchmark(inst, self.PARAMS, runs, weights=weights, progress=False)
        return self._cache[key]

    def test_placement_validity(self):
        summary, records = self.bench("pl", 50)
        self.assertGreaterEqual(summary.pct_pl_valid, 85.0)
        valid = [r for r in records if r.report.pl_valid]
        self.assertTrue(all(r.loaded_weight <= 40000.0 + 1e-6 for r in valid))
        self.assertGreaterEqual(summary.max_weight, 39000.0)

    def test_without_capacity_every_position_is_filled(self):
        _, records = self.bench("pl", 20, capacity=False)
        valid = [r for r in records if r.report.pl_valid]
        self.assertTrue(valid)
        full = sum(1 for r in valid if r.occupied_positions == 20)
        self.assertGreaterEqual(full, 0.8 * len(valid))

    def test_cog_term_is_effective(self):
        pl, _ = self.bench("pl", 50)
        cl, _ = self.bench("pl+cl", 50)
        self.assertGreaterEqual(cl.pct_cl_valid, 95.0)
        self.assertLess(cl.mean_cog_error, pl.mean_cog_error)

    def test_shear_term_does_not_regress(self):
        pl, _ = self.bench("pl", 50)
        sl, _ = self.bench("pl+cl+sl", 50)
        self.assertEqual(tuple(sl.shear_error_histogram), SHEAR_BINS)
        self.assertGreaterEqual(sl.pct_sl_valid, pl.pct_sl_valid - 5.0)


class TestExactReference(unittest.TestCase):
    def test_dwave_exact_matches_reference(self):
        self.assertEqual(exact_solve(dwave_instance()).weight, 7500.0)


if __name__ == "__main__":
    unittest.main()
