import itertools
import unittest

import numpy as np

from factories import dwave_instance, make_instance
from plan_analysis import LoadingPlan, validate
from qubo_builder import (FAMILIES, PL_FAMILIES, ContiguityPenalty, PenaltyWeights, QuadraticModel, SlackError,
                          SquaredPenalty, VariableRegistry, WeightsError, assemble, build_capacity, build_cog,
                          build_contiguity, build_no_duplicates, build_no_overlap, build_objective, build_shear,
                          calibrate_weights, cog_slack_bound, default_weights, energies, energy, penalty_breakdown,
                          slack_expansion)

UNIT = PenaltyWeights.uniform(1.0).with_relations()


def bits_for(registry, placement, total=None):
    """Position bits from {container index: [positions]}, slacks left at zero."""
    z = np.zeros(total or registry.total_vars, dtype=np.int8)
    for i, positions in placement.items():
        for j in positions:
            z[registry.position_var(i, j)] = 1
    return z


def best_slack_value(penalty: SquaredPenalty, z) -> float:
    """
    Minimum of the penalty over every setting of its own slack group. Slack
    groups represent exactly the multiples of their granularity up to ubar.
    """
    base = penalty.residual(z)
    if penalty.slack is None or not penalty.slack.coefficients:
        return penalty.weight * base ** 2
    sign = -1.0 if penalty.family == "cog_lower" else 1.0
    g, ubar = penalty.slack.granularity, penalty.slack.ubar
    wanted = min(max(-sign * base, 0.0), ubar)
    s = min(round(wanted / g) * g, ubar)
    return penalty.weight * (base + sign * s) ** 2


def min_over_slack(term, Z):
    """Term values for each row of Z, minimised over every setting of the term's own slack bits."""
    group = getattr(term, "slack", None)
    if group is None or not group.var_indices:
        return term.values(Z)
    idx = list(group.var_indices)
    best = None
    for setting in itertools.product((0, 1), repeat=len(idx)):
        Z[:, idx] = setting
        values = term.values(Z)
        best = values if best is None else np.minimum(best, values)
    Z[:, idx] = 0
    return best


class TestSlackExpansion(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(slack_expansion(1, 1), [1])
        self.assertEqual(slack_expansion(1, 0.5), [0.5, 0.5])
        coeffs = slack_expansion(8000, 1)
        self.assertEqual(len(coeffs), 13)
        self.assertEqual(coeffs[:12], [2.0 ** k for k in range(12)])
        self.assertEqual(coeffs[-1], 3905)
        self.assertEqual(slack_expansion(0, 1), [])

    def test_coverage(self):
        for ubar, g in [(1, 1), (1, 0.5), (7, 1), (8, 1), (13, 0.5), (100, 1), (8000, 1)]:
            sums = {0.0}
            for c in slack_expansion(ubar, g):
                sums |= {s + c for s in sums}
            expected = {k * g for k in range(int(round(ubar / g)) + 1)}
            self.assertEqual(sorted(sums), sorted(expected), (ubar, g))

    def test_rejections(self):
        with self.assertRaises(SlackError):
            slack_expansion(-1, 1)
        with self.assertRaises(SlackError):
            slack_expansion(1.3, 1)
        with self.assertRaises(SlackError):
            slack_expansion(1, 0)

    def test_random_grids_represent_exactly(self):
        rng = np.random.default_rng(2024)
        steps = (0.125, 0.25, 0.5, 1.0, 2.0, 500.0, 1000.0)
        for _ in range(200):
            g = float(rng.choice(steps))
            units = int(rng.integers(0, 5001))
            coeffs = slack_expansion(units * g, g)
            self.assertLessEqual(len(coeffs), 20)
            reg = VariableRegistry([1], 1)
            group = reg.add_slack_group("s", coeffs, units * g, g)
            self.assertEqual(group.representable(), [k * g for k in range(units + 1)], (units, g))

    def test_bits_for_encodes_every_value(self):
        reg = VariableRegistry([1], 1)
        group = reg.add_slack_group("s", slack_expansion(13, 0.5), 13.0, 0.5)
        for k in range(27):
            bits = group.bits_for(k * 0.5)
            self.assertEqual(sum(c * b for c, b in zip(group.coefficients, bits)), k * 0.5)
        with self.assertRaises(SlackError):
            group.bits_for(13.5)


class TestObjective(unittest.TestCase):
    def test_coefficients(self):
        inst = make_instance(containers=((1, 1, 2134.0), (31, 3, 3132.0)))
        terms = build_objective(inst)
        self.assertEqual(len(terms), 2)
        self.assertTrue(all(c == -2134.0 for _, c in terms[0].expression))
        self.assertTrue(all(c == -1566.0 for _, c in terms[1].expression))
        self.assertEqual(len(terms[0].expression), 4)

    def test_empty(self):
        self.assertEqual(build_objective(make_instance(containers=())), [])


class TestPayloadPenalties(unittest.TestCase):
    def setUp(self):
        self.inst = make_instance(containers=((1, 1, 1000.0), (2, 1, 1500.0), (3, 2, 700.0)))
        self.registry = VariableRegistry.for_instance(self.inst)
        self.weights = PenaltyWeights.uniform(1.0).with_relations()

    def test_overlap(self):
        (pen,), group = build_no_overlap(self.inst, 1, self.weights, self.registry)
        self.assertEqual(group.granularity, 0.5)
        self.assertEqual(pen.value(bits_for(self.registry, {0: [1]})), 0.0)
        self.assertAlmostEqual(pen.value(bits_for(self.registry, {0: [1], 1: [1]})), 1.0)
        self.assertAlmostEqual(pen.value(bits_for(self.registry, {0: [1], 2: [1]})), 0.25)

    def test_duplicates(self):
        inst = make_instance(containers=((1, 1, 1000.0), (31, 3, 3000.0)))
        reg = VariableRegistry.for_instance(inst)
        (t1,), _ = build_no_duplicates(inst, 0, UNIT, reg)
        (t3,), group = build_no_duplicates(inst, 1, UNIT, reg)
        self.assertEqual(group.coefficients, (0.5, 0.5))
        self.assertEqual(t1.value(bits_for(reg, {0: [2]})), 0.0)
        self.assertEqual(t3.value(bits_for(reg, {1: [2, 3]})), 0.0)
        half = bits_for(reg, {1: [2]})
        self.assertAlmostEqual(t3.value(half), 0.25 * UNIT.p_dup)
        self.assertAlmostEqual(best_slack_value(t3, half), 0.0)

    def test_contiguity(self):
        inst = make_instance(containers=((31, 3, 3000.0),))
        reg = VariableRegistry.for_instance(inst)
        w = PenaltyWeights.uniform(1.0).with_relations()
        (pen,) = build_contiguity(inst, 0, w, reg)
        (dup,), _ = build_no_duplicates(inst, 0, w, reg)
        self.assertEqual(pen.value(bits_for(reg, {0: [1, 2]})), 0.0)
        self.assertEqual(pen.value(bits_for(reg, {0: [1, 3]})), w.p_contig)
        three = bits_for(reg, {0: [1, 2, 3]})
        self.assertAlmostEqual(pen.value(three), -0.5 * w.p_contig)
        self.assertGreater(best_slack_value(dup, three) + pen.value(three), 0.0)

    def test_contiguity_requires_weight_relation(self):
        inst = make_instance(containers=((31, 3, 3000.0),))
        with self.assertRaises(WeightsError):
            build_contiguity(inst, 0, PenaltyWeights.uniform(1.0), VariableRegistry.for_instance(inst))
        with self.assertRaises(WeightsError):
            assemble(inst, PenaltyWeights.uniform(1.0))

    def test_capacity(self):
        inst = dwave_instance()
        reg = VariableRegistry.for_instance(inst)
        (pen,), group = build_capacity(inst, UNIT, reg)
        self.assertEqual(len(group.coefficients), 13)
        self.assertEqual(group.ubar, 8000.0)
        empty = bits_for(reg, {})
        for k in group.var_indices:
            empty[k] = 1
        self.assertAlmostEqual(pen.value(empty), 0.0)
        under = bits_for(reg, {0: [1], 2: [2], 4: [3]})
        self.assertAlmostEqual(pen.value(under), 500.0 ** 2)
        self.assertAlmostEqual(best_slack_value(pen, under), 0.0)
        over = bits_for(reg, {1: [1], 4: [2], 5: [3]})
        self.assertGreater(best_slack_value(pen, over), 0.0)

    def test_capacity_exactly_full(self):
        inst = make_instance(containers=((1, 1, 4000.0), (2, 1, 4000.0)))
        reg = VariableRegistry.for_instance(inst)
        (pen,), _ = build_capacity(inst, UNIT, reg)
        self.assertEqual(pen.value(bits_for(reg, {0: [1], 1: [2]})), 0.0)


class TestContiguityLemma(unittest.TestCase):
    def test_more_than_two_cells_always_penalised(self):
        for N in range(3, 9):
            inst = make_instance(containers=((31, 3, 3000.0),), N=N)
            w = PenaltyWeights(p_overlap=1, p_dup=2.000001, p_contig=1, p_capacity=1, p_cog_target=1,
                               p_cog_lower=10, p_cog_upper=10, p_shear_left=1, p_shear_right=1)
            reg = VariableRegistry.for_instance(inst)
            (dup,), _ = build_no_duplicates(inst, 0, w, reg)
            (contig,) = build_contiguity(inst, 0, w, reg)
            for pattern in itertools.product((0, 1), repeat=N):
                if sum(pattern) <= 2:
                    continue
                z = bits_for(reg, {0: [j + 1 for j, b in enumerate(pattern) if b]})
                self.assertGreater(best_slack_value(dup, z) + contig.value(z), 0.0, pattern)

    def test_relation_is_needed(self):
        w = PenaltyWeights(p_overlap=1, p_dup=1.5, p_contig=1, p_capacity=1, p_cog_target=1,
                           p_cog_lower=10, p_cog_upper=10, p_shear_left=1, p_shear_right=1)
        for N in range(3, 9):
            inst = make_instance(containers=((31, 3, 3000.0),), N=N)
            reg = VariableRegistry.for_instance(inst)
            (dup,), _ = build_no_duplicates(inst, 0, w, reg)
            contig = ContiguityPenalty("contiguity[id=31]", w.p_contig,
                                       tuple(reg.position_var(0, j) for j in range(1, N + 1)))
            worst = min(best_slack_value(dup, z) + contig.value(z)
                        for z in (bits_for(reg, {0: [j + 1 for j, b in enumerate(p) if b]})
                                  for p in itertools.product((0, 1), repeat=N) if sum(p) >= 3))
            self.assertLessEqual(worst, 0.0, N)


class TestCenterOfGravity(unittest.TestCase):
    def test_target_residual(self):
        inst = make_instance(containers=((1, 1, 2000.0),), N=20, constraints="pl+cl")
        reg = VariableRegistry.for_instance(inst)
        (pen,), group = build_cog(inst, "target", UNIT, reg)
        self.assertIsNone(group)
        z = bits_for(reg, {0: [10]})
        self.assertAlmostEqual(pen.residual(z), -490000.0)
        self.assertAlmostEqual(pen.value(z), UNIT.p_cog_target * 490000.0 ** 2)

    def test_empty_payload_at_target(self):
        inst = make_instance(containers=((1, 1, 2000.0),), cog=(-4.0, 8.0, 0.0), constraints="pl+cl")
        reg = VariableRegistry.for_instance(inst)
        (pen,), _ = build_cog(inst, "target", UNIT, reg)
        self.assertEqual(pen.residual(bits_for(reg, {})), 0.0)

    def test_slack_bound_covers_every_loading(self):
        inst = make_instance(containers=((1, 1, 1000.0), (2, 2, 600.0), (31, 3, 1400.0)), N=3,
                             W_max=2500.0, W_e=5000.0, x_e=1.0, constraints="pl+cl")
        for mode in ("lower", "upper"):
            reg = VariableRegistry.for_instance(inst)
            (pen,), group = build_cog(inst, mode, UNIT, reg)
            bound = cog_slack_bound(inst, mode)
            self.assertLessEqual(bound, group.ubar + 1e-9)
            sign = 1.0 if mode == "lower" else -1.0
            for pattern in itertools.product((0, 1), repeat=inst.n * inst.N):
                plan = LoadingPlan([1, 2, 31], np.array(pattern).reshape(inst.n, inst.N))
                if validate(plan, inst).loaded_weight > inst.max_payload:
                    continue
                z = np.zeros(reg.total_vars, dtype=np.int8)
                z[:len(pattern)] = pattern
                self.assertLessEqual(sign * pen.residual(z), group.ubar + 1e-6)

    def test_lower_and_upper_zero_inside_bounds(self):
        inst = make_instance(containers=((1, 1, 2000.0),), N=4, constraints="pl+cl")
        reg = VariableRegistry.for_instance(inst)
        for mode in ("lower", "upper"):
            (pen,), _ = build_cog(inst, mode, UNIT, reg)
            z = bits_for(reg, {0: [3]})
            self.assertAlmostEqual(best_slack_value(pen, z), 0.0)

    def test_unknown_mode(self):
        inst = make_instance(constraints="pl+cl")
        with self.assertRaises(ValueError):
            build_cog(inst, "middle", UNIT, VariableRegistry.for_instance(inst))


class TestShear(unittest.TestCase):
    def test_even_example_zero_at_best_slack(self):
        inst = make_instance(containers=((1, 1, 3000.0), (2, 1, 2000.0), (3, 1, 1000.0), (4, 1, 500.0)),
                             constraints="pl+sl")
        reg = VariableRegistry.for_instance(inst)
        pens, groups = build_shear(inst, UNIT, reg)
        self.assertEqual([g.ubar for g in groups], [13000.0, 26000.0, 26000.0, 13000.0])
        z = bits_for(reg, {0: [1], 1: [2], 2: [3], 3: [4]})
        residuals = [-p.residual(z) for p in pens]
        self.assertEqual(residuals, [10000.0, 21000.0, 24500.0, 12500.0])
        for p in pens:
            self.assertEqual(best_slack_value(p, z), 0.0)

    def test_empty_aircraft_saturated_slack(self):
        inst = make_instance(constraints="pl+sl")
        reg = VariableRegistry.for_instance(inst)
        pens, groups = build_shear(inst, UNIT, reg)
        z = np.zeros(reg.total_vars, dtype=np.int8)
        for g in groups:
            z[list(g.var_indices)] = 1
        self.assertTrue(all(p.value(z) == 0.0 for p in pens))

    def test_odd_positions_split_middle_cell(self):
        inst = make_instance(containers=((1, 1, 1000.0),), N=3, constraints="pl+sl")
        reg = VariableRegistry.for_instance(inst)
        pens, _ = build_shear(inst, UNIT, reg)
        self.assertEqual([p.tag for p in pens],
                         ["shear_left[u=1]", "shear_right[u=2]", "shear_left[x=0]", "shear_right[x=0]"])
        origin_left = pens[2]
        coeff = dict(origin_left.expression)
        self.assertEqual(coeff[reg.position_var(0, 2)], 500.0)
        self.assertEqual(coeff[reg.position_var(0, 1)], 1000.0)


class TestAssemble(unittest.TestCase):
    def test_dwave_counts(self):
        model = assemble(dwave_instance(), UNIT)
        self.assertEqual(model.registry.num_position_vars, 24)
        self.assertEqual(model.registry.slack_count, 23)
        self.assertEqual(model.num_vars, 47)

    def test_objective_only(self):
        inst = make_instance(containers=((1, 1, 1000.0), (2, 1, 500.0)), constraints="none")
        model = assemble(inst, UNIT)
        self.assertEqual(model.num_vars, 8)
        self.assertEqual(len(model.coefficients), 8)
        self.assertTrue(all(i == j for i, j in model.coefficients))
        self.assertEqual(model.offset, 0.0)

    def test_slack_indices_follow_positions(self):
        model = assemble(make_instance(containers=((1, 1, 10.0), (31, 3, 20.0)), constraints="pl+cl+sl"), UNIT)
        reg = model.registry
        expected = reg.num_position_vars
        for g in reg.slack_groups:
            self.assertEqual(list(g.var_indices), list(range(expected, expected + len(g.var_indices))))
            expected += len(g.var_indices)
        self.assertEqual(expected, reg.total_vars)

    def test_slack_groups_cover_their_grid(self):
        inst = make_instance(containers=((1, 1, 30.0), (2, 2, 12.0), (31, 3, 18.0)), N=3, W_max=50.0,
                             S0=40.0, L=6.0, cog=(-1.0, 2.0, 0.5), constraints="pl+cl+sl")
        model = assemble(inst, UNIT)
        for g in model.registry.slack_groups:
            if len(g.coefficients) > 20:
                continue
            steps = int(round(g.ubar / g.granularity))
            self.assertEqual(np.round(np.array(g.representable()) / g.granularity).astype(int).tolist(),
                             list(range(steps + 1)), g.tag)
            if g.coefficients:
                self.assertAlmostEqual(min(g.coefficients), g.granularity)

    def test_locate(self):
        model = assemble(dwave_instance(), UNIT)
        self.assertEqual(model.registry.locate(5), {"index": 5, "kind": "position", "container": 2, "position": 2})
        self.assertEqual(model.registry.locate(24)["kind"], "slack")


class TestEnergy(unittest.TestCase):
    def test_toy_models(self):
        model = QuadraticModel.from_coefficients({(0, 0): -1.0, (1, 1): -1.0})
        self.assertEqual(energy(model, [1, 1]), -2.0)
        offset = QuadraticModel.from_coefficients({(0, 1): 3.0}, offset=4.5, num_vars=2)
        self.assertEqual(energy(offset, [0, 0]), 4.5)

    def test_length_mismatch(self):
        model = QuadraticModel.from_coefficients({(0, 0): 1.0})
        with self.assertRaises(ValueError):
            energy(model, [1, 0])

    def test_storage_order_does_not_matter(self):
        rng = np.random.default_rng(3)
        coeffs = {(int(i), int(j)): float(c) for i, j, c in zip(rng.integers(0, 6, 15), rng.integers(0, 6, 15),
                                                                   rng.normal(size=15))}
        flipped = {}
        for (i, j), c in coeffs.items():
            flipped[(j, i)] = flipped.get((j, i), 0.0) + c
        a = QuadraticModel.from_coefficients(coeffs, 1.0, 6)
        b = QuadraticModel.from_coefficients(flipped, 1.0, 6)
        for z in itertools.product((0, 1), repeat=6):
            self.assertAlmostEqual(energy(a, z), energy(b, z))

    def test_matches_term_by_term_evaluation(self):
        rng = np.random.default_rng(11)
        labels = ["pl", "pl+cl", "pl+cl+sl", "none"]
        for k in range(10):
            n, N = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            containers = [(i + 1, int(rng.integers(1, 4)), float(rng.integers(100, 900))) for i in range(n)]
            inst = make_instance(containers=containers, N=N, W_max=float(rng.integers(500, 2000)),
                                 W_e=5000.0, L=8.0, S0=1500.0, cog=(-1.0, 2.0, 0.5),
                                 constraints=labels[k % 4], capacity=bool(k % 3))
            weights = calibrate_weights(inst, samples=50, seed=k)
            model = assemble(inst, weights)
            Z = rng.integers(0, 2, size=(100, model.num_vars))
            batch = energies(model, Z)
            for z, e in zip(Z, batch):
                direct = sum(penalty_breakdown(model, z).values())
                self.assertAlmostEqual(e / max(1.0, abs(direct)), direct / max(1.0, abs(direct)), places=6)
                self.assertAlmostEqual(energy(model, z) / max(1.0, abs(direct)), direct / max(1.0, abs(direct)),
                                       places=6)

    def test_all_zero_is_offset(self):
        model = assemble(dwave_instance("pl+cl+sl"), UNIT)
        self.assertEqual(energy(model, np.zeros(model.num_vars)), model.offset)
        self.assertGreaterEqual(model.offset, 0.0)


class TestZeroPenaltyFeasibility(unittest.TestCase):
    def test_exhaustive_small(self):
        inst = make_instance(containers=((1, 1, 1500.0), (2, 2, 1000.0), (31, 3, 2000.0)), N=3, W_max=3500.0)
        weights = PenaltyWeights(p_overlap=1, p_dup=3, p_contig=1, p_capacity=1, p_cog_target=1,
                                 p_cog_lower=10, p_cog_upper=10, p_shear_left=1, p_shear_right=1)
        model = assemble(inst, weights)
        pl_terms = [t for t in model.terms if t.family in ("overlap", "duplicates", "contiguity", "capacity")]
        npos = model.registry.num_position_vars
        for pattern in itertools.product((0, 1), repeat=npos):
            z = np.zeros(model.num_vars, dtype=np.int8)
            z[:npos] = pattern
            total = sum(best_slack_value(t, z) if isinstance(t, SquaredPenalty) else t.value(z) for t in pl_terms)
            plan = LoadingPlan([1, 2, 31], np.array(pattern).reshape(inst.n, inst.N))
            self.assertEqual(abs(total) < 1e-9, validate(plan, inst).pl_valid, pattern)

    def test_every_small_mix_over_all_slack_settings(self):
        masses = {1: 3.0, 2: 2.0, 3: 4.0}
        weights = PenaltyWeights(p_overlap=1, p_dup=3, p_contig=1, p_capacity=1, p_cog_target=1,
                                 p_cog_lower=10, p_cog_upper=10, p_shear_left=1, p_shear_right=1)
        for n in range(1, 4):
            for types in itertools.product((1, 2, 3), repeat=n):
                for N in range(1, 4):
                    inst = make_instance(containers=tuple((k + 1, t, masses[t]) for k, t in enumerate(types)),
                                         N=N, W_max=5.0)
                    model = assemble(inst, weights)
                    npos = model.registry.num_position_vars
                    patterns = np.array(list(itertools.product((0, 1), repeat=npos)), dtype=np.int8)
                    Z = np.zeros((len(patterns), model.num_vars), dtype=np.int8)
                    Z[:, :npos] = patterns
                    total = np.zeros(len(patterns))
                    for term in model.terms:
                        if term.family in PL_FAMILIES:
                            total += min_over_slack(term, Z)
                    for pattern, value in zip(patterns, total):
                        plan = LoadingPlan(list(range(1, n + 1)), pattern.reshape(n, N))
                        self.assertEqual(abs(value) < 1e-9, validate(plan, inst).pl_valid, (types, N, pattern))


class TestWeights(unittest.TestCase):
    def test_calibration_deterministic_and_related(self):
        inst = dwave_instance("pl+cl+sl")
        a = calibrate_weights(inst, samples=200, seed=5)
        b = calibrate_weights(inst, samples=200, seed=5)
        self.assertEqual(a, b)
        self.assertGreater(a.p_dup, 2 * a.p_contig)
        self.assertEqual(a.p_cog_lower, a.p_cog_upper)
        self.assertAlmostEqual(a.p_cog_lower, 10 * a.p_cog_target)

    def test_calibration_fallback_positive(self):
        inst = make_instance(containers=(), constraints="pl+cl+sl")
        weights = calibrate_weights(inst, samples=10, seed=0)
        self.assertTrue(all(v > 0 for v in weights.as_dict().values()))

    def test_calibration_rejects_zero_samples(self):
        with self.assertRaises(ValueError):
            calibrate_weights(dwave_instance(), samples=0)

    def test_dominance_floor(self):
        inst = dwave_instance()
        floored = calibrate_weights(inst, samples=100, seed=0, floor=2.0)
        self.assertGreaterEqual(floored.p_overlap, 2.0 * 3500.0)
        self.assertGreaterEqual(floored.p_capacity, 2.0 * 3500.0)

    def test_default_weights(self):
        inst = make_instance(containers=((1, 1, 10.0), (2, 2, 4.0)))
        w = default_weights(inst)
        self.assertEqual(w.p_overlap, 15.0 ** 2)
        self.assertGreater(w.p_dup, 2 * w.p_contig)
        self.assertEqual(w.p_cog_lower, 10 * w.p_cog_target)

    def test_validation(self):
        with self.assertRaises(WeightsError):
            PenaltyWeights(**{**UNIT.as_dict(), "p_overlap": 0.0}).validate()
        with self.assertRaises(WeightsError):
            PenaltyWeights.from_dict({"p_overlap": 1.0})
        self.assertEqual(PenaltyWeights.from_dict(UNIT.as_dict()), UNIT)

    def test_breakdown_families(self):
        model = assemble(dwave_instance("pl+cl+sl"), UNIT)
        families = set(penalty_breakdown(model, np.zeros(model.num_vars)))
        self.assertTrue(families <= set(FAMILIES) | {"objective"})
        self.assertIn("shear_left", families)


if __name__ == "__main__":
    unittest.main()
