"""
exact_solver.py

Exact maximum-weight loading by branch and bound over position assignments.

Containers are taken heaviest first; each is either left out or put on one
position (T1, T2) or two adjacent positions (T3). A branch is cut when
  - a position would be over-full,
  - the payload limit would be exceeded,
  - a shear station is already over its limit (shear sums only grow), or
  - the best reachable weight cannot reach the incumbent.
Leaves are checked with plan_analysis.validate against the active limits.
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from analytics_utils import EXACT_LIMIT, TOLERANCE, close, leq
from cargo_model import ContainerType, ProblemInstance, shear_stations
from plan_analysis import LoadingPlan, ValidationReport, validate

logger = logging.getLogger("exact_solver")


class IntractableError(ValueError):
    pass


@dataclass(frozen=True)
class ExactResult:
    plan: LoadingPlan
    weight: float
    feasible: bool
    report: ValidationReport
    nodes: int
    wall_time: float


def _units(ctype: ContainerType) -> int:
    """Half-cells used per occupied position."""
    return 1 if ctype is ContainerType.T2 else 2


def _options(ctype: ContainerType, N: int) -> List[Tuple[int, ...]]:
    if ctype is ContainerType.T3:
        return [(j, j + 1) for j in range(N - 1)]
    return [(j,) for j in range(N)]


class _Search:
    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        self.cs = instance.constraints
        self.order = sorted(range(instance.n), key=lambda i: (-instance.containers[i].mass, i))
        self.cell_mass = [instance.containers[i].cell_mass for i in range(instance.n)]
        self.units = [_units(c.ctype) for c in instance.containers]
        self.options = [_options(c.ctype, instance.N) for c in instance.containers]
        self.full_mass = [c.mass if self.options[i] else 0.0 for i, c in enumerate(instance.containers)]
        self.footprint = [self.units[i] * c.ctype.cells for i, c in enumerate(instance.containers)]
        self.density = [m / f for m, f in zip(self.full_mass, self.footprint)]
        self.limit = instance.max_payload if self.cs.capacity else float("inf")
        self.stations = []
        if self.cs.sl:
            for st in shear_stations(instance.N):
                cells = np.zeros(instance.N)
                for j, share in st.cells(instance.N):
                    cells[j - 1] = share
                self.stations.append((cells, instance.shear_limit_at(st.x(instance.length, instance.N))))

        self.p = np.zeros((instance.n, instance.N), dtype=np.int8)
        self.free = np.full(instance.N, 2, dtype=np.int64)
        self.mass = np.zeros(instance.N)
        self.best_weight = -1.0
        self.best_bits: Optional[Tuple[int, ...]] = None
        self.best_report: Optional[ValidationReport] = None
        self.nodes = 0

    def bound(self, depth: int) -> float:
        """Fractional fill of the free half-cells by the remaining containers."""
        space = float(self.free.sum())
        gain = 0.0
        for i in sorted(self.order[depth:], key=lambda k: -self.density[k]):
            if space <= 0:
                break
            take = min(1.0, space / self.footprint[i])
            gain += take * self.full_mass[i]
            space -= self.footprint[i]
        return gain

    def shear_ok(self) -> bool:
        return all(leq(float(cells @ self.mass), limit) for cells, limit in self.stations)

    def leaf(self, weight: float):
        if weight < self.best_weight - TOLERANCE * max(1.0, self.best_weight):
            return
        bits = tuple(self.p.ravel().tolist())
        tie = close(weight, self.best_weight)
        if tie and self.best_bits is not None and bits >= self.best_bits:
            return
        plan = LoadingPlan([c.id for c in self.instance.containers], self.p.copy())
        report = validate(plan, self.instance)
        if not report.feasible(self.cs):
            return
        if not tie:
            self.best_weight = weight
        self.best_bits, self.best_report = bits, report

    def run(self, depth: int = 0, weight: float = 0.0):
        self.nodes += 1
        if depth == len(self.order):
            self.leaf(weight)
            return
        reach = min(weight + self.bound(depth), self.limit)
        if reach < self.best_weight - TOLERANCE * max(1.0, self.best_weight):
            return
        i = self.order[depth]
        need = self.units[i]
        for cells in self.options[i]:
            added = self.cell_mass[i] * len(cells)
            if not leq(weight + added, self.limit):
                continue
            if any(self.free[j] < need for j in cells):
                continue
            for j in cells:
                self.free[j] -= need
                self.mass[j] += self.cell_mass[i]
                self.p[i, j] = 1
            if self.shear_ok():
                self.run(depth + 1, weight + added)
            for j in cells:
                self.free[j] += need
                self.mass[j] -= self.cell_mass[i]
                self.p[i, j] = 0
        self.run(depth + 1, weight)


def exact_solve(instance: ProblemInstance, force: bool = False, limit: Optional[int] = None) -> ExactResult:
    limit = EXACT_LIMIT if limit is None else limit
    size = instance.n * instance.N
    if size > limit and not force:
        raise IntractableError(f"n*N = {size} exceeds the exact-solver limit {limit} (use force)")
    start = time.perf_counter()
    ids = [c.id for c in instance.containers]

    if not instance.constraints.pl:
        plan = LoadingPlan(ids, np.ones((instance.n, instance.N), dtype=np.int8))
        report = validate(plan, instance)
        return ExactResult(plan, report.loaded_weight, True, report, 1, time.perf_counter() - start)

    search = _Search(instance)
    search.run()
    wall = time.perf_counter() - start
    if search.best_bits is None:
        plan = LoadingPlan.empty(instance)
        logger.warning("No feasible loading for %s [%s]", instance.name, instance.constraints.label)
        return ExactResult(plan, 0.0, False, validate(plan, instance), search.nodes, wall)

    matrix = np.array(search.best_bits, dtype=np.int8).reshape(instance.n, instance.N)
    plan = LoadingPlan(ids, matrix)
    logger.info("Exact optimum for %s [%s]: %.1f kg (%d nodes, %.3fs)",
                instance.name, instance.constraints.label, search.best_report.loaded_weight, search.nodes, wall)
    return ExactResult(plan, search.best_report.loaded_weight, True, search.best_report, search.nodes, wall)
