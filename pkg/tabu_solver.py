"""
tabu_solver.py

Heuristic minimisation of a QuadraticModel over bit vectors.

 - tabu_solve   : tabu search with aspiration and random restarts
 - anneal_solve : single-flip Metropolis annealing (comparison baseline)

Models assembled from an instance are searched over their position bits:
a move flips one position bit and resets every slack group it touches to
its best value (CompletedState). Bare coefficient models fall back to plain
single flips over all variables (FlipState). Both keep the flip gains of
every move current after each step.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from analytics_utils import TOLERANCE, as_bits
from qubo_builder import ContiguityPenalty, LinearTerm, QuadraticModel, energy

logger = logging.getLogger("tabu_solver")

DEFAULT_RESTARTS = 20


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SolverParams:
    """
    Search parameters. Unset sizes resolve against the number of searched
    bits n: max_iterations = 50*n per restart, tabu_tenure = max(10, n/4),
    stall_limit = 10*n.
    """
    max_iterations: Optional[int] = None
    tabu_tenure: Optional[int] = None
    restarts: int = DEFAULT_RESTARTS
    seed: int = 0
    target_energy: Optional[float] = None
    stall_limit: Optional[int] = None

    def resolve(self, num_vars: int) -> "SolverParams":
        params = replace(
            self,
            max_iterations=self.max_iterations if self.max_iterations is not None else 50 * num_vars,
            tabu_tenure=self.tabu_tenure if self.tabu_tenure is not None else max(10, num_vars // 4),
            stall_limit=self.stall_limit if self.stall_limit is not None else 10 * num_vars,
        )
        params.check()
        return params

    def check(self):
        if self.max_iterations is not None and self.max_iterations < 1:
            raise SolverError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.tabu_tenure is not None and self.tabu_tenure < 0:
            raise SolverError(f"tabu_tenure must be >= 0, got {self.tabu_tenure}")
        if self.restarts < 1:
            raise SolverError(f"restarts must be >= 1, got {self.restarts}")
        if self.stall_limit is not None and self.stall_limit < 1:
            raise SolverError(f"stall_limit must be >= 1, got {self.stall_limit}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SolverError(f"seed must fit in 64 bits, got {self.seed}")
        return self


@dataclass
class RawSolution:
    bits: np.ndarray
    energy: float
    iterations_used: int
    wall_time: float
    trace: List[Tuple[int, float]] = field(default_factory=list)
    restart: int = 0


class FlipState:
    """Bit vector, its energy and the energy change of every single flip."""

    def __init__(self, model: QuadraticModel, bits):
        self.diag, self.coupling = model.couplings
        self.bits = as_bits(bits, model.num_vars).copy()
        z = self.bits.astype(float)
        local = self.diag + self.coupling @ z
        self.gains = (1.0 - 2.0 * z) * local
        self.energy = energy(model, self.bits)

    def flip(self, k: int):
        d = self.gains[k]
        step = 1.0 - 2.0 * self.bits[k]  # +1 when k goes 0 -> 1
        self.bits[k] ^= 1
        self.energy += d
        self.gains[k] = -d
        lo, hi = self.coupling.indptr[k], self.coupling.indptr[k + 1]
        nbrs = self.coupling.indices[lo:hi]
        if nbrs.size:
            signs = 1.0 - 2.0 * self.bits[nbrs]
            self.gains[nbrs] += signs * step * self.coupling.data[lo:hi]


class SlackLayout:
    """
    Position-space view of an assembled model. Each squared penalty
    w*(r + sign*s)^2 sees the position bits only through r = a.p + b, so its
    best slack value is -sign*r snapped onto the slack grid and clipped to
    [0, ubar]. Built once per model; rows are penalties, columns positions.
    """

    def __init__(self, model: QuadraticModel):
        registry = model.registry
        P = registry.num_position_vars
        self.num_positions = P
        self.num_vars = model.num_vars
        self.linear = np.zeros(P)
        self.contig = np.zeros(P)
        self.left = np.full(P, P)
        self.right = np.full(P, P)
        rows, cols, data = [], [], []
        weight, constant, sign, step, ubar, groups = [], [], [], [], [], []
        for term in model.terms:
            if isinstance(term, LinearTerm):
                for k, a in term.expression:
                    self.linear[k] += a
            elif isinstance(term, ContiguityPenalty):
                vs = term.variables
                for pos, k in enumerate(vs):
                    self.contig[k] += term.weight
                    if pos > 0:
                        self.left[k] = vs[pos - 1]
                    if pos + 1 < len(vs):
                        self.right[k] = vs[pos + 1]
            else:
                t = len(weight)
                group = term.slack if term.slack is not None and term.slack.coefficients else None
                coeff = dict(term.expression)
                for k, a in term.expression:
                    if k < P:
                        rows.append(t)
                        cols.append(k)
                        data.append(a)
                weight.append(term.weight)
                constant.append(term.constant)
                if group is None:
                    sign.append(0.0)
                    step.append(1.0)
                    ubar.append(0.0)
                else:
                    first = group.var_indices[0]
                    sign.append(1.0 if coeff[first] * group.coefficients[0] > 0 else -1.0)
                    step.append(group.granularity)
                    ubar.append(group.ubar)
                groups.append(group)

        order = np.lexsort((np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)))
        self.rows = np.asarray(rows, dtype=np.int64)[order]
        self.cols = np.asarray(cols, dtype=np.int64)[order]
        self.data = np.asarray(data, dtype=float)[order]
        self.indptr = np.concatenate(([0], np.cumsum(np.bincount(self.cols, minlength=P))))
        self.weight = np.asarray(weight, dtype=float)
        self.constant = np.asarray(constant, dtype=float)
        self.sign = np.asarray(sign, dtype=float)
        self.step = np.asarray(step, dtype=float)
        self.ubar = np.asarray(ubar, dtype=float)
        self.groups = groups
        # per-entry copies of the row parameters
        self._w, self._s = self.weight[self.rows], self.sign[self.rows]
        self._g, self._u = self.step[self.rows], self.ubar[self.rows]

    @classmethod
    def for_model(cls, model: QuadraticModel) -> Optional["SlackLayout"]:
        registry = model.registry
        if registry is None or not model.terms or registry.num_position_vars == 0:
            return None
        return cls(model)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        r = self.constant.copy()
        np.add.at(r, self.rows, self.data * x[self.cols])
        return r

    @staticmethod
    def _slack(r, sign, step, ubar):
        return np.clip(np.rint(-sign * r / step) * step, 0.0, ubar)

    @classmethod
    def _penalty(cls, r, weight, sign, step, ubar):
        e = r + sign * cls._slack(r, sign, step, ubar)
        return weight * e * e

    def row_penalties(self, r: np.ndarray, rows=None) -> np.ndarray:
        if rows is None:
            return self._penalty(r, self.weight, self.sign, self.step, self.ubar)
        return self._penalty(r, self.weight[rows], self.sign[rows], self.step[rows], self.ubar[rows])

    def entry_penalties(self, r_entries: np.ndarray) -> np.ndarray:
        return self._penalty(r_entries, self._w, self._s, self._g, self._u)

    def slack_values(self, r: np.ndarray) -> np.ndarray:
        return self._slack(r, self.sign, self.step, self.ubar)


class CompletedState:
    """Position bits with every slack group at its best value, and the gain of every position flip."""

    def __init__(self, layout: SlackLayout, positions):
        self.layout = layout
        self.bits = as_bits(positions, layout.num_positions).copy()
        self.r = layout.residuals(self.bits)
        self.pen = layout.row_penalties(self.r)
        self.energy = self._energy()
        self.gains = self._gains()

    def _energy(self) -> float:
        L, x = self.layout, self.bits.astype(float)
        xp = np.append(x, 0.0)
        contig = float(L.contig @ (0.5 * x - x * xp[L.right]))
        return float(L.linear @ x) + float(self.pen.sum()) + contig

    def _gains(self) -> np.ndarray:
        L = self.layout
        delta = 1.0 - 2.0 * self.bits
        moved = self.r[L.rows] + delta[L.cols] * L.data
        change = L.entry_penalties(moved) - self.pen[L.rows]
        gains = np.bincount(L.cols, weights=change, minlength=L.num_positions)
        xp = np.append(self.bits, 0).astype(float)
        gains += delta * (L.linear + L.contig * (0.5 - xp[L.left] - xp[L.right]))
        return gains

    def flip(self, k: int):
        L = self.layout
        step = 1.0 - 2.0 * self.bits[k]
        self.bits[k] ^= 1
        lo, hi = L.indptr[k], L.indptr[k + 1]
        rows = L.rows[lo:hi]
        self.r[rows] += step * L.data[lo:hi]
        self.pen[rows] = L.row_penalties(self.r[rows], rows)
        self.energy = self._energy()
        self.gains = self._gains()

    def expanded(self) -> np.ndarray:
        """Full QUBO bit vector: position bits followed by the best slack bits."""
        L = self.layout
        z = np.zeros(L.num_vars, dtype=np.int8)
        z[:L.num_positions] = self.bits
        for group, value in zip(L.groups, L.slack_values(self.r)):
            if group is not None:
                z[list(group.var_indices)] = group.bits_for(value)
        return z


def _check_model(model: QuadraticModel):
    if model.num_vars < 1:
        raise SolverError("model has no variables")


def _restart_rngs(seed: int, restarts: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(restarts)]


def _reached(target, value) -> bool:
    return target is not None and value <= target + TOLERANCE * max(1.0, abs(target))


def tabu_solve(model: QuadraticModel, params: Optional[SolverParams] = None) -> RawSolution:
    """
    Tabu search from `restarts` uniform random starts. Sizes in `params`
    resolve against the searched bits (position bits for assembled models).
    """
    _check_model(model)
    layout = SlackLayout.for_model(model)
    n = layout.num_positions if layout is not None else model.num_vars
    params = (params or SolverParams()).resolve(n)
    start = time.perf_counter()

    def fresh(bits):
        return CompletedState(layout, bits) if layout is not None else FlipState(model, bits)

    best_bits, best_energy, best_restart = None, math.inf, 0
    trace: List[Tuple[int, float]] = []
    used = 0
    stop = False
    for r, rng in enumerate(_restart_rngs(params.seed, params.restarts)):
        state = fresh(rng.integers(0, 2, size=n, dtype=np.int8))
        tabu_until = np.zeros(n, dtype=np.int64)
        local_best = state.energy
        if state.energy < best_energy:
            best_bits, best_energy, best_restart = state.bits.copy(), state.energy, r
            trace.append((used, best_energy))
        stall = 0
        for it in range(params.max_iterations):
            if _reached(params.target_energy, best_energy):
                stop = True
                break
            used += 1
            k = int(np.argmin(state.gains))
            aspires = state.energy + state.gains[k] < best_energy - TOLERANCE * max(1.0, abs(best_energy))
            if tabu_until[k] > it and not aspires:
                masked = np.where(tabu_until > it, np.inf, state.gains)
                j = int(np.argmin(masked))
                if np.isfinite(masked[j]):
                    k = j
            state.flip(k)
            tabu_until[k] = it + 1 + params.tabu_tenure
            if state.energy < local_best - TOLERANCE * max(1.0, abs(local_best)):
                local_best, stall = state.energy, 0
            else:
                stall += 1
            if state.energy < best_energy - TOLERANCE * max(1.0, abs(best_energy)):
                best_bits, best_energy, best_restart = state.bits.copy(), state.energy, r
                trace.append((used, best_energy))
            if stall >= params.stall_limit:
                break
        logger.debug("restart %d: local best %.6f after %d iterations (global best %.6f)",
                     r, local_best, used, best_energy)
        if stop or _reached(params.target_energy, best_energy):
            break

    if layout is not None:
        best_bits = CompletedState(layout, best_bits).expanded()
    exact = energy(model, best_bits)
    if abs(exact - best_energy) > 1e-6 * max(1.0, abs(exact)):
        logger.warning("incremental energy drifted: %.9g vs %.9g", best_energy, exact)
    wall = time.perf_counter() - start
    logger.debug("tabu_solve: energy %.6f, %d iterations, %.3fs", exact, used, wall)
    return RawSolution(best_bits, exact, used, wall, trace, best_restart)


def anneal_solve(model: QuadraticModel, params: Optional[SolverParams] = None,
                 t_start: Optional[float] = None, t_end: Optional[float] = None) -> RawSolution:
    """Metropolis single flips, geometric cooling from t_start to t_end over max_iterations per restart."""
    _check_model(model)
    params = (params or SolverParams()).resolve(model.num_vars)
    n = model.num_vars
    start = time.perf_counter()

    best_bits, best_energy, best_restart = None, math.inf, 0
    trace: List[Tuple[int, float]] = []
    used = 0
    for r, rng in enumerate(_restart_rngs(params.seed, params.restarts)):
        state = FlipState(model, rng.integers(0, 2, size=n, dtype=np.int8))
        hot = t_start if t_start is not None else max(float(np.max(np.abs(state.gains))), 1.0)
        cold = t_end if t_end is not None else hot * 1e-4
        steps = params.max_iterations
        ratio = (cold / hot) ** (1.0 / max(1, steps - 1))
        temp = hot
        if state.energy < best_energy:
            best_bits, best_energy, best_restart = state.bits.copy(), state.energy, r
            trace.append((used, best_energy))
        picks = rng.integers(0, n, size=steps)
        draws = rng.random(steps)
        for it in range(steps):
            used += 1
            k = int(picks[it])
            d = state.gains[k]
            if d <= 0 or draws[it] < math.exp(-d / temp):
                state.flip(k)
                if state.energy < best_energy - TOLERANCE * max(1.0, abs(best_energy)):
                    best_bits, best_energy, best_restart = state.bits.copy(), state.energy, r
                    trace.append((used, best_energy))
            temp *= ratio
        if _reached(params.target_energy, best_energy):
            break

    exact = energy(model, best_bits)
    return RawSolution(best_bits, exact, used, time.perf_counter() - start, trace, best_restart)
