"""
qubo_builder.py

Compiles a ProblemInstance into a QUBO model  E(z) = z^T Q z + offset.

z is the concatenation of the n*N position variables p_{i,j} and the slack
variables of every inequality. Each constraint family is a penalty:

  objective   -sum t_i m_i p_ij
  overlap     P_O  (sum_i d_i p_ij + slack - 1)^2                 per position j
  duplicates  P_D  (t_i sum_j p_ij + slack - 1)^2                 per container i
  contiguity  P_C  (1/2 sum_j p_ij - sum_j p_ij p_i,j+1)          per large container
  capacity    P_W  (sum t_i m_i p_ij + slack - W_p)^2
  cog_target  P_Ct (xbar - x_t * xunder)^2
  cog_lower   P_Cl (xbar - x_min * xunder - slack)^2
  cog_upper   P_Cu (xbar - x_max * xunder + slack)^2
  shear_left  P_Sl (S_left(u) + slack - Smax(x_u))^2              per left station
  shear_right P_Sr (S_right(u) + slack - Smax(x_u))^2             per right station

Every penalty keeps its unexpanded definition next to the expanded matrix so
the model can be checked term by term (penalty_breakdown).
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, fields, replace
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from analytics_utils import (CALIBRATION_SAMPLES, TOLERANCE, WEIGHT_FLOOR, as_bits,
                             ceil_to_step, close, floor_to_step, is_multiple, residual_step)
from cargo_model import ContainerType, ProblemInstance, shear_stations

logger = logging.getLogger("qubo_builder")

FAMILIES = (
    "overlap", "duplicates", "contiguity", "capacity",
    "cog_target", "cog_lower", "cog_upper", "shear_left", "shear_right",
)
PL_FAMILIES = ("overlap", "duplicates", "contiguity", "capacity")

DUP_MARGIN = 2.000001
COG_BOUND_RATIO = 10.0


class SlackError(ValueError):
    pass


class WeightsError(ValueError):
    pass


# ----------------------------
# Slack variables
# ----------------------------
def slack_expansion(ubar: float, granularity: float) -> List[float]:
    """
    Capped binary expansion of the residual range [0, ubar] on a grid of
    `granularity`: g*{1, 2, ..., 2^(r-1), M - (2^r - 1)} with M = ubar/g and
    r = floor(log2 M). Every multiple of g in [0, ubar] is representable and
    nothing above ubar is.
    """
    if not granularity > 0:
        raise SlackError(f"granularity must be > 0, got {granularity}")
    if ubar < 0 and not close(ubar, 0.0):
        raise SlackError(f"residual bound must be >= 0, got {ubar}")
    if not is_multiple(ubar, granularity):
        raise SlackError(f"residual bound {ubar} is not a multiple of {granularity}")
    M = int(round(ubar / granularity))
    if M <= 0:
        return []
    r = M.bit_length() - 1
    steps = [2 ** k for k in range(r)]
    last = M - (2 ** r - 1)
    if last > 0:
        steps.append(last)
    return [granularity * s for s in steps]


@dataclass(frozen=True)
class SlackGroup:
    tag: str
    coefficients: Tuple[float, ...]
    var_indices: Tuple[int, ...]
    ubar: float
    granularity: float

    def representable(self) -> List[float]:
        """All sums sum_k c_k v_k over binary v (exponential; small groups only)."""
        sums = {0.0}
        for c in self.coefficients:
            sums |= {s + c for s in sums}
        return sorted(sums)

    def bits_for(self, value: float) -> List[int]:
        """Slack bits encoding `value` (a grid multiple in [0, ubar])."""
        units = [int(round(c / self.granularity)) for c in self.coefficients]
        m = int(round(value / self.granularity))
        if not 0 <= m <= sum(units):
            raise SlackError(f"{self.tag}: value {value} outside [0, {self.ubar}]")
        out = [0] * len(units)
        if not units:
            return out
        # units = 1, 2, ..., 2^(r-1), last
        low = sum(units[:-1])
        if m > low:
            out[-1] = 1
            m -= units[-1]
        for k in range(len(units) - 1):
            out[k] = (m >> k) & 1
        return out


class VariableRegistry:
    """
    Flat indexing of z. Position variables come first, container-major:
    index(i, j) = i*N + (j - 1) for container index i (0-based, instance
    order) and position j (1-based). Slack groups follow contiguously in the
    order they are registered.
    """

    def __init__(self, container_ids: Sequence[int], num_positions: int):
        self.container_ids = tuple(container_ids)
        self.num_positions = int(num_positions)
        self._groups: List[SlackGroup] = []
        self._next = len(self.container_ids) * self.num_positions
        self._frozen = False

    @classmethod
    def for_instance(cls, instance: ProblemInstance) -> "VariableRegistry":
        return cls([c.id for c in instance.containers], instance.N)

    @property
    def num_position_vars(self) -> int:
        return len(self.container_ids) * self.num_positions

    @property
    def total_vars(self) -> int:
        return self._next

    @property
    def slack_count(self) -> int:
        return self._next - self.num_position_vars

    @property
    def slack_groups(self) -> Tuple[SlackGroup, ...]:
        return tuple(self._groups)

    def position_var(self, i: int, j: int) -> int:
        if not 0 <= i < len(self.container_ids):
            raise IndexError(f"container index {i} out of range")
        if not 1 <= j <= self.num_positions:
            raise IndexError(f"position {j} out of range 1..{self.num_positions}")
        return i * self.num_positions + (j - 1)

    def add_slack_group(self, tag: str, coefficients: Sequence[float], ubar: float, granularity: float) -> SlackGroup:
        if self._frozen:
            raise RuntimeError("registry is frozen")
        start = self._next
        indices = tuple(range(start, start + len(coefficients)))
        group = SlackGroup(tag, tuple(float(c) for c in coefficients), indices, float(ubar), float(granularity))
        self._groups.append(group)
        self._next += len(coefficients)
        return group

    def freeze(self):
        self._frozen = True
        return self

    def locate(self, k: int) -> Dict[str, Union[str, int, float]]:
        """Describe flat index k (used by the variable map sidecar)."""
        if not 0 <= k < self.total_vars:
            raise IndexError(f"variable {k} out of range")
        if k < self.num_position_vars:
            i, j0 = divmod(k, self.num_positions)
            return {"index": k, "kind": "position", "container": self.container_ids[i], "position": j0 + 1}
        for group in self._groups:
            if group.var_indices and group.var_indices[0] <= k <= group.var_indices[-1]:
                pos = k - group.var_indices[0]
                return {"index": k, "kind": "slack", "tag": group.tag, "coefficient": group.coefficients[pos]}
        raise IndexError(f"variable {k} not registered")


# ----------------------------
# Penalty weights
# ----------------------------
@dataclass(frozen=True)
class PenaltyWeights:
    p_overlap: float
    p_dup: float
    p_contig: float
    p_capacity: float
    p_cog_target: float
    p_cog_lower: float
    p_cog_upper: float
    p_shear_left: float
    p_shear_right: float

    @classmethod
    def uniform(cls, value: float = 1.0) -> "PenaltyWeights":
        return cls(*([float(value)] * len(fields(cls))))

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "PenaltyWeights":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise WeightsError(f"missing weights {missing}")
        try:
            return cls(**{n: float(data[n]) for n in names})
        except (TypeError, ValueError) as e:
            raise WeightsError(f"bad weight value: {e}") from e

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def for_family(self, family: str) -> float:
        return getattr(self, FAMILY_WEIGHT[family])

    def validate(self) -> "PenaltyWeights":
        for name, value in self.as_dict().items():
            if not (math.isfinite(value) and value > 0):
                raise WeightsError(f"{name} must be a positive finite number, got {value}")
        if not self.p_dup > 2 * self.p_contig:
            raise WeightsError(f"p_dup ({self.p_dup}) must exceed 2*p_contig ({2 * self.p_contig})")
        if not close(self.p_cog_lower, self.p_cog_upper, 1e-9):
            raise WeightsError("p_cog_lower and p_cog_upper must be equal")
        return self

    def with_relations(self) -> "PenaltyWeights":
        """p_dup > 2 p_contig; p_cog_lower = p_cog_upper = 10 p_cog_target."""
        bound = COG_BOUND_RATIO * self.p_cog_target
        return replace(self, p_dup=max(self.p_dup, DUP_MARGIN * self.p_contig),
                       p_cog_lower=bound, p_cog_upper=bound)


FAMILY_WEIGHT = {
    "overlap": "p_overlap", "duplicates": "p_dup", "contiguity": "p_contig", "capacity": "p_capacity",
    "cog_target": "p_cog_target", "cog_lower": "p_cog_lower", "cog_upper": "p_cog_upper",
    "shear_left": "p_shear_left", "shear_right": "p_shear_right",
}


# ----------------------------
# Terms
# ----------------------------
Expression = Tuple[Tuple[int, float], ...]
Coefficients = Dict[Tuple[int, int], float]


def _merge(pairs) -> Expression:
    acc = defaultdict(float)
    for k, a in pairs:
        acc[int(k)] += float(a)
    return tuple((k, a) for k, a in sorted(acc.items()) if a != 0.0)


def _key(i, j):
    return (i, j) if i <= j else (j, i)


@dataclass(frozen=True)
class LinearTerm:
    """Objective contribution sum_k a_k z_k (no constant)."""
    tag: str
    expression: Expression
    family: str = "objective"

    def value(self, z) -> float:
        return float(sum(a * z[k] for k, a in self.expression))

    def values(self, Z: np.ndarray) -> np.ndarray:
        if not self.expression:
            return np.zeros(Z.shape[0])
        idx, coef = zip(*self.expression)
        return Z[:, list(idx)] @ np.array(coef)

    def expand(self) -> Tuple[Coefficients, float]:
        return {(k, k): a for k, a in self.expression}, 0.0


@dataclass(frozen=True)
class SquaredPenalty:
    """weight * (sum_k a_k z_k + constant)^2"""
    family: str
    tag: str
    weight: float
    expression: Expression
    constant: float
    slack: Optional[SlackGroup] = None

    def residual(self, z) -> float:
        return float(sum(a * z[k] for k, a in self.expression) + self.constant)

    def value(self, z) -> float:
        r = self.residual(z)
        return self.weight * r * r

    def values(self, Z: np.ndarray) -> np.ndarray:
        if not self.expression:
            return np.full(Z.shape[0], self.weight * self.constant ** 2)
        idx, coef = zip(*self.expression)
        r = Z[:, list(idx)] @ np.array(coef) + self.constant
        return self.weight * r * r

    def expand(self) -> Tuple[Coefficients, float]:
        # (sum a_k z_k + b)^2 with z_k^2 = z_k
        w, b = self.weight, self.constant
        out: Coefficients = {}
        terms = self.expression
        for pos, (k, a) in enumerate(terms):
            out[(k, k)] = w * (a * a + 2.0 * b * a)
            for l, c in terms[pos + 1:]:
                out[_key(k, l)] = out.get(_key(k, l), 0.0) + 2.0 * w * a * c
        return out, w * b * b


@dataclass(frozen=True)
class ContiguityPenalty:
    """weight * (1/2 sum_j p_j - sum_j p_j p_{j+1}) over one large container's row."""
    tag: str
    weight: float
    variables: Tuple[int, ...]
    family: str = "contiguity"

    def value(self, z) -> float:
        p = [z[k] for k in self.variables]
        return self.weight * (0.5 * sum(p) - sum(p[j] * p[j + 1] for j in range(len(p) - 1)))

    def values(self, Z: np.ndarray) -> np.ndarray:
        P = Z[:, list(self.variables)].astype(float)
        adj = (P[:, :-1] * P[:, 1:]).sum(axis=1) if P.shape[1] > 1 else 0.0
        return self.weight * (0.5 * P.sum(axis=1) - adj)

    def expand(self) -> Tuple[Coefficients, float]:
        w = self.weight
        out: Coefficients = {(k, k): 0.5 * w for k in self.variables}
        for a, b in zip(self.variables, self.variables[1:]):
            out[_key(a, b)] = out.get(_key(a, b), 0.0) - w
        return out, 0.0


Term = Union[LinearTerm, SquaredPenalty, ContiguityPenalty]


# ----------------------------
# Residual grids
# ----------------------------
def overlap_step(instance: ProblemInstance) -> float:
    return min((c.d for c in instance.containers), default=1.0)


def duplicate_step(instance: ProblemInstance) -> float:
    return min((c.t for c in instance.containers), default=1.0)


def capacity_step(instance: ProblemInstance, base_step: Optional[float] = None) -> float:
    return residual_step([c.cell_mass for c in instance.containers], base_step)


def shear_step(instance: ProblemInstance, base_step: Optional[float] = None) -> float:
    values = [c.cell_mass for c in instance.containers]
    if instance.N % 2 == 1:
        values += [0.5 * v for v in values]
    return residual_step(values, base_step)


def _cog_coefficients(instance: ProblemInstance, reference: float):
    xs = instance.cog_coordinates()
    coef = [(i, j, c.cell_mass * (xs[j - 1] - reference))
            for i, c in enumerate(instance.containers) for j in range(1, instance.N + 1)]
    constant = instance.empty_mass * (instance.empty_cog - reference)
    return coef, constant


def cog_step(instance: ProblemInstance, reference: float, base_step: Optional[float] = None) -> float:
    coef, constant = _cog_coefficients(instance, reference)
    return residual_step([a for _, _, a in coef] + [constant], base_step)


def _payload_bound(instance: ProblemInstance) -> float:
    total = sum(c.mass for c in instance.containers)
    if instance.constraints.capacity:
        total = min(total, instance.max_payload)
    return total


# ----------------------------
# Builders
# ----------------------------
def build_objective(instance: ProblemInstance, registry: Optional[VariableRegistry] = None) -> List[LinearTerm]:
    registry = registry or VariableRegistry.for_instance(instance)
    terms = []
    for i, c in enumerate(instance.containers):
        expr = tuple((registry.position_var(i, j), -c.cell_mass) for j in range(1, instance.N + 1))
        terms.append(LinearTerm(f"objective[id={c.id}]", expr))
    return terms


def build_no_overlap(instance, j, weights, registry) -> Tuple[List[SquaredPenalty], SlackGroup]:
    g = overlap_step(instance)
    group = registry.add_slack_group(f"overlap[j={j}]", slack_expansion(1.0, g), 1.0, g)
    expr = [(registry.position_var(i, j), c.d) for i, c in enumerate(instance.containers)]
    expr += list(zip(group.var_indices, group.coefficients))
    penalty = SquaredPenalty("overlap", group.tag, weights.p_overlap, _merge(expr), -1.0, group)
    return [penalty], group


def build_no_duplicates(instance, i, weights, registry) -> Tuple[List[SquaredPenalty], SlackGroup]:
    c = instance.containers[i]
    g = c.t
    group = registry.add_slack_group(f"duplicates[id={c.id}]", slack_expansion(1.0, g), 1.0, g)
    expr = [(registry.position_var(i, j), c.t) for j in range(1, instance.N + 1)]
    expr += list(zip(group.var_indices, group.coefficients))
    penalty = SquaredPenalty("duplicates", group.tag, weights.p_dup, _merge(expr), -1.0, group)
    return [penalty], group


def _contiguity(instance, i, weights, registry) -> List[ContiguityPenalty]:
    c = instance.containers[i]
    if c.ctype is not ContainerType.T3:
        raise ValueError(f"container {c.id} is not a large container")
    variables = tuple(registry.position_var(i, j) for j in range(1, instance.N + 1))
    return [ContiguityPenalty(f"contiguity[id={c.id}]", weights.p_contig, variables)]


def build_contiguity(instance, i, weights, registry) -> List[ContiguityPenalty]:
    if not weights.p_dup > 2 * weights.p_contig:
        raise WeightsError("contiguity needs p_dup > 2*p_contig")
    return _contiguity(instance, i, weights, registry)


def build_capacity(instance, weights, registry, base_step=None) -> Tuple[List[SquaredPenalty], SlackGroup]:
    g = capacity_step(instance, base_step)
    limit = floor_to_step(instance.max_payload, g)
    group = registry.add_slack_group("capacity", slack_expansion(limit, g), limit, g)
    expr = [(registry.position_var(i, j), c.cell_mass)
            for i, c in enumerate(instance.containers) for j in range(1, instance.N + 1)]
    expr += list(zip(group.var_indices, group.coefficients))
    penalty = SquaredPenalty("capacity", "capacity", weights.p_capacity, _merge(expr), -limit, group)
    return [penalty], group


def cog_slack_bound(instance: ProblemInstance, mode: str) -> float:
    """
    Upper bound on the slack residual of a CoG bound over loadings that respect
    the payload limits: every loaded kilogram sits at the most favourable cell.
    """
    xs = instance.cog_coordinates()
    payload = _payload_bound(instance)
    if mode == "lower":
        spread = max(0.0, float(xs.max()) - instance.cog_min)
        base = instance.empty_mass * (instance.empty_cog - instance.cog_min)
    elif mode == "upper":
        spread = max(0.0, instance.cog_max - float(xs.min()))
        base = instance.empty_mass * (instance.cog_max - instance.empty_cog)
    else:
        raise ValueError(f"no slack bound for mode {mode!r}")
    return max(0.0, payload * spread + base)


def build_cog(instance, mode, weights, registry, base_step=None) -> Tuple[List[SquaredPenalty], Optional[SlackGroup]]:
    reference = {"target": instance.cog_target, "lower": instance.cog_min, "upper": instance.cog_max}.get(mode)
    if reference is None:
        raise ValueError(f"unknown CoG mode {mode!r}")
    coef, constant = _cog_coefficients(instance, reference)
    expr = [(registry.position_var(i, j), a) for i, j, a in coef]
    family = f"cog_{mode}"
    if mode == "target":
        penalty = SquaredPenalty(family, family, weights.p_cog_target, _merge(expr), constant)
        return [penalty], None
    g = cog_step(instance, reference, base_step)
    ubar = ceil_to_step(cog_slack_bound(instance, mode), g)
    group = registry.add_slack_group(family, slack_expansion(ubar, g), ubar, g)
    sign = -1.0 if mode == "lower" else 1.0
    expr += [(k, sign * c) for k, c in zip(group.var_indices, group.coefficients)]
    weight = weights.p_cog_lower if mode == "lower" else weights.p_cog_upper
    return [SquaredPenalty(family, family, weight, _merge(expr), constant, group)], group


def build_shear(instance, weights, registry, base_step=None) -> Tuple[List[SquaredPenalty], List[SlackGroup]]:
    g = shear_step(instance, base_step)
    penalties, groups = [], []
    for station in shear_stations(instance.N):
        limit = floor_to_step(instance.shear_limit_at(station.x(instance.length, instance.N)), g)
        limit = max(0.0, limit)
        group = registry.add_slack_group(station.tag, slack_expansion(limit, g), limit, g)
        expr = [(registry.position_var(i, j), share * c.cell_mass)
                for i, c in enumerate(instance.containers) for j, share in station.cells(instance.N)]
        expr += list(zip(group.var_indices, group.coefficients))
        family = f"shear_{station.side}"
        penalties.append(SquaredPenalty(family, station.tag, weights.for_family(family), _merge(expr), -limit, group))
        groups.append(group)
    return penalties, groups


def _build_terms(instance: ProblemInstance, weights: PenaltyWeights, registry: VariableRegistry,
                 base_step: Optional[float] = None) -> List[Term]:
    cs = instance.constraints
    terms: List[Term] = list(build_objective(instance, registry))
    if cs.pl:
        if cs.capacity:
            terms += build_capacity(instance, weights, registry, base_step)[0]
        for i in range(instance.n):
            terms += build_no_duplicates(instance, i, weights, registry)[0]
        for i, c in enumerate(instance.containers):
            if c.ctype is ContainerType.T3:
                terms += _contiguity(instance, i, weights, registry)
        for j in range(1, instance.N + 1):
            terms += build_no_overlap(instance, j, weights, registry)[0]
    if cs.cl:
        for mode in ("target", "lower", "upper"):
            terms += build_cog(instance, mode, weights, registry, base_step)[0]
    if cs.sl:
        terms += build_shear(instance, weights, registry, base_step)[0]
    return terms


# ----------------------------
# Model
# ----------------------------
@dataclass(frozen=True)
class QuadraticModel:
    coefficients: Dict[Tuple[int, int], float]
    offset: float
    num_vars: int
    registry: Optional[VariableRegistry] = None
    terms: Tuple[Term, ...] = ()
    weights: Optional[PenaltyWeights] = None

    @classmethod
    def from_coefficients(cls, coefficients: Mapping[Tuple[int, int], float], offset: float = 0.0,
                          num_vars: Optional[int] = None, **kwargs) -> "QuadraticModel":
        acc = defaultdict(float)
        for (i, j), c in coefficients.items():
            acc[_key(int(i), int(j))] += float(c)
        canon = {k: v for k, v in sorted(acc.items()) if v != 0.0}
        if num_vars is None:
            num_vars = 1 + max((j for _, j in canon), default=-1)
        return cls(canon, float(offset), int(num_vars), **kwargs)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Upper-triangular Q (diagonal carries the linear terms)."""
        n = self.num_vars
        if not self.coefficients:
            return sp.csr_matrix((n, n))
        rows, cols = zip(*self.coefficients.keys())
        return sp.csr_matrix((list(self.coefficients.values()), (rows, cols)), shape=(n, n))

    @cached_property
    def couplings(self) -> Tuple[np.ndarray, sp.csr_matrix]:
        """(linear diagonal, symmetric off-diagonal coupling matrix with zero diagonal)."""
        upper = self.matrix
        diag = upper.diagonal().astype(float)
        off = sp.triu(upper, k=1)
        sym = (off + off.T).tocsr()
        sym.sort_indices()
        return diag, sym

    def sorted_terms(self) -> List[Tuple[int, int, float]]:
        return [(i, j, c) for (i, j), c in sorted(self.coefficients.items())]

    def family_counts(self) -> Dict[str, int]:
        counts = defaultdict(int)
        for term in self.terms:
            counts[term.family] += 1
        return dict(counts)


def _accumulate(terms: Sequence[Term]) -> Tuple[Dict[Tuple[int, int], float], float]:
    acc = defaultdict(float)
    offset = 0.0
    for term in terms:
        coeffs, const = term.expand()
        for key, c in coeffs.items():
            acc[key] += c
        offset += const
    return acc, offset


def assemble(instance: ProblemInstance, weights: PenaltyWeights, base_step: Optional[float] = None) -> QuadraticModel:
    weights.validate()
    instance.check()
    registry = VariableRegistry.for_instance(instance)
    terms = _build_terms(instance, weights, registry, base_step)
    registry.freeze()
    acc, offset = _accumulate(terms)
    model = QuadraticModel.from_coefficients(acc, offset, registry.total_vars, registry=registry,
                                             terms=tuple(terms), weights=weights)
    logger.info("Assembled %s [%s]: %d position vars, %d slack vars, %d stored terms",
                instance.name, instance.constraints.label, registry.num_position_vars,
                registry.slack_count, len(model.coefficients))
    logger.debug("Penalty terms per family: %s", model.family_counts())
    return model


def energy(model: QuadraticModel, z) -> float:
    bits = as_bits(z, model.num_vars).astype(float)
    return float(bits @ (model.matrix @ bits)) + model.offset


def energies(model: QuadraticModel, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != model.num_vars:
        raise ValueError(f"bit vectors have length {Z.shape[1]}, expected {model.num_vars}")
    return np.asarray((model.matrix @ Z.T).T * Z).sum(axis=1) + model.offset


def penalty_breakdown(model: QuadraticModel, z) -> Dict[str, float]:
    """Objective and each penalty family evaluated from their unexpanded definitions."""
    bits = as_bits(z, model.num_vars)
    out = defaultdict(float)
    for term in model.terms:
        out[term.family] += term.value(bits)
    return dict(out)


# ----------------------------
# Penalty weights: defaults and calibration
# ----------------------------
def default_weights(instance: ProblemInstance) -> PenaltyWeights:
    """Every family (1 + sum t_i m_i)^2, relations enforced."""
    value = (1.0 + sum(c.cell_mass for c in instance.containers)) ** 2
    return PenaltyWeights.uniform(value).with_relations()


def dominance_floors(instance: ProblemInstance, factor: float, base_step: Optional[float] = None) -> Dict[str, float]:
    """Smallest weights for which one minimal violation costs `factor` times the best single gain."""
    gain = max((c.cell_mass for c in instance.containers), default=0.0) * factor
    if gain <= 0:
        return {}
    return {
        "p_overlap": gain / overlap_step(instance) ** 2,
        "p_dup": gain / duplicate_step(instance) ** 2,
        "p_contig": gain / 0.5,
        "p_capacity": gain / capacity_step(instance, base_step) ** 2,
        "p_shear_left": gain / shear_step(instance, base_step) ** 2,
        "p_shear_right": gain / shear_step(instance, base_step) ** 2,
    }


def calibrate_weights(instance: ProblemInstance, samples: Optional[int] = None, seed: int = 0,
                      floor: Optional[float] = None, base_step: Optional[float] = None) -> PenaltyWeights:
    """
    Scale every family so its mean value over uniform random bit vectors
    (slacks included) matches the mean |objective| of the same samples.
    Families that never fire fall back to mean |objective|.
    """
    samples = CALIBRATION_SAMPLES if samples is None else samples
    if samples < 1:
        raise ValueError("calibration needs at least one sample")
    floor = WEIGHT_FLOOR if floor is None else floor

    registry = VariableRegistry.for_instance(instance)
    terms = _build_terms(instance, PenaltyWeights.uniform(1.0), registry, base_step)
    rng = np.random.default_rng(seed)
    Z = rng.integers(0, 2, size=(samples, registry.total_vars), dtype=np.int8)

    totals = defaultdict(lambda: np.zeros(samples))
    for term in terms:
        totals[term.family] = totals[term.family] + term.values(Z)
    mean_obj = float(np.mean(np.abs(totals["objective"]))) if "objective" in totals else 0.0
    fallback = mean_obj if mean_obj > TOLERANCE else 1.0

    values = {}
    for family in FAMILIES:
        mean_pen = float(np.mean(totals[family])) if family in totals else 0.0
        values[FAMILY_WEIGHT[family]] = mean_obj / mean_pen if mean_pen > TOLERANCE and mean_obj > TOLERANCE else fallback
        logger.debug("calibration %s: mean penalty %.6g -> weight %.6g", family, mean_pen, values[FAMILY_WEIGHT[family]])
    weights = PenaltyWeights(**values).with_relations()

    if floor > 0:
        raised = {name: max(getattr(weights, name), value)
                  for name, value in dominance_floors(instance, floor, base_step).items()}
        weights = replace(weights, **raised).with_relations()
    logger.info("Calibrated weights on %d samples (seed=%s, mean |objective| %.6g)", samples, seed, mean_obj)
    return weights.validate()
