"""
plan_analysis.py

Decoding bit vectors into loading plans and checking plans against the
payload (PL), centre-of-gravity (CL) and shear (SL) limits.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from analytics_utils import as_bits, leq
from cargo_model import ConstraintSet, ContainerType, InstanceError, ProblemInstance, shear_stations

logger = logging.getLogger("plan_analysis")


@dataclass(frozen=True)
class LoadingPlan:
    """
    Container ids (instance order) and the n x N 0/1 matrix p[i, j-1].
    occupancy and placement are both views of that matrix.
    """
    container_ids: Tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.int8)
        if m.ndim != 2 or m.shape[0] != len(self.container_ids):
            raise ValueError(f"plan matrix shape {m.shape} does not match {len(self.container_ids)} containers")
        m.setflags(write=False)
        object.__setattr__(self, "container_ids", tuple(self.container_ids))
        object.__setattr__(self, "matrix", m)

    @classmethod
    def empty(cls, instance: ProblemInstance) -> "LoadingPlan":
        return cls([c.id for c in instance.containers], np.zeros((instance.n, instance.N), dtype=np.int8))

    @classmethod
    def from_placement(cls, instance: ProblemInstance, placement: Dict[int, List[int]]) -> "LoadingPlan":
        m = np.zeros((instance.n, instance.N), dtype=np.int8)
        for cid, positions in placement.items():
            i = _index(instance, cid)
            for j in positions:
                if not 1 <= j <= instance.N:
                    raise InstanceError(f"position {j} out of range 1..{instance.N}", f"plan[{cid}]")
                m[i, j - 1] = 1
        return cls([c.id for c in instance.containers], m)

    @property
    def num_positions(self) -> int:
        return self.matrix.shape[1]

    @property
    def occupancy(self) -> Dict[int, List[int]]:
        return {j + 1: [self.container_ids[i] for i in np.flatnonzero(self.matrix[:, j])]
                for j in range(self.num_positions)}

    @property
    def placement(self) -> Dict[int, List[int]]:
        return {cid: [int(j) + 1 for j in np.flatnonzero(self.matrix[i])]
                for i, cid in enumerate(self.container_ids)}

    @property
    def loaded_ids(self) -> List[int]:
        return [cid for cid, pos in self.placement.items() if pos]

    def is_empty(self) -> bool:
        return not self.matrix.any()

    def as_dict(self) -> dict:
        return {
            "occupancy": {str(j): ids for j, ids in self.occupancy.items()},
            "placement": {str(cid): self.placement[cid] for cid in self.loaded_ids},
        }


@dataclass(frozen=True)
class ShearRow:
    u: int
    side: str
    x: float
    value: float
    limit: float
    violated: bool
    tag: str = ""


@dataclass(frozen=True)
class ValidationReport:
    pl_valid: bool
    cl_valid: bool
    sl_valid: bool
    shear_violations: int
    cog: float
    loaded_weight: float
    overlap_ok: bool = True
    duplicates_ok: bool = True
    contiguity_ok: bool = True
    capacity_ok: bool = True
    shear: Tuple[ShearRow, ...] = field(default_factory=tuple)

    def feasible(self, constraints: ConstraintSet) -> bool:
        """Valid for every active family."""
        ok = self.pl_valid if constraints.pl else True
        if constraints.cl:
            ok = ok and self.cl_valid
        if constraints.sl:
            ok = ok and self.sl_valid
        return ok

    def as_dict(self) -> dict:
        return {
            "pl_valid": self.pl_valid, "cl_valid": self.cl_valid, "sl_valid": self.sl_valid,
            "shear_violations": self.shear_violations, "cog": self.cog, "loaded_weight": self.loaded_weight,
            "overlap_ok": self.overlap_ok, "duplicates_ok": self.duplicates_ok,
            "contiguity_ok": self.contiguity_ok, "capacity_ok": self.capacity_ok,
        }


def _index(instance: ProblemInstance, cid) -> int:
    try:
        return instance.index_of(cid)
    except KeyError:
        raise InstanceError(f"unknown container id {cid}", "plan") from None


def _aligned(plan: LoadingPlan, instance: ProblemInstance) -> np.ndarray:
    """Plan matrix in instance container order."""
    if plan.num_positions != instance.N:
        raise InstanceError(f"plan has {plan.num_positions} positions, instance has {instance.N}", "plan")
    m = np.zeros((instance.n, instance.N), dtype=np.int8)
    for row, cid in enumerate(plan.container_ids):
        m[_index(instance, cid)] |= plan.matrix[row]
    return m


def decode(bits, registry, instance: ProblemInstance) -> LoadingPlan:
    bits = as_bits(bits, registry.total_vars)
    p = bits[: registry.num_position_vars].reshape(instance.n, instance.N)
    return LoadingPlan([c.id for c in instance.containers], p.copy())


def cell_masses(plan: LoadingPlan, instance: ProblemInstance) -> np.ndarray:
    """Mass per position, sum_i t_i m_i p_ij."""
    m = _aligned(plan, instance)
    per_cell = np.array([c.cell_mass for c in instance.containers], dtype=float)
    return per_cell @ m if instance.n else np.zeros(instance.N)


def loaded_weight(plan: LoadingPlan, instance: ProblemInstance) -> float:
    return float(cell_masses(plan, instance).sum())


def center_of_gravity(plan: LoadingPlan, instance: ProblemInstance) -> float:
    w = cell_masses(plan, instance)
    xs = instance.cog_coordinates()
    num = float(w @ xs) + instance.empty_mass * instance.empty_cog
    return num / (float(w.sum()) + instance.empty_mass)


def payload_cog(plan: LoadingPlan, instance: ProblemInstance) -> Optional[float]:
    w = cell_masses(plan, instance)
    total = float(w.sum())
    return float(w @ instance.cog_coordinates()) / total if total > 0 else None


def shear_profile(plan: LoadingPlan, instance: ProblemInstance) -> List[ShearRow]:
    w = cell_masses(plan, instance)
    rows = []
    for station in shear_stations(instance.N):
        x = station.x(instance.length, instance.N)
        value = sum(share * w[j - 1] for j, share in station.cells(instance.N))
        limit = instance.shear_limit_at(x)
        rows.append(ShearRow(station.u, station.side, x, float(value), limit, not leq(value, limit), station.tag))
    return rows


def _row_checks(m: np.ndarray, instance: ProblemInstance) -> Tuple[bool, bool]:
    duplicates_ok, contiguity_ok = True, True
    for i, c in enumerate(instance.containers):
        where = np.flatnonzero(m[i])
        if c.ctype is ContainerType.T3:
            if where.size == 0:
                continue
            if where.size != 2:
                duplicates_ok = duplicates_ok and where.size < 2
                contiguity_ok = False
            elif where[1] - where[0] != 1:
                contiguity_ok = False
        elif where.size > 1:
            duplicates_ok = False
    return duplicates_ok, contiguity_ok


def validate(plan: LoadingPlan, instance: ProblemInstance) -> ValidationReport:
    m = _aligned(plan, instance)
    d = np.array([c.d for c in instance.containers], dtype=float)
    fill = d @ m if instance.n else np.zeros(instance.N)
    overlap_ok = all(leq(v, 1.0) for v in fill)
    duplicates_ok, contiguity_ok = _row_checks(m, instance)
    weight = loaded_weight(plan, instance)
    capacity_ok = leq(weight, instance.max_payload)
    pl_valid = overlap_ok and duplicates_ok and contiguity_ok and (capacity_ok or not instance.constraints.capacity)

    cog = center_of_gravity(plan, instance)
    cl_valid = leq(instance.cog_min, cog) and leq(cog, instance.cog_max)
    rows = tuple(shear_profile(plan, instance))
    violations = sum(1 for r in rows if r.violated)
    return ValidationReport(
        pl_valid=pl_valid, cl_valid=cl_valid, sl_valid=violations == 0, shear_violations=violations,
        cog=cog, loaded_weight=weight, overlap_ok=overlap_ok, duplicates_ok=duplicates_ok,
        contiguity_ok=contiguity_ok, capacity_ok=capacity_ok, shear=rows,
    )
