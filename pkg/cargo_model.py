"""
cargo_model.py

Domain types for a cargo loading scenario and the closed-form geometry of the
payload area:

 - ContainerType / ContainerSpec : size class and mass of each container
 - ConstraintSet                 : which constraint families are active (PL / CL / SL)
 - ProblemInstance               : containers + aircraft parameters
 - coefficients, cog_coordinate, shear_coordinate, shear_limit

Coordinates run along the fuselage, centred on 0; the payload area spans
[-L/2, L/2] and is cut into N equal cells.
"""
import enum
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from analytics_utils import close, leq

logger = logging.getLogger("cargo_model")


class InstanceError(ValueError):
    """Invalid instance data. `where` addresses the offending field or line."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class ContainerType(enum.Enum):
    T1 = 1  # medium, one position
    T2 = 2  # small, half a position
    T3 = 3  # large, two adjacent positions

    @classmethod
    def parse(cls, value):
        if isinstance(value, ContainerType):
            return value
        key = str(value).strip().upper()
        if key in ("1", "2", "3"):
            return cls(int(key))
        if key in cls.__members__:
            return cls[key]
        raise InstanceError(f"unknown container type {value!r}")

    @property
    def t(self) -> Fraction:
        return coefficients(self)[0]

    @property
    def d(self) -> Fraction:
        return coefficients(self)[1]

    @property
    def cells(self) -> int:
        return 2 if self is ContainerType.T3 else 1


_COEFFICIENTS = {
    ContainerType.T1: (Fraction(1), Fraction(1)),
    ContainerType.T2: (Fraction(1), Fraction(1, 2)),
    ContainerType.T3: (Fraction(1, 2), Fraction(1)),
}


def coefficients(ctype: ContainerType) -> Tuple[Fraction, Fraction]:
    """(t, d): mass share counted per occupied cell, and cell share taken."""
    return _COEFFICIENTS[ContainerType.parse(ctype)]


@dataclass(frozen=True)
class ContainerSpec:
    id: int
    ctype: ContainerType
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "ctype", ContainerType.parse(self.ctype))
        if int(self.id) != self.id or self.id <= 0:
            raise InstanceError(f"container id must be a positive integer, got {self.id!r}")
        if not self.mass > 0:
            raise InstanceError(f"container {self.id}: mass must be > 0, got {self.mass!r}")

    @property
    def t(self) -> float:
        return float(self.ctype.t)

    @property
    def d(self) -> float:
        return float(self.ctype.d)

    @property
    def cell_mass(self) -> float:
        """t_i * m_i, the mass attributed to each occupied cell."""
        return self.t * self.mass


@dataclass(frozen=True)
class ConstraintSet:
    pl: bool = True
    cl: bool = False
    sl: bool = False
    capacity: bool = True

    def __post_init__(self):
        if (self.cl or self.sl) and not self.pl:
            raise InstanceError("centre-of-gravity and shear limits require payload limits")

    @classmethod
    def parse(cls, label: str, capacity: bool = True) -> "ConstraintSet":
        """Parse 'pl', 'pl+cl', 'pl+cl+sl' (any order, '+' or ',' separated); 'none' for objective only."""
        key = (label or "").strip().lower()
        if key in ("none", "obj", "objective"):
            return cls(pl=False, cl=False, sl=False, capacity=capacity)
        parts = {p.strip() for p in key.replace(",", "+").split("+") if p.strip()}
        unknown = parts - {"pl", "cl", "sl"}
        if not parts or unknown:
            raise InstanceError(f"unknown constraint set {label!r}")
        return cls(pl="pl" in parts, cl="cl" in parts, sl="sl" in parts, capacity=capacity)

    @property
    def label(self) -> str:
        parts = [name for name in ("pl", "cl", "sl") if getattr(self, name)]
        return "+".join(parts) if parts else "none"


@dataclass(frozen=True)
class ProblemInstance:
    containers: Tuple[ContainerSpec, ...]
    num_positions: int
    length: float
    max_payload: float
    empty_mass: float
    shear_max_0: float
    cog_min: float
    cog_max: float
    cog_target: float
    empty_cog: float = 0.0
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    shear_table: Optional[Tuple[Tuple[float, float], ...]] = None
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "containers", tuple(self.containers))
        if self.shear_table is not None:
            table = tuple(sorted((float(x), float(s)) for x, s in self.shear_table))
            object.__setattr__(self, "shear_table", table)
        self.check()

    def check(self):
        if int(self.num_positions) != self.num_positions or self.num_positions < 1:
            raise InstanceError("N must be a positive integer", "parameters.N")
        if not self.length > 0:
            raise InstanceError("L must be > 0", "parameters.L")
        if not self.max_payload > 0:
            raise InstanceError("W_max must be > 0", "parameters.W_max")
        if not self.empty_mass > 0:
            raise InstanceError("W_e must be > 0", "parameters.W_e")
        if not self.shear_max_0 > 0:
            raise InstanceError("S_max_0 must be > 0", "parameters.S_max_0")
        if not (leq(self.cog_min, self.cog_target) and leq(self.cog_target, self.cog_max)):
            raise InstanceError("expected x_cg_min <= x_cg_target <= x_cg_max", "parameters")
        ids = [c.id for c in self.containers]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InstanceError(f"duplicate container ids {dupes}", "containers")
        if self.shear_table is not None:
            if len(self.shear_table) < 2:
                raise InstanceError("needs at least two points", "shear_limit_table")
            xs = [x for x, _ in self.shear_table]
            if len(set(xs)) != len(xs):
                raise InstanceError("duplicate x values", "shear_limit_table")
            if any(s < 0 for _, s in self.shear_table):
                raise InstanceError("s_max must be >= 0", "shear_limit_table")

    @property
    def n(self) -> int:
        return len(self.containers)

    @property
    def N(self) -> int:
        return int(self.num_positions)

    def index_of(self, container_id) -> int:
        for i, c in enumerate(self.containers):
            if c.id == container_id:
                return i
        raise KeyError(f"unknown container id {container_id}")

    def cog_coordinates(self) -> np.ndarray:
        return np.array([cog_coordinate(j, self.length, self.N) for j in range(1, self.N + 1)])

    def shear_limit_at(self, x: float) -> float:
        """S^max at x: tabulated override when present, linear symmetric form otherwise."""
        if self.shear_table is None:
            return shear_limit(x, self.shear_max_0, self.length)
        xs = np.array([p[0] for p in self.shear_table])
        ss = np.array([p[1] for p in self.shear_table])
        if not (leq(xs[0], x) and leq(x, xs[-1])):
            raise ValueError(f"x={x} outside the shear limit table [{xs[0]}, {xs[-1]}]")
        return float(np.interp(x, xs, ss))

    def with_constraints(self, constraints: ConstraintSet) -> "ProblemInstance":
        return ProblemInstance(
            containers=self.containers, num_positions=self.num_positions, length=self.length,
            max_payload=self.max_payload, empty_mass=self.empty_mass, shear_max_0=self.shear_max_0,
            cog_min=self.cog_min, cog_max=self.cog_max, cog_target=self.cog_target,
            empty_cog=self.empty_cog, constraints=constraints, shear_table=self.shear_table,
            name=self.name,
        )


def _check_index(k, N, what):
    if int(k) != k or not 1 <= k <= N:
        raise IndexError(f"{what} index {k} out of range 1..{N}")


def cog_coordinate(j: int, L: float, N: int) -> float:
    """Centre of cell j: x_j = (L/N)(j - N/2) - L/(2N)."""
    _check_index(j, N, "position")
    return (L / N) * (j - N / 2.0) - L / (2.0 * N)


def shear_coordinate(u: int, L: float, N: int) -> float:
    """Right boundary of cell u: x_u = (L/N)(u - N/2)."""
    _check_index(u, N, "station")
    return (L / N) * (u - N / 2.0)


def shear_limit(x: float, S0: float, L: float) -> float:
    """Symmetric linear shear envelope: S0 at the origin, zero at both ends."""
    half = L / 2.0
    if abs(x) > half and not close(abs(x), half):
        raise ValueError(f"x={x} outside the payload area [-{half}, {half}]")
    if x < 0:
        return max(0.0, S0 * (L + 2.0 * x) / L)
    return max(0.0, S0 * (L - 2.0 * x) / L)


@dataclass(frozen=True)
class ShearStation:
    """
    One shear check. Even N: left stations u=1..N/2 sum cells 1..u, right
    stations u=N/2..N-1 sum cells u+1..N. Odd N adds two checks at x=0 where
    the middle cell counts half its mass on each side.
    """
    u: int
    side: str
    origin: bool = False

    def cells(self, N: int) -> Tuple[Tuple[int, float], ...]:
        """(position, mass share) pairs summed by this check."""
        if not self.origin:
            if self.side == "left":
                return tuple((j, 1.0) for j in range(1, self.u + 1))
            return tuple((j, 1.0) for j in range(self.u + 1, N + 1))
        mid = N // 2 + 1
        if self.side == "left":
            return tuple((j, 1.0) for j in range(1, mid)) + ((mid, 0.5),)
        return ((mid, 0.5),) + tuple((j, 1.0) for j in range(mid + 1, N + 1))

    def x(self, L: float, N: int) -> float:
        return 0.0 if self.origin else shear_coordinate(self.u, L, N)

    @property
    def tag(self) -> str:
        if self.origin:
            return f"shear_{self.side}[x=0]"
        return f"shear_{self.side}[u={self.u}]"


def shear_stations(N: int) -> Tuple[ShearStation, ...]:
    half = N // 2
    if N % 2 == 0:
        left = [ShearStation(u, "left") for u in range(1, half + 1)]
        right = [ShearStation(u, "right") for u in range(half, N)]
        return tuple(left + right)
    left = [ShearStation(u, "left") for u in range(1, half + 1)]
    right = [ShearStation(u, "right") for u in range(half + 1, N)]
    origin = [ShearStation(half, "left", origin=True), ShearStation(half + 1, "right", origin=True)]
    return tuple(left + right + origin)
