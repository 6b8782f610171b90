# analytics_utils.py
import math
import os
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from dotenv import load_dotenv

logger = logging.getLogger("analytics_utils")

BASE_DIR = Path(__file__).parent.resolve()
load_dotenv(BASE_DIR / ".env")

# ----------------------------
# Settings (fill .env to override)
# ----------------------------
DATA_DIR = Path(os.getenv("LOADPLAN_DATA_DIR", str(BASE_DIR / "data")))
TOLERANCE = float(os.getenv("LOADPLAN_TOLERANCE", "1e-9"))
MASS_STEP = float(os.getenv("LOADPLAN_MASS_STEP", "1.0"))
EXACT_LIMIT = int(os.getenv("LOADPLAN_EXACT_LIMIT", "28"))
CALIBRATION_SAMPLES = int(os.getenv("LOADPLAN_CALIBRATION_SAMPLES", "1000"))
WEIGHT_FLOOR = float(os.getenv("LOADPLAN_WEIGHT_FLOOR", "2.0"))
BENCH_RUNS = int(os.getenv("LOADPLAN_BENCH_RUNS", "50"))

MAX_HALVINGS = 6


def close(a, b, tol=None):
    """Relative comparison with an absolute floor of `tol` for values near zero."""
    tol = TOLERANCE if tol is None else tol
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def leq(a, b, tol=None):
    return a < b or close(a, b, tol)


def is_multiple(value, step, tol=None):
    if step <= 0:
        return False
    q = value / step
    return close(q, round(q), tol)


def residual_step(values: Iterable[float], base_step: Optional[float] = None) -> float:
    """
    Finest grid step (base step, halved as needed) on which every value lies.
    Falls back to the base step when the values never land on a dyadic grid.
    """
    base = MASS_STEP if base_step is None else base_step
    vals = [float(v) for v in values if v != 0]
    step = base
    for _ in range(MAX_HALVINGS + 1):
        if all(is_multiple(v, step) for v in vals):
            return step
        step /= 2.0
    logger.warning("Residuals are not on any grid down to %s; using base step %s", step * 2, base)
    return base


def floor_to_step(value, step):
    q = value / step
    n = round(q)
    if close(q, n):
        return n * step
    return math.floor(q) * step


def ceil_to_step(value, step):
    q = value / step
    n = round(q)
    if close(q, n):
        return n * step
    return math.ceil(q) * step


def as_bits(z, length=None) -> np.ndarray:
    bits = np.asarray(z, dtype=np.int8).ravel()
    if length is not None and bits.shape[0] != length:
        raise ValueError(f"bit vector has length {bits.shape[0]}, expected {length}")
    return bits
