# instance_io.py
"""
Documents read and written by load_planner.py:

 - instance documents (JSON) and the container CSV table
 - penalty weight documents (JSON)
 - plan documents (decoded plan + validation report + energy)
 - QUBO export: "p qubo <num_vars> <num_terms> <offset>" then "i j coeff" per
   stored term, row-major; plus a JSON variable map
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from cargo_model import ConstraintSet, ContainerSpec, ContainerType, InstanceError, ProblemInstance
from plan_analysis import LoadingPlan, ValidationReport
from qubo_builder import PenaltyWeights, QuadraticModel, WeightsError

logger = logging.getLogger("instance_io")

OPTIONAL_PARAMETERS = {"x_cg_e": 0.0}


# ----------------------------
# Generic JSON helpers
# ----------------------------
def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, data: Any):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(data))
    logger.info("Wrote %s", str(path))


def write_text(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    logger.info("Wrote %s", str(path))


def read_document(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceError(f"malformed JSON ({e.msg})", f"{path.name}:{e.lineno}:{e.colno}") from e


# ----------------------------
# Instances
# ----------------------------
def _number(section: Dict, key: str, where: str, kind=float):
    if key not in section:
        if key in OPTIONAL_PARAMETERS:
            return OPTIONAL_PARAMETERS[key]
        raise InstanceError("missing field", f"{where}.{key}")
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(f"expected a number, got {value!r}", f"{where}.{key}")
    if kind is int:
        if int(value) != value:
            raise InstanceError(f"expected an integer, got {value!r}", f"{where}.{key}")
        return int(value)
    return float(value)


def _containers(items: Any) -> List[ContainerSpec]:
    if not isinstance(items, list):
        raise InstanceError("expected a list", "containers")
    out = []
    for k, item in enumerate(items):
        where = f"containers[{k}]"
        if not isinstance(item, dict):
            raise InstanceError("expected an object with id, type, mass", where)
        cid = _number(item, "id", where, int)
        ctype = item.get("type")
        if ctype is None:
            raise InstanceError("missing field", f"{where}.type")
        mass = _number(item, "mass", where)
        try:
            ctype = ContainerType.parse(ctype)
        except InstanceError as e:
            raise InstanceError(str(e), f"{where}.type") from None
        try:
            out.append(ContainerSpec(cid, ctype, mass))
        except InstanceError as e:
            if e.where:
                raise
            raise InstanceError(str(e), where) from None
    return out


def _constraints(section: Any) -> ConstraintSet:
    if section is None:
        return ConstraintSet()
    if isinstance(section, str):
        return ConstraintSet.parse(section)
    if not isinstance(section, dict):
        raise InstanceError("expected an object with pl, cl, sl", "constraints")
    flags = {}
    for key, default in (("pl", True), ("cl", False), ("sl", False), ("capacity", True)):
        value = section.get(key, default)
        if not isinstance(value, bool):
            raise InstanceError(f"expected true/false, got {value!r}", f"constraints.{key}")
        flags[key] = value
    try:
        return ConstraintSet(**flags)
    except InstanceError as e:
        raise InstanceError(str(e), "constraints") from None


def _shear_table(items: Any):
    if items is None:
        return None
    if not isinstance(items, list):
        raise InstanceError("expected a list of {x, s_max}", "shear_limit_table")
    return tuple((_number(p, "x", f"shear_limit_table[{k}]"), _number(p, "s_max", f"shear_limit_table[{k}]"))
                 for k, p in enumerate(items))


def instance_from_document(doc: Any, name: Optional[str] = None) -> ProblemInstance:
    if not isinstance(doc, dict):
        raise InstanceError("expected a JSON object at top level")
    params = doc.get("parameters")
    if not isinstance(params, dict):
        raise InstanceError("missing or not an object", "parameters")
    return ProblemInstance(
        containers=_containers(doc.get("containers", [])),
        num_positions=_number(params, "N", "parameters", int),
        length=_number(params, "L", "parameters"),
        max_payload=_number(params, "W_max", "parameters"),
        empty_mass=_number(params, "W_e", "parameters"),
        shear_max_0=_number(params, "S_max_0", "parameters"),
        cog_min=_number(params, "x_cg_min", "parameters"),
        cog_max=_number(params, "x_cg_max", "parameters"),
        cog_target=_number(params, "x_cg_target", "parameters"),
        empty_cog=_number(params, "x_cg_e", "parameters"),
        constraints=_constraints(doc.get("constraints")),
        shear_table=_shear_table(doc.get("shear_limit_table")),
        name=str(doc.get("name") or name or "instance"),
    )


def load_instance(path: Path) -> ProblemInstance:
    path = Path(path)
    instance = instance_from_document(read_document(path), name=path.stem)
    logger.info("Loaded %s: %d containers, %d positions [%s]",
                instance.name, instance.n, instance.N, instance.constraints.label)
    return instance


def instance_document(instance: ProblemInstance) -> Dict[str, Any]:
    doc = {
        "name": instance.name,
        "parameters": {
            "N": instance.N, "L": instance.length, "W_max": instance.max_payload, "W_e": instance.empty_mass,
            "x_cg_e": instance.empty_cog, "S_max_0": instance.shear_max_0, "x_cg_min": instance.cog_min,
            "x_cg_max": instance.cog_max, "x_cg_target": instance.cog_target,
        },
        "containers": [{"id": c.id, "type": c.ctype.value, "mass": c.mass} for c in instance.containers],
        "constraints": {"pl": instance.constraints.pl, "cl": instance.constraints.cl,
                        "sl": instance.constraints.sl, "capacity": instance.constraints.capacity},
    }
    if instance.shear_table is not None:
        doc["shear_limit_table"] = [{"x": x, "s_max": s} for x, s in instance.shear_table]
    return doc


def emit_instance(instance: ProblemInstance) -> str:
    return dumps(instance_document(instance))


def containers_from_csv(path: Path) -> List[ContainerSpec]:
    """Read an (id, type, mass) table; header names are matched case-insensitively."""
    df = pd.read_csv(path)
    df.columns = [str(c).strip().lower() for c in df.columns]
    missing = [c for c in ("id", "type", "mass") if c not in df.columns]
    if missing:
        raise InstanceError(f"missing columns {missing}", Path(path).name)
    out = []
    for row_no, row in enumerate(df.itertuples(index=False), start=2):
        try:
            out.append(ContainerSpec(int(row.id), ContainerType.parse(int(row.type)), float(row.mass)))
        except (ValueError, TypeError) as e:
            raise InstanceError(str(e), f"{Path(path).name}:{row_no}") from None
    return out


def instance_from_csv(path: Path, parameters: Dict[str, float], constraints: ConstraintSet,
                      name: Optional[str] = None) -> ProblemInstance:
    doc = {
        "name": name or Path(path).stem,
        "parameters": dict(parameters),
        "containers": [{"id": c.id, "type": c.ctype.value, "mass": c.mass} for c in containers_from_csv(path)],
        "constraints": {"pl": constraints.pl, "cl": constraints.cl, "sl": constraints.sl,
                        "capacity": constraints.capacity},
    }
    return instance_from_document(doc)


# ----------------------------
# Weights
# ----------------------------
def weights_document(weights: PenaltyWeights) -> Dict[str, float]:
    return weights.as_dict()


def load_weights(path: Path) -> PenaltyWeights:
    doc = read_document(path)
    if not isinstance(doc, dict):
        raise WeightsError(f"{path}: expected a JSON object of weights")
    return PenaltyWeights.from_dict(doc.get("weights", doc)).validate()


# ----------------------------
# Plans
# ----------------------------
def report_document(report: ValidationReport, shear: bool = True) -> Dict[str, Any]:
    doc = report.as_dict()
    if shear:
        doc["shear"] = [{"station": r.tag, "x": r.x, "value": r.value, "limit": r.limit, "violated": r.violated}
                        for r in report.shear]
    return doc


def plan_document(instance: ProblemInstance, plan: LoadingPlan, report: ValidationReport,
                  energy: Optional[float] = None, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    doc = {
        "instance": instance.name,
        "constraints": instance.constraints.label,
        "feasible": report.feasible(instance.constraints),
        "loaded_weight": report.loaded_weight,
        "plan": plan.as_dict(),
        "report": report_document(report),
    }
    if energy is not None:
        doc["energy"] = energy
    if extra:
        doc.update(extra)
    return doc


# ----------------------------
# QUBO export
# ----------------------------
def emit_qubo(model: QuadraticModel) -> str:
    terms = model.sorted_terms()
    lines = [f"p qubo {model.num_vars} {len(terms)} {model.offset!r}"]
    lines += [f"{i} {j} {c!r}" for i, j, c in terms]
    return "\n".join(lines) + "\n"


def parse_qubo(text: str) -> QuadraticModel:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("c ")]
    if not rows or rows[0][:2] != ["p", "qubo"] or len(rows[0]) != 5:
        raise ValueError("line 1: expected 'p qubo <num_vars> <num_terms> <offset>'")
    num_vars, num_terms, offset = int(rows[0][2]), int(rows[0][3]), float(rows[0][4])
    coeffs = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ValueError(f"line {line_no}: expected 'i j coeff'")
        coeffs[(int(row[0]), int(row[1]))] = float(row[2])
    if len(coeffs) != num_terms:
        raise ValueError(f"header announces {num_terms} terms, found {len(coeffs)}")
    return QuadraticModel.from_coefficients(coeffs, offset, num_vars)


def variable_map(model: QuadraticModel) -> List[Dict[str, Any]]:
    registry = model.registry
    if registry is None:
        return []
    return [registry.locate(k) for k in range(registry.total_vars)]


def report_filename(instance_name: str, label: str, runs: int, ext: str) -> str:
    return f"{instance_name}_{label}_{runs}.{ext}"

