"""Small instances shared by the test modules."""
from pathlib import Path

from cargo_model import ConstraintSet, ContainerSpec, ProblemInstance
from instance_io import load_instance

DATA = Path(__file__).resolve().parent.parent / "data"
DWAVE = DATA / "instances" / "dwave_6x4.json"
AIRBUS = DATA / "instances" / "airbus_35x20.json"
CONTAINERS_CSV = DATA / "containers_35.csv"


def make_instance(containers=((1, 1, 2000.0),), N=4, L=40.0, W_max=8000.0, W_e=120000.0, S0=26000.0,
                  cog=(-4.0, 8.0, 4.0), x_e=0.0, constraints="pl", capacity=True, shear_table=None,
                  name="toy"):
    lo, hi, target = cog
    return ProblemInstance(
        containers=[ContainerSpec(cid, ctype, mass) for cid, ctype, mass in containers],
        num_positions=N, length=L, max_payload=W_max, empty_mass=W_e, shear_max_0=S0,
        cog_min=lo, cog_max=hi, cog_target=target, empty_cog=x_e,
        constraints=ConstraintSet.parse(constraints, capacity=capacity),
        shear_table=shear_table, name=name,
    )


def dwave_instance(constraints=None):
    instance = load_instance(DWAVE)
    if constraints:
        instance = instance.with_constraints(ConstraintSet.parse(constraints))
    return instance


def airbus_instance(constraints=None, capacity=True):
    instance = load_instance(AIRBUS)
    if constraints or not capacity:
        instance = instance.with_constraints(ConstraintSet.parse(constraints or "pl", capacity=capacity))
    return instance
