import os

import numpy as np
import pytest

from cascade_stab.model import (
    PlantSpec,
    ShapeFunction,
    example_plant_dict,
    plant_from_dict,
    validate_plant,
)
from cascade_stab.spectral import build_basis


def base_seed() -> int:
    return int(os.environ.get("CASCADE_STAB_SEED", "20240817"))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(base_seed())


@pytest.fixture(scope="session")
def demo_plant():
    """The 3x3 worked example: L=pi, Dirichlet at L, distinct diffusions."""
    return validate_plant(plant_from_dict(example_plant_dict()))


@pytest.fixture(scope="session")
def demo_basis(demo_plant):
    return build_basis(demo_plant.L, demo_plant.gamma1, demo_plant.gamma2, 40)


@pytest.fixture(scope="session")
def demo_initial():
    """Initial profiles (cos x + 1, 6 cos(x/2) + 3, -cos(x/2) - 0.5)."""
    return [
        lambda x: np.cos(x) + 1.0,
        lambda x: 6.0 * np.cos(0.5 * np.asarray(x, dtype=float)) + 3.0,
        lambda x: -np.cos(0.5 * np.asarray(x, dtype=float)) - 0.5,
    ]


def random_plant(rng, m=None, force_sigma=None):
    """Random valid cascade plant with unit-scale couplings.

    force_sigma picks the diffusion pattern: 1 (all equal), 2 (distinct head,
    constant tail of length m-1), or None for a random mix.
    """
    if m is None:
        m = int(rng.integers(2, 7))
    d = rng.uniform(0.5, 3.0, size=m)
    if force_sigma == 1:
        d[:] = d[0]
    elif force_sigma == 2:
        d[1:] = d[1]
        if d[0] == d[1]:
            d[0] = d[1] + 0.7
    else:
        r = rng.random()
        if r < 0.25:
            d[:] = d[0]
        elif r < 0.5:
            tail = int(rng.integers(2, m + 1))
            d[m - tail:] = d[m - tail]
    Q = rng.uniform(-1.0, 1.0, size=(m, m))
    for i in range(m):
        for j in range(i - 1):
            Q[i, j] = 0.0
    for i in range(m - 1):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        Q[i + 1, i] = sign * rng.uniform(0.3, 1.0)
    shapes = tuple(
        ShapeFunction.indicator(0.1 * j, 0.1 * j + 0.1) for j in range(1, m + 1)
    )
    spec = PlantSpec(m=m, D=d, Q=Q, L=np.pi, gamma1=1.0, gamma2=0.0, shapes=shapes)
    return validate_plant(spec)
