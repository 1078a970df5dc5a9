"""Plant specification and validation.

The plant is an underactuated system of m coupled heat equations on (0, L),

    z_t = D z_xx + Q z + B * sum_j b_j(x) u_j(t),
    z_x(t, 0) = 0,      gamma1 * z(t, L) + gamma2 * z_x(t, L) = 0,

with diagonal diffusion D = diag{d_1, ..., d_m}, coupling Q in cascade form
(upper Hessenberg, zero strictly below the first subdiagonal, nonzero on it)
and the scalar control channels entering the first equation only, i.e.
B = e_1.  B is implicit everywhere and never stored.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadShape,
    CascadeViolation,
    ControllabilityViolation,
    DegenerateBoundary,
    NonPositiveDiffusion,
    PlantInputError,
)

SHAPE_KINDS = ("indicator", "polynomial", "samples")


@dataclass(frozen=True)
class ShapeFunction:
    """Control distribution b_j(x) on [0, L].

    Kinds
    -----
    indicator   params = (a, b), the characteristic function of [a, b]
    polynomial  params = (c0, c1, ...), coefficients in ascending powers
    samples     params = (grid, values), piecewise-linear interpolant on a
                strictly increasing grid covering [0, L]
    """

    kind: str
    params: tuple

    @classmethod
    def indicator(cls, a: float, b: float) -> "ShapeFunction":
        return cls("indicator", (float(a), float(b)))

    @classmethod
    def polynomial(cls, *coefficients: float) -> "ShapeFunction":
        return cls("polynomial", tuple(float(c) for c in coefficients))

    @classmethod
    def samples(cls, grid, values) -> "ShapeFunction":
        return cls(
            "samples",
            (tuple(float(x) for x in grid), tuple(float(v) for v in values)),
        )

    def validate(self, L: float) -> None:
        if self.kind == "indicator":
            if len(self.params) != 2:
                raise BadShape("indicator shape needs exactly (a, b)")
            a, b = self.params
            if not (0.0 <= a < b <= L):
                raise BadShape(f"indicator bounds ({a}, {b}) must satisfy 0 <= a < b <= L")
        elif self.kind == "polynomial":
            if len(self.params) == 0:
                raise BadShape("polynomial shape needs at least one coefficient")
        elif self.kind == "samples":
            if len(self.params) != 2:
                raise BadShape("samples shape needs (grid, values)")
            grid, values = self.params
            if len(grid) != len(values) or len(grid) < 2:
                raise BadShape("samples grid and values must have equal length >= 2")
            g = np.asarray(grid, dtype=float)
            if np.any(np.diff(g) <= 0.0):
                raise BadShape("samples grid must be strictly increasing")
            if abs(g[0]) > 1e-12 or abs(g[-1] - L) > 1e-9 * max(1.0, L):
                raise BadShape("samples grid must cover [0, L]")
        else:
            raise BadShape(f"unknown shape kind {self.kind!r}")

    def __call__(self, x):
        """Evaluate pointwise; x may be a scalar or ndarray."""
        x = np.asarray(x, dtype=float)
        if self.kind == "indicator":
            a, b = self.params
            out = np.where((x >= a) & (x <= b), 1.0, 0.0)
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(x, np.asarray(self.params))
        else:
            grid, values = self.params
            out = np.interp(x, grid, values)
        return out if out.ndim else float(out)

    def l2_norm_sq(self, L: float) -> float:
        """Exact squared L2(0, L) norm."""
        if self.kind == "indicator":
            a, b = self.params
            return b - a
        if self.kind == "polynomial":
            sq = np.polynomial.polynomial.polymul(self.params, self.params)
            powers = np.arange(1, len(sq) + 1)
            return float(np.sum(sq * L**powers / powers))
        grid, values = self.params
        total = 0.0
        for x0, x1, y0, y1 in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
            total += (x1 - x0) * (y0 * y0 + y0 * y1 + y1 * y1) / 3.0
        return total


@dataclass(frozen=True)
class PlantSpec:
    """Raw plant data, prior to validation."""

    m: int
    D: np.ndarray
    Q: np.ndarray
    L: float
    gamma1: float
    gamma2: float
    shapes: tuple[ShapeFunction, ...]

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        Q = np.array(self.Q, dtype=float)
        D.flags.writeable = False
        Q.flags.writeable = False
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "shapes", tuple(self.shapes))


@dataclass(frozen=True)
class DiffusionIndices:
    """sigma: first index from which all trailing diffusions coincide.

    sigma_bar = min{2*sigma - 3, 2m - 4}, clamped at 0, is the polynomial
    degree of the modal transform.
    """

    sigma: int
    sigma_bar: int


@dataclass(frozen=True)
class ValidatedPlant:
    """A PlantSpec whose invariants have all been confirmed."""

    m: int
    D: np.ndarray
    Q: np.ndarray
    L: float
    gamma1: float
    gamma2: float
    shapes: tuple[ShapeFunction, ...]
    indices: DiffusionIndices

    @property
    def d_last(self) -> float:
        return float(self.D[-1])


def diffusion_indices(D, m: int | None = None, tol: float = 0.0) -> DiffusionIndices:
    """Compute (sigma, sigma_bar) for the diffusion coefficients.

    By default equality of coefficients is exact; a positive `tol` groups
    values within that relative distance of the last coefficient.
    """
    d = np.asarray(D, dtype=float)
    if m is None:
        m = len(d)
    if np.any(d <= 0.0):
        raise NonPositiveDiffusion("all diffusion coefficients must be positive")

    def same(a, b):
        if tol <= 0.0:
            return a == b
        return abs(a - b) <= tol * max(abs(a), abs(b))

    sigma = m
    while sigma > 1 and same(d[sigma - 2], d[m - 1]):
        sigma -= 1
    sigma_bar = max(0, min(2 * sigma - 3, 2 * m - 4))
    return DiffusionIndices(sigma=sigma, sigma_bar=sigma_bar)


def validate_plant(spec: PlantSpec, diffusion_tol: float = 0.0) -> ValidatedPlant:
    """Check every structural invariant of the plant and tag it valid.

    Raises the specific violation subclass of PlantInputError on failure.
    """
    m = int(spec.m)
    if m < 1:
        raise PlantInputError("m must be a positive integer")
    D = np.asarray(spec.D, dtype=float)
    Q = np.asarray(spec.Q, dtype=float)
    if D.shape != (m,):
        raise PlantInputError(f"D must hold exactly m={m} coefficients")
    if Q.shape != (m, m):
        raise PlantInputError(f"Q must be {m}x{m}")
    if np.any(D <= 0.0):
        raise NonPositiveDiffusion("all diffusion coefficients must be positive")
    if not (float(spec.L) > 0.0):
        raise PlantInputError("domain length L must be positive")
    if spec.gamma1 == 0.0 and spec.gamma2 == 0.0:
        raise DegenerateBoundary("gamma1 and gamma2 cannot both vanish")

    # Cascade form: zeros strictly below the first subdiagonal.
    for i in range(m):
        for j in range(i - 1):
            if Q[i, j] != 0.0:
                raise CascadeViolation(
                    f"Q[{i + 1},{j + 1}] = {Q[i, j]} lies below the first subdiagonal"
                )
    for i in range(m - 1):
        if Q[i + 1, i] == 0.0:
            raise ControllabilityViolation(
                f"subdiagonal entry Q[{i + 2},{i + 1}] is zero"
            )

    for shape in spec.shapes:
        shape.validate(float(spec.L))

    return ValidatedPlant(
        m=m,
        D=spec.D,
        Q=spec.Q,
        L=float(spec.L),
        gamma1=float(spec.gamma1),
        gamma2=float(spec.gamma2),
        shapes=tuple(spec.shapes),
        indices=diffusion_indices(D, m, tol=diffusion_tol),
    )


# ---------------------------------------------------------------------------
# JSON plant files.  All reals round-trip bit-exactly (json uses repr floats).

def shape_to_dict(shape: ShapeFunction) -> dict:
    if shape.kind == "samples":
        grid, values = shape.params
        params = [list(grid), list(values)]
    else:
        params = list(shape.params)
    return {"kind": shape.kind, "params": params}


def shape_from_dict(obj: dict) -> ShapeFunction:
    kind = obj["kind"]
    params = obj["params"]
    if kind == "samples":
        return ShapeFunction.samples(params[0], params[1])
    return ShapeFunction(kind, tuple(float(p) for p in params))


def plant_to_dict(plant) -> dict:
    return {
        "m": int(plant.m),
        "D": [float(d) for d in plant.D],
        "Q": [[float(q) for q in row] for row in plant.Q],
        "L": float(plant.L),
        "gamma1": float(plant.gamma1),
        "gamma2": float(plant.gamma2),
        "shapes": [shape_to_dict(s) for s in plant.shapes],
    }


def plant_from_dict(obj: dict) -> PlantSpec:
    try:
        return PlantSpec(
            m=int(obj["m"]),
            D=np.asarray(obj["D"], dtype=float),
            Q=np.asarray(obj["Q"], dtype=float),
            L=float(obj["L"]),
            gamma1=float(obj["gamma1"]),
            gamma2=float(obj["gamma2"]),
            shapes=tuple(shape_from_dict(s) for s in obj.get("shapes", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PlantInputError(f"malformed plant file: {exc}") from exc


def load_plant(path: str) -> PlantSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlantInputError(f"plant file is not valid JSON: {exc}") from exc
    return plant_from_dict(obj)


def save_plant(plant, path: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(plant_to_dict(plant), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def example_plant_dict() -> dict:
    """A 3x3 unstable cascade with distinct diffusions, used by docs and tests."""
    return {
        "m": 3,
        "D": [4.0, 5.0, 6.0],
        "Q": [[10.0, 4.0, 8.0], [1.0, 10.0, 2.0], [0.0, 1.0, 20.0]],
        "L": math.pi,
        "gamma1": 1.0,
        "gamma2": 0.0,
        "shapes": [
            {"kind": "indicator", "params": [0.1, 0.2]},
            {"kind": "indicator", "params": [0.2, 0.3]},
            {"kind": "indicator", "params": [0.3, 0.4]},
        ],
    }
