"""Polynomial modal transform decoupling the diffusion mismatch.

For a validated plant with diffusion indices (sigma, sigma_bar), the mode-n
transform is the unit upper-triangular matrix

    T_n = I + sum_{i=1..sigma_bar} lambda_n**i * Tbar_i      (n <= N),
    T_n = I                                                  (n >= N+1),

where the nilpotent coefficient matrices Tbar_i solve the masked recursive
Sylvester equations (with B = e_1, Tbar_0 = I, d_m the last diffusion)

    (I - B B^T) (Q Tbar_i - Tbar_i Q + Tbar_{i-1} (D - d_m I)) = 0.

Tbar_i is supported on rows j = 1..m-1-ceil(i/2) and columns
k = j+ceil(i/2)..m.  Each unknown entry (j, k) is obtained by eliminating
entry (j+1, k) of the masked residual, sweeping j downward and k rightmost
first; the pivot is the subdiagonal entry q_{j+1,j}, nonzero by the
controllability condition.  The elimination is the authoritative solver;
the closed-form recursion `closed_form_coeff` is an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfSupport, ResidualNonzero
from .model import ValidatedPlant

RESIDUAL_TOL = 1e-9


def support_rows(m: int, i: int) -> range:
    """1-based row indices j carrying unknowns of Tbar_i."""
    return range(1, m - math.ceil(i / 2))


def support_cols(m: int, i: int, j: int) -> range:
    """1-based column indices k of row j inside the support of Tbar_i."""
    return range(j + math.ceil(i / 2), m + 1)


def in_support(m: int, i: int, j: int, k: int) -> bool:
    return j in support_rows(m, i) and k in support_cols(m, i, j)


@dataclass(frozen=True)
class TransformFamily:
    """Coefficient matrices Tbar_1..Tbar_sigma_bar of the modal transform."""

    m: int
    sigma_bar: int
    coeffs: tuple  # tuple of (m, m) ndarrays, strictly upper triangular

    def __post_init__(self):
        for c in self.coeffs:
            c.flags.writeable = False

    @property
    def is_empty(self) -> bool:
        return self.sigma_bar == 0


@dataclass(frozen=True)
class ModalTransform:
    """T_n together with its exact polynomial inverse."""

    n: int
    matrix: np.ndarray
    inverse: np.ndarray


def _masked_residual(Q: np.ndarray, Ti: np.ndarray, forcing: np.ndarray) -> np.ndarray:
    """(I - B B^T)(Q Ti - Ti Q + forcing); the mask zeroes row one."""
    R = Q @ Ti - Ti @ Q + forcing
    R[0, :] = 0.0
    return R


def solve_transform_family(plant: ValidatedPlant) -> TransformFamily:
    """Solve the masked Sylvester recursion by structured elimination.

    Raises ResidualNonzero if the computed family fails to zero the complete
    masked residual, which cannot happen for plants satisfying the cascade
    and controllability conditions.
    """
    m = plant.m
    Q = np.asarray(plant.Q, dtype=float)
    D = np.asarray(plant.D, dtype=float)
    sigma_bar = plant.indices.sigma_bar
    shift = np.diag(D - D[-1])

    coeffs = []
    prev = np.eye(m)
    for i in range(1, sigma_bar + 1):
        Ti = np.zeros((m, m))
        forcing = prev @ shift
        for j in reversed(support_rows(m, i)):
            for k in reversed(support_cols(m, i, j)):
                r = _masked_residual(Q, Ti, forcing)[j, k - 1]  # entry (j+1, k), 1-based
                Ti[j - 1, k - 1] = -r / Q[j, j - 1]
        _verify_residual(Q, Ti, forcing, i)
        coeffs.append(Ti)
        prev = Ti
    return TransformFamily(m=m, sigma_bar=sigma_bar, coeffs=tuple(coeffs))


def _residual_scale(Q: np.ndarray, Ti: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(Q)) * np.max(np.abs(Ti))))


def _verify_residual(Q, Ti, forcing, i) -> None:
    R = _masked_residual(Q, Ti, forcing)
    scale = _residual_scale(Q, Ti)
    worst = np.unravel_index(np.argmax(np.abs(R)), R.shape)
    if abs(R[worst]) > RESIDUAL_TOL * scale:
        raise ResidualNonzero(i, worst[0] + 1, worst[1] + 1, float(R[worst]))


def sylvester_residuals(plant: ValidatedPlant, family: TransformFamily):
    """Scaled max-abs masked residual of each family equation (diagnostics)."""
    Q = np.asarray(plant.Q, dtype=float)
    shift = np.diag(plant.D - plant.D[-1])
    out = []
    prev = np.eye(plant.m)
    for i, Ti in enumerate(family.coeffs, start=1):
        R = _masked_residual(Q, Ti, prev @ shift)
        out.append(float(np.max(np.abs(R))) / _residual_scale(Q, Ti))
        prev = Ti
    return out


def closed_form_coeff(plant: ValidatedPlant, i: int, j: int, k: int,
                      Ti_partial: np.ndarray, prev: np.ndarray) -> float:
    """Coefficient (j, k) of Tbar_i by the explicit recursion.

    `Ti_partial` must already hold every entry of Tbar_i in rows > j, and
    `prev` is Tbar_{i-1} (the identity for i = 1).  Indices are 1-based.
    This path is an independent cross-check of the elimination: it sums only
    over the structural support ranges instead of forming residual matrices.
    """
    m = plant.m
    if not in_support(m, i, j, k):
        raise IndexOutOfSupport(f"({j},{k}) outside support of Tbar_{i}")
    Q = plant.Q
    D = plant.D
    half = math.ceil(i / 2)

    acc = 0.0
    # Row j+1 of Tbar_i against column k of Q, over that row's support.
    for l in range(j + 1 + half, m + 1):
        acc += Ti_partial[j, l - 1] * Q[l - 1, k - 1]
    # Row j+1 of Q against column k of Tbar_i, over the support rows below j.
    for r in range(j + 1, m - half + 1):
        acc -= Q[j, r - 1] * Ti_partial[r - 1, k - 1]
    # Forcing from the previous family member (Kronecker delta for i = 1).
    if i == 1:
        prev_entry = 1.0 if (j + 1) == k else 0.0
    else:
        prev_entry = prev[j, k - 1]
    acc += prev_entry * (D[-1] - D[k - 1])
    return acc / Q[j, j - 1]


def closed_form_family(plant: ValidatedPlant) -> TransformFamily:
    """Build the whole family from the closed-form recursion alone."""
    m = plant.m
    sigma_bar = plant.indices.sigma_bar
    coeffs = []
    prev = np.eye(m)
    for i in range(1, sigma_bar + 1):
        Ti = np.zeros((m, m))
        for j in reversed(support_rows(m, i)):
            for k in reversed(support_cols(m, i, j)):
                Ti[j - 1, k - 1] = closed_form_coeff(plant, i, j, k, Ti, prev)
        coeffs.append(Ti)
        prev = Ti
    return TransformFamily(m=m, sigma_bar=sigma_bar, coeffs=tuple(coeffs))


def _nilpotent_part(family: TransformFamily, lam: float) -> np.ndarray:
    S = np.zeros((family.m, family.m))
    power = 1.0
    for Ti in family.coeffs:
        power *= lam
        S += power * Ti
    return S


def mode_transform(family: TransformFamily, lam: float, n: int, N: int) -> ModalTransform:
    """Assemble T_n and its inverse; T_n = I for n >= N+1.

    The inverse is the terminating Neumann series of the strictly upper
    triangular part, hence exact up to roundoff; det(T_n) = 1 always.
    """
    m = family.m
    eye = np.eye(m)
    if n >= N + 1 or family.is_empty or lam == 0.0:
        return ModalTransform(n=n, matrix=eye.copy(), inverse=eye.copy())
    S = _nilpotent_part(family, lam)
    matrix = eye + S
    inverse = eye.copy()
    term = eye
    for _ in range(m - 1):
        term = term @ (-S)
        if not term.any():
            break
        inverse = inverse + term
    return ModalTransform(n=n, matrix=matrix, inverse=inverse)


def coupling_row(plant: ValidatedPlant, family: TransformFamily, lam: float,
                 transform: ModalTransform) -> np.ndarray:
    """Row G_n of the feedback term B G_n appearing in the target dynamics.

    G_n = -B^T ((Q - lam d_m I) S + S (lam D - Q) + lam (D - d_m I)) T_n^{-1}
    with S the nilpotent part of T_n.  The modal gains cancel exactly this
    term; for identical diffusions it vanishes.
    """
    m = plant.m
    Q = plant.Q
    D = np.diag(plant.D)
    d_last = plant.d_last
    S = _nilpotent_part(family, lam)
    M = (Q - lam * d_last * np.eye(m)) @ S + S @ (lam * D - Q) + lam * (D - d_last * np.eye(m))
    return -(M[0, :] @ transform.inverse)


def cancellation_residual(plant: ValidatedPlant, family: TransformFamily,
                          lam: float, transform: ModalTransform) -> float:
    """Max-abs residual of (Q - lam d_m I) T_n + T_n (lam D - Q) + B G_n T_n."""
    m = plant.m
    Q = plant.Q
    D = np.diag(plant.D)
    G = coupling_row(plant, family, lam, transform)
    T = transform.matrix
    R = (Q - lam * plant.d_last * np.eye(m)) @ T + T @ (lam * D - Q)
    R[0, :] += G @ T
    return float(np.max(np.abs(R)))


def family_to_dict(family: TransformFamily) -> dict:
    return {
        "m": family.m,
        "sigma_bar": family.sigma_bar,
        "coeffs": [[[float(v) for v in row] for row in Ti] for Ti in family.coeffs],
    }
