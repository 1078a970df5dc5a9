"""Sturm-Liouville eigenbasis on (0, L) and L2 projection machinery.

The unit-diffusion eigenvalue problem

    phi'' + lambda * phi = 0,    phi'(0) = 0,
    gamma1 * phi(L) + gamma2 * phi'(L) = 0,

has eigenfunctions phi_n(x) = c_n cos(s_n x) with s_n the n-th nonnegative
root of the characteristic function

    chi(s) = gamma1 * cos(sL) - gamma2 * s * sin(sL),

and c_n chosen so that each phi_n has unit L2(0, L) norm.  The eigenvalues
lambda_n = s_n**2 form a strictly increasing nonnegative sequence; lambda=0
occurs only in the pure Neumann case gamma1 = 0, with phi = 1/sqrt(L).

Roots interlace the grid k*pi/L (chi alternates sign there, since
chi(k*pi/L) = gamma1 * (-1)**k), so bisection on those brackets isolates one
root each; a couple of guarded Newton steps then polish to machine accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureNonConvergence, RootBracketingFailure
from .model import ShapeFunction

_BOUNDARY_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SpectralBasis:
    """First `size` eigenpairs of the unit-diffusion problem on (0, L)."""

    L: float
    gamma1: float
    gamma2: float
    s: np.ndarray    # nonnegative frequencies, strictly increasing
    lam: np.ndarray  # eigenvalues lambda_n = s_n**2
    c: np.ndarray    # positive normalizers, ||c cos(s x)||_{L2} = 1

    def __post_init__(self):
        for arr in (self.s, self.lam, self.c):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return len(self.s)

    def phi(self, n: int, x):
        """Evaluate phi_n (1-based mode index) at scalar or array x."""
        return self.c[n - 1] * np.cos(self.s[n - 1] * np.asarray(x, dtype=float))

    def phi_prime(self, n: int, x):
        sn = self.s[n - 1]
        return -self.c[n - 1] * sn * np.sin(sn * np.asarray(x, dtype=float))


def _characteristic(gamma1: float, gamma2: float, L: float):
    def chi(s):
        return gamma1 * math.cos(s * L) - gamma2 * s * math.sin(s * L)

    def chi_prime(s):
        return -gamma1 * L * math.sin(s * L) - gamma2 * (
            math.sin(s * L) + s * L * math.cos(s * L)
        )

    return chi, chi_prime


def _refine_root(chi, chi_prime, a: float, b: float) -> float:
    """Bisect chi on [a, b] (sign change required), then Newton-polish."""
    fa = chi(a)
    fb = chi(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa * fb > 0.0:
        raise RootBracketingFailure(f"no sign change of chi on ({a}, {b})")
    lo, hi = a, b
    flo = fa
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            break
        fm = chi(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    s = 0.5 * (lo + hi)
    # Newton steps stay inside the bracket or are discarded.
    for _ in range(3):
        d = chi_prime(s)
        if d == 0.0:
            break
        step = chi(s) / d
        candidate = s - step
        if lo <= candidate <= hi:
            s = candidate
        else:
            break
    return s


def build_basis(L: float, gamma1: float, gamma2: float, count: int) -> SpectralBasis:
    """Return the first `count` eigenpairs, eigenfunctions normalized in L2."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if gamma1 == 0.0 and gamma2 == 0.0:
        raise ValueError("gamma1 and gamma2 cannot both vanish")
    if not L > 0.0:
        raise ValueError("L must be positive")

    if gamma1 == 0.0:
        # Pure Neumann: chi(s) = -gamma2 s sin(sL), roots exactly on the grid.
        s = np.array([k * math.pi / L for k in range(count)], dtype=float)
    else:
        chi, chi_prime = _characteristic(gamma1, gamma2, L)
        s = np.empty(count)
        for k in range(count):
            s[k] = _refine_root(chi, chi_prime, k * math.pi / L, (k + 1) * math.pi / L)

    lam = s * s
    c = np.empty(count)
    for i, si in enumerate(s):
        if si == 0.0:
            norm_sq = L
        else:
            norm_sq = L / 2.0 + math.sin(2.0 * si * L) / (4.0 * si)
        c[i] = 1.0 / math.sqrt(norm_sq)

    basis = SpectralBasis(L=float(L), gamma1=float(gamma1), gamma2=float(gamma2),
                          s=s, lam=lam, c=c)
    _check_boundary_residuals(basis)
    return basis


def _check_boundary_residuals(basis: SpectralBasis) -> None:
    for n in range(1, basis.size + 1):
        res = abs(
            basis.gamma1 * basis.phi(n, basis.L)
            + basis.gamma2 * basis.phi_prime(n, basis.L)
        )
        if res > _BOUNDARY_RESIDUAL_TOL:
            raise RootBracketingFailure(
                f"eigenfunction {n} violates the x=L boundary condition "
                f"(residual {res:.3e})"
            )


def extend_basis(basis: SpectralBasis, count: int) -> SpectralBasis:
    """Return a basis holding at least `count` eigenpairs."""
    if basis.size >= count:
        return basis
    return build_basis(basis.L, basis.gamma1, basis.gamma2, count)


# ---------------------------------------------------------------------------
# Quadrature

def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 48, initial_panels: int = 8) -> float:
    """Adaptive Simpson rule with Richardson correction, absolute tolerance.

    The interval is pre-split into `initial_panels` uniform panels before
    adaptive refinement; the coarse error estimator can otherwise terminate
    spuriously on oscillatory or symmetric integrands.
    """
    if initial_panels < 1:
        initial_panels = 1
    edges = np.linspace(a, b, initial_panels + 1)
    panel_tol = tol / initial_panels
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        fa, fm, fb = f(lo), f(0.5 * (lo + hi)), f(hi)
        whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)
        total += _simpson_rec(f, lo, hi, fa, fm, fb, whole, panel_tol, max_depth)
    return total


def _simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth):
    mid = 0.5 * (a + b)
    lm = 0.5 * (a + mid)
    rm = 0.5 * (mid + b)
    flm, frm = f(lm), f(rm)
    left = (mid - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - mid) / 6.0 * (fm + 4.0 * frm + fb)
    err = left + right - whole
    if abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    if depth <= 0:
        raise QuadratureNonConvergence(
            f"adaptive Simpson did not reach tol={tol} on ({a}, {b})"
        )
    return (
        _simpson_rec(f, a, mid, fa, flm, fm, left, tol / 2.0, depth - 1)
        + _simpson_rec(f, mid, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    )


# ---------------------------------------------------------------------------
# Projections

def _indicator_projection(a: float, b: float, s: float, c: float) -> float:
    # integral of c cos(sx) over [a, b]
    if s == 0.0:
        return c * (b - a)
    return c * (math.sin(s * b) - math.sin(s * a)) / s


def _cos_moments(L: float, s: float, degree: int):
    """Definite moments C_k = int_0^L x^k cos(sx) dx for k = 0..degree."""
    C = np.empty(degree + 1)
    if s == 0.0:
        for k in range(degree + 1):
            C[k] = L ** (k + 1) / (k + 1)
        return C
    sinL = math.sin(s * L)
    cosL = math.cos(s * L)
    C[0] = sinL / s
    S_prev = (1.0 - cosL) / s  # S_0
    for k in range(1, degree + 1):
        C[k] = (L**k) * sinL / s - k / s * S_prev
        S_prev = -(L**k) * cosL / s + k / s * C[k - 1]
    return C


def _polynomial_projection(coeffs, L: float, s: float, c: float) -> float:
    moments = _cos_moments(L, s, len(coeffs) - 1)
    return c * float(np.dot(coeffs, moments))


def _segment_linear_projection(x0, x1, y0, y1, s, c):
    # integral of c * cos(sx) * (linear through (x0,y0),(x1,y1)) over [x0, x1]
    if s == 0.0:
        return c * 0.5 * (y0 + y1) * (x1 - x0)
    slope = (y1 - y0) / (x1 - x0)
    sin0, sin1 = math.sin(s * x0), math.sin(s * x1)
    cos0, cos1 = math.cos(s * x0), math.cos(s * x1)
    # int cos(sx) dx and int (x - x0) cos(sx) dx on the segment
    i0 = (sin1 - sin0) / s
    i1 = ((x1 - x0) * sin1) / s + (cos1 - cos0) / (s * s)
    return c * (y0 * i0 + slope * i1)


def shape_projection(shape: ShapeFunction, basis: SpectralBasis, n: int) -> float:
    """Exact projection <b_j, phi_n> for the supported shape kinds."""
    s = float(basis.s[n - 1])
    c = float(basis.c[n - 1])
    if shape.kind == "indicator":
        a, b = shape.params
        return _indicator_projection(a, b, s, c)
    if shape.kind == "polynomial":
        return _polynomial_projection(np.asarray(shape.params), basis.L, s, c)
    grid, values = shape.params
    total = 0.0
    for x0, x1, y0, y1 in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        total += _segment_linear_projection(x0, x1, y0, y1, s, c)
    return total


def project(f, basis: SpectralBasis, n: int, tol: float = 1e-10) -> float:
    """L2 projection <f, phi_n> over (0, L).

    `f` is either a ShapeFunction (exact closed forms) or a plain callable
    (adaptive Simpson quadrature at absolute tolerance `tol`).
    """
    if n > basis.size:
        raise ValueError(f"mode {n} exceeds basis size {basis.size}")
    if isinstance(f, ShapeFunction):
        return shape_projection(f, basis, n)
    sn = float(basis.s[n - 1])
    cn = float(basis.c[n - 1])

    def integrand(x):
        return f(x) * cn * math.cos(sn * x)

    # Resolve every oscillation of phi_n before the error test can fire.
    panels = max(8, 4 * (int(sn * basis.L / math.pi) + 1))
    return adaptive_simpson(integrand, 0.0, basis.L, tol=tol,
                            initial_panels=panels)


def input_projection_row(shapes, basis: SpectralBasis, n: int) -> np.ndarray:
    """Row of mode-n projections of all shape functions: (b_{1,n} ... b_{N,n})."""
    if len(shapes) == 0:
        raise ValueError("need at least one shape function")
    return np.array([project(shape, basis, n) for shape in shapes])


def expand(coeffs, basis: SpectralBasis, grid) -> np.ndarray:
    """Partial eigenfunction sum on a spatial grid.

    coeffs has one m-vector per mode (shape n_modes x m); the result has
    shape m x len(grid), component i evaluated as sum_n coeffs[n, i] phi_n(x).
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    x = np.asarray(grid, dtype=float)
    n_modes = coeffs.shape[0]
    if n_modes > basis.size:
        raise ValueError("more coefficient rows than basis functions")
    # phi_matrix[n, p] = phi_{n+1}(x_p)
    phi_matrix = basis.c[:n_modes, None] * np.cos(basis.s[:n_modes, None] * x[None, :])
    return coeffs.T @ phi_matrix


def basis_to_dict(basis: SpectralBasis) -> dict:
    return {
        "L": basis.L,
        "gamma1": basis.gamma1,
        "gamma2": basis.gamma2,
        "eigen": [
            {"lambda": float(l), "s": float(s), "c": float(c)}
            for l, s, c in zip(basis.lam, basis.s, basis.c)
        ],
    }
