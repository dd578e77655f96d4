"""Uniform grid with weighted quadrature data, weighted norms and C_HP.

Interior nodes are ``x_i = i h`` (i = 1..n, h = 1/(n+1)); faces are the
midpoints ``x_{i+1/2}`` (i = 0..n).  Degenerate or singular factors are only
ever evaluated at interior nodes and faces, never at x = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .coefficients import CoefficientSet, DegeneracyClass, degeneracy_report, eta
from .errors import ClassRequired, EigensolveFailure, GridMismatch, NegativeSquare


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    n: int
    coeffs: CoefficientSet

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs at least two interior nodes")
        for name in ("inv_sigma", "inv_sigma_d", "eta_nodes", "eta_faces"):
            w = getattr(self, name)
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError(f"grid weight {name} is not finite and positive")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(np.arange(1, self.n + 1) * self.h)

    @cached_property
    def faces(self) -> np.ndarray:
        return _frozen((np.arange(self.n + 1) + 0.5) * self.h)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Trapezoid weights for interior nodes (boundary values are zero)."""
        return _frozen(np.full(self.n, self.h))

    @cached_property
    def _eta_all(self) -> np.ndarray:
        # one quadrature sweep over nodes, faces and x = 1
        pts = np.concatenate([self.nodes, self.faces, [1.0]])
        return eta(pts, self.coeffs)

    @cached_property
    def eta_nodes(self) -> np.ndarray:
        return _frozen(self._eta_all[: self.n])

    @cached_property
    def eta_faces(self) -> np.ndarray:
        return _frozen(self._eta_all[self.n: 2 * self.n + 1])

    @property
    def eta1(self) -> float:
        return float(self._eta_all[-1])

    @cached_property
    def sigma_nodes(self) -> np.ndarray:
        return _frozen(self.coeffs.a.value_at(self.nodes) / self.eta_nodes)

    @cached_property
    def inv_sigma(self) -> np.ndarray:
        return _frozen(1.0 / self.sigma_nodes)

    @cached_property
    def inv_sigma_d(self) -> np.ndarray:
        return _frozen(1.0 / (self.sigma_nodes * self.coeffs.d.value_at(self.nodes)))

    @cached_property
    def mass(self) -> np.ndarray:
        """Diagonal of the discrete L^2_{1/sigma} Gram matrix, h / sigma_i."""
        return _frozen(self.h * self.inv_sigma)

    @cached_property
    def singular_mass(self) -> np.ndarray:
        """Diagonal of the discrete int u v / (sigma d) Gram matrix."""
        return _frozen(self.h * self.inv_sigma_d)

    @cached_property
    def stiffness_bands(self) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal, off-diagonal) of sum_faces eta (u_{i+1}-u_i)(v_{i+1}-v_i) / h."""
        e = self.eta_faces / self.h
        return _frozen(e[:-1] + e[1:]), _frozen(-e[1:-1])

    def stiffness_apply(self, u: np.ndarray) -> np.ndarray:
        """Apply the eta-stiffness to columns of ``u`` (Dirichlet closure)."""
        diag, off = self.stiffness_bands
        if u.ndim > 1:
            diag, off = self._stiffness_columns
        out = diag * u
        out[:-1] += off * u[1:]
        out[1:] += off * u[:-1]
        return out

    @cached_property
    def _stiffness_columns(self):
        diag, off = self.stiffness_bands
        return diag[:, None], off[:, None]

    def energy_form_bands(self, lam: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
        """Bands of S = stiffness - lambda * singular_mass."""
        lam = self.coeffs.lam if lam is None else lam
        diag, off = self.stiffness_bands
        return diag - lam * self.singular_mass, off

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.n))

    def function(self, fn, left: float = 0.0, right: float = 0.0) -> "GridFunction":
        return GridFunction(self, fn(self.nodes), left, right)


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray
    left: float = 0.0
    right: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise GridMismatch(f"expected {self.grid.n} values, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dirichlet(self) -> bool:
        return self.left == 0.0 and self.right == 0.0

    def full(self) -> np.ndarray:
        """Values including both boundary nodes."""
        return np.concatenate([[self.left], self.values, [self.right]])

    def _check(self, other: "GridFunction"):
        if other.grid is not self.grid:
            raise GridMismatch("grid functions live on different grids")

    def __add__(self, other):
        self._check(other)
        return GridFunction(self.grid, self.values + other.values,
                            self.left + other.left, self.right + other.right)

    def __sub__(self, other):
        self._check(other)
        return GridFunction(self.grid, self.values - other.values,
                            self.left - other.left, self.right - other.right)

    def __mul__(self, c: float):
        return GridFunction(self.grid, c * self.values, c * self.left, c * self.right)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def inner_l2_sigma(u: GridFunction, v: GridFunction) -> float:
    """Composite trapezoid approximation of int_0^1 u v / sigma.

    Boundary nodes contribute only when the product of boundary values is
    nonzero; 1/sigma is then evaluated at the endpoint (which fails loudly
    at a degenerate x = 0).
    """
    u._check(v)
    g = u.grid
    total = float(np.dot(g.mass, u.values * v.values))
    for uv, x in ((u.left * v.left, 0.0), (u.right * v.right, 1.0)):
        if uv != 0.0:
            w = 1.0 / float(g.coeffs.a.value_at(x) / eta(x, g.coeffs))
            if not math.isfinite(w):
                raise ValueError(f"1/sigma is not finite at x={x}; boundary value must be 0")
            total += 0.5 * g.h * w * uv
    return total


def _dirichlet_energy(u: GridFunction) -> float:
    g = u.grid
    du = np.diff(u.full())
    return float(np.sum(g.eta_faces * du * du) / g.h)


def norm_h1_sigma(u: GridFunction) -> float:
    """The lambda-free norm: sqrt(||u||_{1/sigma}^2 + int eta u'^2)."""
    return math.sqrt(inner_l2_sigma(u, u) + _dirichlet_energy(u))


def norm_h1_lambda(u: GridFunction, coeffs: Optional[CoefficientSet] = None) -> float:
    """sqrt(||u||_{1/sigma}^2 + int eta u'^2 - lambda int u^2/(sigma d)).

    Raises NegativeSquare when lambda is so large that the quadratic form
    goes negative, i.e. lambda is not admissible.
    """
    if not u.dirichlet:
        raise ValueError("norm_h1_lambda needs Dirichlet data")
    lam = (coeffs or u.grid.coeffs).lam
    g = u.grid
    q = inner_l2_sigma(u, u) + _dirichlet_energy(u) - lam * float(
        np.dot(g.singular_mass, u.values ** 2))
    if q < 0:
        raise NegativeSquare(f"squared norm {q:.3e} < 0: lambda={lam} not admissible")
    return math.sqrt(q)


def norm_eta_seminorm(u: GridFunction) -> float:
    """sqrt(int eta u'^2), the bullet norm."""
    return math.sqrt(_dirichlet_energy(u))


def smallest_hardy_eigenvalue(grid: Grid) -> float:
    """Smallest mu of stiffness u = mu * singular_mass u (Dirichlet)."""
    diag, off = grid.stiffness_bands
    s = 1.0 / np.sqrt(grid.singular_mass)
    # symmetric scaling M^{-1/2} K M^{-1/2} keeps the pencil tridiagonal
    d = diag * s * s
    e = off * s[:-1] * s[1:]
    try:
        w = linalg.eigh_tridiagonal(d, e, eigvals_only=True, select="i",
                                    select_range=(0, 0), lapack_driver="stebz")
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigensolveFailure(str(exc)) from exc
    mu = float(w[0])
    if not (mu > 0 and math.isfinite(mu)):
        raise EigensolveFailure(f"smallest eigenvalue {mu} is not positive")
    return mu


def estimate_chp(grid: Grid, coeffs: Optional[CoefficientSet] = None) -> float:
    """Best constant C in int u^2/(sigma d) <= C int eta u'^2 on the grid.

    This is the reciprocal of the smallest generalized eigenvalue of the
    Dirichlet pencil (eta-stiffness, 1/(sigma d)-mass).
    """
    if coeffs is not None and coeffs is not grid.coeffs:
        grid = Grid(grid.n, coeffs)
    return 1.0 / smallest_hardy_eigenvalue(grid)


def chp_extrapolated(coeffs: CoefficientSet, ns: Sequence[int] = (1024, 2048, 4096, 8192),
                     model: str = "auto") -> float:
    """Extrapolate estimate_chp to h -> 0 from a sequence of grids.

    The smallest eigenvalue is fitted as ``mu(h) = mu_inf + c * phi(h)`` by
    least squares.  ``phi = h^2`` for nondegenerate weights; when the
    singular weight behaves like 1/x^2 (K_a + K_d = 2) the Hardy
    ground state is not attained and ``phi = 1/log(h)^2``.  ``model="auto"``
    picks between the two from K_a + K_d.
    """
    ns = sorted(ns)
    if len(ns) < 2:
        raise ValueError("need at least two grids to extrapolate")
    mus = np.array([smallest_hardy_eigenvalue(Grid(n, coeffs)) for n in ns])
    hs = np.array([1.0 / (n + 1) for n in ns])
    if model == "auto":
        r = degeneracy_report(coeffs)
        model = "log" if abs(r.K_a + r.K_d - 2.0) < 1e-9 else "power"
    if model == "log":
        phi = 1.0 / np.log(hs) ** 2
    elif model == "power":
        # observed order from the last three grids, h^2 fallback
        p = 2.0
        if len(ns) >= 3:
            d1, d2 = mus[-3] - mus[-2], mus[-2] - mus[-1]
            if d1 * d2 > 0 and abs(d2) > 0:
                p = float(np.clip(np.log2(abs(d1 / d2)), 0.25, 4.0))
        phi = hs ** p
    else:
        raise ValueError(f"unknown extrapolation model {model!r}")
    A = np.column_stack([np.ones_like(phi), phi])
    mu_inf = float(np.linalg.lstsq(A, mus, rcond=None)[0][0])
    if mu_inf <= 0:
        raise EigensolveFailure("extrapolated eigenvalue is not positive")
    return 1.0 / mu_inf


def chp_closed_form_bound(coeffs: CoefficientSet) -> float:
    """4 max(eta) / (a(1) d(1) min(eta)), valid when a and d are WD or SD."""
    r = degeneracy_report(coeffs)
    if r.class_a is DegeneracyClass.NONE or r.class_d is DegeneracyClass.NONE:
        raise ClassRequired("closed-form bound needs a and d weakly or strongly degenerate")
    lo, hi = coeffs.eta_range
    return 4.0 * hi / (r.a1 * r.d1 * lo)
