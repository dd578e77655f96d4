"""Discrete A_lambda u = sigma (eta u')' + lambda u / d in divergence form.

Only the divergence factorization is discretized, so that the scheme is
self-adjoint in the 1/sigma-weighted pairing and the discrete Green identity
holds exactly:

    (A0 u)_i = sigma_i [eta_{i+1/2}(u_{i+1}-u_i) - eta_{i-1/2}(u_i-u_{i-1})] / h^2

Multiplying by the lumped mass ``W = diag(h/sigma_i)`` gives ``W A_lambda =
-S`` with ``S = K - lambda diag(h/(sigma d))`` symmetric, where ``K`` is the
eta-stiffness.  Every linear solve in the package goes through this
symmetric form.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import GridMismatch, SolverFailure
from .weighted_spaces import Grid, GridFunction, inner_l2_sigma


def _banded_upper(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    ab = np.zeros((2, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    return ab


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    grid: Grid
    lam: float
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def assembled(self) -> bool:
        return True

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def mass(self) -> np.ndarray:
        return self.grid.mass

    @property
    def singular_diag(self) -> np.ndarray:
        """lambda / d at the nodes."""
        g = self.grid
        return self.lam / g.coeffs.d.value_at(g.nodes)

    @property
    def boundary_gain(self) -> float:
        """Coefficient of the right boundary value in (A u)_n."""
        g = self.grid
        return g.sigma_nodes[-1] * g.eta_faces[-1] / g.h ** 2

    def energy_bands(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.energy_form_bands(self.lam)

    def energy_apply(self, u: np.ndarray) -> np.ndarray:
        """S u with S = K - lambda diag(h/(sigma d)); works column-wise."""
        g = self.grid
        if self.lam == 0.0:
            return g.stiffness_apply(u)
        sm = self.lam * g.singular_mass
        return g.stiffness_apply(u) - (sm if u.ndim == 1 else sm[:, None]) * u

    def apply0(self, u: np.ndarray, right: float = 0.0) -> np.ndarray:
        """A0 u on raw arrays; ``right`` is the boundary value at x = 1."""
        g = self.grid
        out = -g.stiffness_apply(u) / g.mass.reshape(-1, *([1] * (u.ndim - 1)))
        if right:
            out[-1] += self.boundary_gain * right
        return out

    def apply(self, u: np.ndarray, right: float = 0.0) -> np.ndarray:
        """A_lambda u on raw arrays."""
        sd = self.singular_diag.reshape(-1, *([1] * (u.ndim - 1)))
        return self.apply0(u, right) + sd * u

    def matrix(self, with_singular: bool = True) -> np.ndarray:
        """Dense matrix of A_lambda (or A0); for small grids and tests."""
        eye = np.eye(self.n)
        return self.apply(eye) if with_singular else self.apply0(eye)

    def cholesky(self, shift: float) -> np.ndarray:
        """Cached banded Cholesky factor of ``shift * W + S``.

        Raises SolverFailure when the matrix is not positive definite, which
        for small shifts signals lambda >= 1/C_HP.
        """
        key = float(shift)
        with self._lock:
            fac = self._cache.get(key)
            if fac is None:
                diag, off = self.energy_bands()
                ab = _banded_upper(diag + shift * self.mass, off)
                try:
                    fac = linalg.cholesky_banded(ab, lower=False)
                except linalg.LinAlgError as exc:
                    raise SolverFailure(
                        f"shift*W + S is not positive definite (shift={shift:g}, "
                        f"lambda={self.lam:g})") from exc
                self._cache[key] = fac
            return fac

    def solve_shifted(self, shift: float, rhs: np.ndarray) -> np.ndarray:
        """Solve (shift W + S) x = rhs."""
        return linalg.cho_solve_banded((self.cholesky(shift), False), rhs)


def assemble(grid: Grid, lam: Optional[float] = None) -> DiscreteOperator:
    """Build the discrete operator for ``grid.coeffs`` (lambda overridable)."""
    return DiscreteOperator(grid, grid.coeffs.lam if lam is None else float(lam))


def _check_same(op: DiscreteOperator, *fs: GridFunction):
    for f in fs:
        if f.grid is not op.grid:
            raise GridMismatch("grid function is not on the operator's grid")


def green_identity_defect(op: DiscreteOperator, u: GridFunction, v: GridFunction) -> float:
    """|<A0 u, v>_{1/sigma,h} + sum_faces eta du dv / h| for Dirichlet u, v."""
    _check_same(op, u, v)
    g = op.grid
    au = GridFunction(g, op.apply0(np.asarray(u.values)))
    lhs = inner_l2_sigma(au, v)
    flux = float(np.sum(g.eta_faces * np.diff(u.full()) * np.diff(v.full())) / g.h)
    return abs(lhs + flux)


def solve_resolvent(op: DiscreteOperator, f: GridFunction, g: GridFunction,
                    mu: float = 1.0) -> tuple[GridFunction, GridFunction]:
    """Solve mu (u, v) - (v, A_lambda u) = (f, g).

    Equivalently ``(mu^2 - A_lambda) u = mu f + g`` and ``v = mu u - f``;
    the first equation is solved in the weighted form
    ``(mu^2 W + S) u = W (mu f + g)``.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    _check_same(op, f, g)
    grid = op.grid
    rhs = grid.mass * (mu * f.values + g.values)
    u = op.solve_shifted(mu * mu, rhs)
    resid = (mu * mu * grid.mass * u + op.energy_apply(u)) - rhs
    # backward-error scale: |A| |u| + |rhs|
    diag, _ = op.energy_bands()
    scale = np.linalg.norm(rhs) + np.linalg.norm((mu * mu * grid.mass + np.abs(diag)) * np.abs(u))
    scale = max(scale, np.finfo(float).tiny)
    if not np.all(np.isfinite(u)) or np.linalg.norm(resid) > 1e-10 * scale:
        raise SolverFailure(f"resolvent residual {np.linalg.norm(resid) / scale:.2e}")
    return GridFunction(grid, u), GridFunction(grid, mu * u - f.values)
