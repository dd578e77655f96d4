"""Null control by the Hilbert Uniqueness Method on the discrete scheme.

State pairs are ``U = (y, p)`` of interior arrays.  The midpoint rule
conserves the symplectic pairing

    omega(U, V) = p' W phi - y' W psi,        V = (phi, psi),

up to the boundary work: for a controlled U and a homogeneous V,

    omega(U_m, V_m) - omega(U_0, V_0) = -dt sum_k eta_{n+1/2} fbar_k obs(V)_k,

where ``obs(V)_k = -phibar_{n,k} / h`` is the one-sided trace v_x(t, 1) of V
averaged over step k and ``fbar_k`` is the step average of f.  This is the
exact discrete transposition identity.  With

    Lambda(V, W) = eta_{n+1/2} dt sum_k obs(V)_k obs(W)_k,
    L(W)         = u0' W w1(0) - u1' W w0(0),

the control f_k = phi_{n,k} / h, i.e. minus the trace of the solution
Vbar of Lambda(Vbar, .) = L, drives (u0, u1) to zero at time T.  Final data V live in the product
space with inner product ``phi' S phi + psi' W psi``; its Riesz map is the
conjugate-gradient preconditioner.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CoercivityWarning, GridMismatch, NoConvergence
from .evolution import (Trajectory, _build_trajectory, propagate, simulate_controlled,
                        time_grid)
from .operator import DiscreteOperator
from .weighted_spaces import GridFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FinalData:
    """Final data (v(T), v_t(T)) of the backward adjoint problem."""

    v0: GridFunction
    v1: GridFunction

    def __post_init__(self):
        if self.v0.grid is not self.v1.grid:
            raise GridMismatch("final displacement and velocity on different grids")
        if not (self.v0.dirichlet and self.v1.dirichlet):
            raise ValueError("final data must satisfy homogeneous Dirichlet conditions")

    @property
    def grid(self):
        return self.v0.grid

    @classmethod
    def from_arrays(cls, grid, v0, v1) -> "FinalData":
        return cls(GridFunction(grid, v0), GridFunction(grid, v1))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v0.values, self.v1.values])

    def norm(self, op: DiscreteOperator) -> float:
        """H0 norm sqrt(v0' S v0 + v1' W v1)."""
        v = self.stacked()
        return math.sqrt(max(_riesz_pair(op, v, v), 0.0))


@dataclass
class ControlResult:
    t: np.ndarray
    f: np.ndarray
    cg_residuals: np.ndarray
    functional: np.ndarray
    iterations: int
    converged: bool
    final_y_norm: float = math.nan
    final_yt_norm: float = math.nan
    initial_norm: float = math.nan
    transposition_residual: float = math.nan
    final_data: Optional[FinalData] = None
    meta: dict = field(default_factory=dict)

    @property
    def relative_final_norms(self) -> tuple[float, float]:
        s = self.initial_norm if self.initial_norm > 0 else 1.0
        return self.final_y_norm / s, self.final_yt_norm / s

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def control_l2(self) -> float:
        from scipy.integrate import trapezoid

        return float(math.sqrt(trapezoid(self.f ** 2, self.t))) if self.t.size > 1 else 0.0


# ---------------------------------------------------------------------------
# building blocks on raw arrays; the batch axis is axis 1


def _split(op: DiscreteOperator, v: np.ndarray):
    n = op.n
    return v[:n], v[n:]


def _riesz_pair(op: DiscreteOperator, u: np.ndarray, v: np.ndarray) -> float:
    u0, u1 = _split(op, u)
    v0, v1 = _split(op, v)
    return float(u0 @ op.energy_apply(v0) + u1 @ (op.mass * v1))


def _riesz_solve(op: DiscreteOperator, r: np.ndarray) -> np.ndarray:
    """G^{-1} r with G = blockdiag(S, W)."""
    r0, r1 = _split(op, r)
    return np.concatenate([op.solve_shifted(0.0, r0), r1 / op.mass])


def _adjoint_edges(op: DiscreteOperator, v0: np.ndarray, v1: np.ndarray, dt: float,
                   m: int) -> tuple[np.ndarray, dict]:
    """Backward solve from time T; returns v_n at t_0..t_m (forward order)."""
    res = propagate(op, v0, -np.asarray(v1), dt, m)
    return res["edge"][::-1], res


def nodal_trace(op: DiscreteOperator, edge: np.ndarray) -> np.ndarray:
    """One-sided trace v_x(t, 1) = (0 - v_n) / h at the time nodes."""
    return -edge / op.grid.h


def _midpoint(series: np.ndarray) -> np.ndarray:
    return 0.5 * (series[1:] + series[:-1])


def _gram_apply(op: DiscreteOperator, v: np.ndarray, dt: float, m: int):
    """Riesz representer of Lambda(V, .) and the nodal trace of V.

    By the transposition identity Lambda(V, W) = -omega(Z_m, W_m) where Z is
    the controlled solution from rest driven by f = trace(V).
    """
    v0, v1 = _split(op, v)
    tr = nodal_trace(op, _adjoint_edges(op, v0, v1, dt, m)[0])
    z = propagate(op, np.zeros(op.n), np.zeros(op.n), dt, m, f=tr)
    w = op.mass
    return np.concatenate([-w * z["p"], w * z["y"]]), tr


# ---------------------------------------------------------------------------
# public operations


def solve_backward(VT: FinalData, T: float, dt: Optional[float] = None,
                   op: Optional[DiscreteOperator] = None) -> Trajectory:
    """Backward adjoint problem with data at t = T, by time reflection.

    The forward problem is run from (v_T0, -v_T1) and the time index is
    reversed, so ``traj.t[k]`` is the physical time and
    ``traj.boundary_trace[k]`` is v_x(t_k, 1).
    """
    from .operator import assemble

    op = op or assemble(VT.grid)
    if op.grid is not VT.grid:
        raise GridMismatch("final data not on the operator's grid")
    m, dt = time_grid(T, op.grid.h if dt is None else dt)
    res = propagate(op, VT.v0.values, -VT.v1.values, dt, m)
    traj = _build_trajectory(op, res, dt, m, VT.v0, -VT.v1, {"problem": "backward"})
    # reverse time; velocities flip sign under the reflection
    g = op.grid
    from .evolution import WaveState

    traj.energy = res["energy"][::-1].copy()
    traj.boundary_trace = res["trace"][::-1].copy()
    traj.meta["edge"] = res["edge"][::-1].copy()
    start = WaveState(GridFunction(g, res["y"]), GridFunction(g, -res["p"]), 0.0)
    end = WaveState(VT.v0, VT.v1, float(traj.t[-1]))
    traj.initial, traj.final = start, end
    return traj


def lambda_form(VT: FinalData, WT: FinalData, T: float, dt: Optional[float] = None,
                op: Optional[DiscreteOperator] = None) -> float:
    """Lambda(V, W) = eta_{n+1/2} dt sum_k obs(V)_k obs(W)_k (step-averaged traces)."""
    from .operator import assemble

    op = op or assemble(VT.grid)
    m, dt = time_grid(T, op.grid.h if dt is None else dt)
    v0 = np.column_stack([VT.v0.values, WT.v0.values])
    v1 = np.column_stack([VT.v1.values, WT.v1.values])
    edges, _ = _adjoint_edges(op, v0, v1, dt, m)
    obs = _midpoint(nodal_trace(op, edges))
    return float(op.grid.eta_faces[-1] * dt * np.sum(obs[:, 0] * obs[:, 1]))


def rhs_functional(WT: FinalData, u0: GridFunction, u1_dual: GridFunction, T: float,
                   dt: Optional[float] = None, op: Optional[DiscreteOperator] = None) -> float:
    """L(W) = int u0 w_t(0) / sigma - <u1, w(0)>, the pairing taken in L^2_{1/sigma}."""
    traj = solve_backward(WT, T, dt, op)
    w = traj.grid.mass
    return float(np.dot(w, u0.values * traj.initial.yt.values)
                 - np.dot(w, u1_dual.values * traj.initial.y.values))


def _dual_norm(op: DiscreteOperator, p: np.ndarray) -> float:
    """Discrete H^{-1} norm sqrt((W p)' S^{-1} (W p))."""
    wp = op.mass * p
    return math.sqrt(max(float(wp @ op.solve_shifted(0.0, wp)), 0.0))


def _l2_norm(op: DiscreteOperator, y: np.ndarray) -> float:
    return math.sqrt(float(np.dot(op.mass, y * y)))


def solve_hum(u0: GridFunction, u1_dual: GridFunction, T: float, tol: float = 1e-8,
              max_iter: int = 500, *, op: Optional[DiscreteOperator] = None,
              dt: Optional[float] = None, T0: Optional[float] = None, verify: bool = True,
              probes: int = 10, seed: int = 0, raise_on_failure: bool = True) -> ControlResult:
    """Minimize J(V) = Lambda(V, V)/2 - L(V) by preconditioned conjugate gradients.

    Each iteration costs one backward solve (the trace of the search
    direction) and one controlled forward solve from rest (its Riesz
    representer).  The preconditioner is the H0 Riesz map.  Stops when the
    preconditioned residual norm drops below ``tol`` times its initial
    value.  On failure NoConvergence carries the best iterate's result.
    """
    from .operator import assemble

    op = op or assemble(u0.grid)
    if u0.grid is not op.grid or u1_dual.grid is not op.grid:
        raise GridMismatch("data not on the operator's grid")
    if T0 is not None and T <= T0:
        warnings.warn(f"T={T:.6g} <= T0={T0:.6g}: coercivity of Lambda is not guaranteed",
                      CoercivityWarning, stacklevel=2)
    m, dt = time_grid(T, op.grid.h if dt is None else dt)
    t = np.arange(m + 1) * dt
    n = op.n
    w = op.mass

    # b: Riesz coefficients of L(W) = -omega(free(U_0)_m, W_m)
    free = propagate(op, u0.values, u1_dual.values, dt, m)
    b = np.concatenate([-w * free["p"], w * free["y"]])

    x = np.zeros(2 * n)
    f = np.zeros(m + 1)
    r = b.copy()
    z = _riesz_solve(op, r)
    rz = float(r @ z)
    r0 = math.sqrt(max(rz, 0.0))
    residuals = [r0]
    functional = [0.0]
    converged = r0 == 0.0
    it = 0
    d = z.copy()
    while not converged and it < max_iter:
        ad, tr_d = _gram_apply(op, d, dt, m)
        dad = float(d @ ad)
        if not dad > 0:
            log.warning("HUM: nonpositive curvature %.3e at iteration %d", dad, it)
            break
        alpha = rz / dad
        x += alpha * d
        f -= alpha * tr_d
        r -= alpha * ad
        z = _riesz_solve(op, r)
        rz_new = float(r @ z)
        it += 1
        res = math.sqrt(max(rz_new, 0.0))
        residuals.append(res)
        # J(x) = -(b'x + r'x)/2 since Ax = b - r
        functional.append(-0.5 * float(x @ (b + r)))
        if res <= tol * r0:
            converged = True
            break
        d = z + (rz_new / rz) * d
        rz = rz_new

    VT = FinalData.from_arrays(op.grid, x[:n], x[n:])
    result = ControlResult(t, f, np.array(residuals), np.array(functional), it, converged,
                           final_data=VT, meta={"dt": dt, "steps": m, "tol": tol})
    result.initial_norm = math.hypot(_l2_norm(op, u0.values), _dual_norm(op, u1_dual.values))
    if verify:
        verify_null_control(result, u0, u1_dual, T, op=op, probes=probes, seed=seed)
    if not converged:
        msg = (f"HUM did not converge in {it} iterations "
               f"(residual ratio {residuals[-1] / r0 if r0 else 0.0:.2e})")
        if raise_on_failure:
            raise NoConvergence(msg, result)
        log.warning(msg)
    return result


def transposition_residual(op: DiscreteOperator, u0: np.ndarray, u1: np.ndarray,
                           f: np.ndarray, uT: np.ndarray, pT: np.ndarray, dt: float, m: int,
                           probes: int = 10, seed: int = 0) -> float:
    """Max relative defect of the transposition identity over random test data.

    For each random final datum W the defect is
    omega(U_m, W_m) - omega(U_0, W_0) + eta dt sum_k fbar_k obs(W)_k, scaled
    by the sum of absolute values of the three terms.
    """
    from .observability import smooth_random_data

    rng = np.random.default_rng(seed)
    w0, w1 = smooth_random_data(op.grid, probes, rng)
    edges, res = _adjoint_edges(op, w0, w1, dt, m)
    obs = _midpoint(nodal_trace(op, edges))
    # state of W at t = 0 after reflecting back
    w0_start, w1_start = res["y"], -res["p"]
    mass = op.mass[:, None]
    om_end = (pT[:, None] * mass * w0).sum(0) - (uT[:, None] * mass * w1).sum(0)
    om_start = (u1[:, None] * mass * w0_start).sum(0) - (u0[:, None] * mass * w1_start).sum(0)
    work = op.grid.eta_faces[-1] * dt * (_midpoint(f)[:, None] * obs).sum(0)
    defect = np.abs(om_end - om_start + work)
    scale = np.abs(om_end) + np.abs(om_start) + np.abs(work)
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(defect / scale))


def verify_null_control(result: ControlResult, u0: GridFunction, u1_dual: GridFunction,
                        T: float, *, op: Optional[DiscreteOperator] = None, probes: int = 10,
                        seed: int = 0) -> tuple[float, float]:
    """Run the controlled problem with ``result.f``; return (||u(T)||, ||u_t(T)||_{-1}).

    The displacement norm is the discrete L^2_{1/sigma} norm over interior
    nodes, the velocity norm the discrete dual norm.  The transposition
    identity defect against ``probes`` random test data is stored on the
    result.
    """
    from .operator import assemble

    op = op or assemble(u0.grid)
    m, dt = time_grid(T, op.grid.h if result.dt == 0 else result.dt)
    if result.f.size != m + 1:
        raise ValueError(f"control has {result.f.size} samples, expected {m + 1}")
    traj = simulate_controlled(u0, u1_dual, result.f, T, dt, op=op)
    uT, pT = traj.final.y.values, traj.final.yt.values
    result.final_y_norm = _l2_norm(op, uT)
    result.final_yt_norm = _dual_norm(op, pT)
    if math.isnan(result.initial_norm):
        result.initial_norm = math.hypot(_l2_norm(op, u0.values),
                                         _dual_norm(op, u1_dual.values))
    result.transposition_residual = transposition_residual(
        op, u0.values, u1_dual.values, result.f, uT, pT, dt, m, probes, seed)
    return result.final_y_norm, result.final_yt_norm


def write_control_csv(result: ControlResult, path) -> None:
    """CSV with columns t, f."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,f\n")
        for tk, fk in zip(result.t, result.f):
            fh.write(f"{float(tk)!r},{float(fk)!r}\n")
