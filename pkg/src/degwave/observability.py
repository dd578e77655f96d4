"""Direct and inverse boundary-observation inequalities with explicit constants.

Direct (hidden regularity):

    eta(1) int_0^T y_x(t,1)^2 dt <= (C1 + C2 T) E(0)

Inverse, for T > T0:

    eta(1) int_0^T y_x(t,1)^2 dt >= (C T - C') E(0)

with ``(C, C') = (C4, C3)`` for lambda < 0 and ``(C6, C5)`` for lambda >= 0.
When K_a > 1 (and x b/a is bounded) M is replaced by M_inf everywhere.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from .coefficients import (CONTROL_CASES, CoefficientSet, DegeneracyReport, check_hypotheses,
                           degeneracy_report)
from .errors import BudgetZero, HypothesisViolated, TimeTooShort
from .evolution import Trajectory, propagate, time_grid
from .operator import DiscreteOperator, assemble
from .weighted_spaces import Grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObservabilityConstants:
    C1: float
    C2: float
    C3: float
    C4: float
    C5: float
    C6: float
    epsilon: Optional[float]
    T0: float
    eta1: float
    which_case: int
    chp: float
    lam: float
    M_used: float

    @property
    def case_name(self) -> str:
        return CONTROL_CASES[self.which_case]

    @property
    def negative_lambda(self) -> bool:
        return self.which_case in (0, 2)

    @property
    def slope(self) -> float:
        """Coefficient of T in the lower bound (C4 or C6)."""
        return self.C4 if self.negative_lambda else self.C6

    @property
    def offset(self) -> float:
        """Constant subtracted in the lower bound (C3 or C5)."""
        return self.C3 if self.negative_lambda else self.C5

    def lower_bound(self, T: float) -> float:
        """(C T - C') / eta(1): the guaranteed lower bound on C_T."""
        return (self.slope * T - self.offset) / self.eta1

    def as_dict(self) -> dict:
        return {
            "C1": self.C1, "C2": self.C2, "C3": self.C3, "C4": self.C4, "C5": self.C5,
            "C6": self.C6, "epsilon": self.epsilon, "T0": self.T0, "eta1": self.eta1,
            "case": self.case_name, "C_HP": self.chp, "lambda": self.lam, "M_used": self.M_used,
        }


def _m_for(report: DegeneracyReport) -> float:
    # M_inf takes over once a is strongly degenerate with K_a > 1
    if report.K_a > 1.0 and report.M_inf is not None:
        return report.M_inf
    return report.M


def direct_constants(report: DegeneracyReport, chp: float, lam: float) -> tuple[float, float]:
    """C1 = 2 max{1/a(1), 1}; C2 = max{|l|(2+Ka+Kd+M) C_HP + M + 2, 2 + Ka + M}."""
    if report.K_a + 2 * report.K_d > 2 + 1e-12 or not lam < 1.0 / chp:
        raise HypothesisViolated(
            f"direct inequality needs K_a+2K_d <= 2 and lambda < 1/C_HP "
            f"(K_a+2K_d={report.K_a + 2 * report.K_d:.6g}, lambda*C_HP={lam * chp:.6g})")
    m = _m_for(report)
    ka, kd = report.K_a, report.K_d
    c1 = 2.0 * max(1.0 / report.a1, 1.0)
    c2 = max(abs(lam) * (2.0 + ka + kd + m) * chp + m + 2.0, 2.0 + ka + m)
    return c1, c2


def inverse_constants(report: DegeneracyReport, chp: float, lam: float,
                      coeffs: Optional[CoefficientSet] = None,
                      allow_nondegenerate: bool = True) -> ObservabilityConstants:
    """All constants, epsilon and T0 for the active controllability case.

    The case is decided by :func:`check_hypotheses` when ``coeffs`` is
    given, otherwise from the report alone (same inequalities).  lambda = 0
    uses the lambda >= 0 branch.
    """
    if coeffs is not None:
        v = check_hypotheses(coeffs.with_lambda(lam), chp, report=report,
                             allow_nondegenerate=allow_nondegenerate)
        case = v.control_case
        if case is None:
            raise HypothesisViolated("; ".join(v.failures(required_only=True)))
    else:
        case = _case_from_report(report, chp, lam)
    m = report.M_inf if case >= 2 else report.M
    ka, kd = report.K_a, report.K_d
    c1 = 2.0 * max(1.0 / report.a1, 1.0)
    c2 = max(abs(lam) * (2.0 + ka + kd + m) * chp + m + 2.0, 2.0 + ka + m)
    c3 = 4.0 * max(1.0, 1.0 / report.a1) + ka * max(1.0, chp * report.max_d)
    c4 = 2.0 * (1.0 - ka / 2.0 - m) - abs(lam) * chp * (1.0 + 1.5 * ka + kd + m)
    c5 = 4.0 * max(1.0 / report.a1, 1.0) + ka * max(1.0, chp * report.max_d)
    c6 = 1.0 - ka / 2.0 - m
    negative = case in (0, 2)
    slope = c4 if negative else c6
    if slope <= 0:
        name = "C4" if negative else "C6"
        raise HypothesisViolated(f"{name} = {slope:.6g} <= 0")
    t0 = (c3 / c4) if negative else (c5 / c6)
    eps = 1.0 - lam * chp if 0.0 < lam < 1.0 / chp else None
    eta1 = report.eta1
    return ObservabilityConstants(c1, c2, c3, c4, c5, c6, eps, t0, eta1, case, chp, lam, m)


def _case_from_report(r: DegeneracyReport, chp: float, lam: float) -> int:
    from .coefficients import _leq, lambda_window_negative

    if not lam < 1.0 / chp:
        raise HypothesisViolated(f"lambda={lam:.6g} >= 1/C_HP={1 / chp:.6g}")
    if not _leq(r.K_a + 2 * r.K_d, 2.0):
        raise HypothesisViolated("K_a + 2K_d > 2")
    candidates = [(0, r.M)] if r.K_a <= 1.0 + 1e-12 else []
    if r.K_a > 1.0 and r.M_inf is not None:
        candidates.append((1, r.M_inf))
    for idx, m in candidates:
        if lam >= 0.0 and _leq(r.K_a + 2 * r.K_d, 2.0 - 2.0 * m):
            return 2 * idx + 1
        if lam < 0.0 and r.K_a < 2.0 - 2.0 * m and lambda_window_negative(
                r.K_a, r.K_d, m, chp) < lam:
            return 2 * idx
    raise HypothesisViolated("no controllability case applies")


def remainder_note(report: DegeneracyReport, consts: ObservabilityConstants) -> Optional[str]:
    """Warn when the dropped lambda-term of the lambda > 0 bound is negative."""
    if consts.lam > 0:
        coef = 1.0 - report.K_a / 2.0 - report.K_d - consts.M_used
        if coef < 0:
            return (f"1 - K_a/2 - K_d - M = {coef:.6g} < 0: the lambda > 0 lower bound "
                    "omits a negative integral term")
    return None


# ---------------------------------------------------------------------------
# inequality checks on trajectories


def trace_integral(traj: Trajectory) -> float:
    return traj.trace_integral()


def check_direct_inequality(traj: Trajectory, consts, E0: float, T: float) -> float:
    """Margin (C1 + C2 T) E0 - eta(1) int y_x(t,1)^2; >= -tol E0 is expected.

    ``consts`` is an :class:`ObservabilityConstants` or a ``(C1, C2)`` pair.
    """
    c1, c2 = (consts.C1, consts.C2) if hasattr(consts, "C1") else consts
    return (c1 + c2 * T) * E0 - traj.grid.eta1 * traj.trace_integral()


def check_inverse_inequality(traj: Trajectory, consts: ObservabilityConstants, E0: float,
                             T: float) -> float:
    """Margin eta(1) int y_x(t,1)^2 - (C T - C') E0; raises TimeTooShort for T <= T0."""
    if T <= consts.T0:
        raise TimeTooShort(f"T={T:.6g} <= T0={consts.T0:.6g}")
    return traj.grid.eta1 * traj.trace_integral() - (consts.slope * T - consts.offset) * E0


# ---------------------------------------------------------------------------
# random data


def smooth_random_data(grid: Grid, count: int, rng: np.random.Generator, modes: int = 16,
                       decay: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Random sine series for (y0, y1) with coefficients ~ N(0, 1) / k^decay.

    Returns two (n, count) arrays of Dirichlet data.  High modes are damped
    so that the data is resolved by the grid.
    """
    k = np.arange(1, modes + 1)
    basis = np.sin(np.pi * np.outer(grid.nodes, k))
    scale = 1.0 / k ** decay
    c0 = rng.standard_normal((modes, count)) * scale[:, None]
    c1 = rng.standard_normal((modes, count)) * (np.pi * k * scale)[:, None]
    return basis @ c0, basis @ c1


def packet_data(grid: Grid, center: float, width: float, direction: int = -1,
                coeffs: Optional[CoefficientSet] = None) -> tuple[np.ndarray, np.ndarray]:
    """A Gaussian bump travelling left (direction=-1) or right (+1).

    The velocity is ``-direction * sqrt(a) * y0'``, the one-way wave relation
    for the local speed sqrt(a).
    """
    coeffs = coeffs or grid.coeffs
    x = grid.nodes
    g = np.exp(-0.5 * ((x - center) / width) ** 2)
    dg = -(x - center) / width ** 2 * g
    speed = np.sqrt(coeffs.a.value_at(x))
    return g, -direction * speed * dg


def energies(op: DiscreteOperator, y0: np.ndarray, y1: np.ndarray) -> np.ndarray:
    from .evolution import _energy_arrays

    return _energy_arrays(op, y0, y1)


def run_batch(op: DiscreteOperator, y0: np.ndarray, y1: np.ndarray, T: float,
              dt: Optional[float] = None) -> dict:
    """Homogeneous runs for the columns of (y0, y1); returns E0, trace integrals, drift."""
    m, dt = time_grid(T, op.grid.h if dt is None else dt)
    res = propagate(op, y0, y1, dt, m)
    e = res["energy"]
    integ = trapezoid(res["trace"] ** 2, dx=dt, axis=0)
    drift = np.max(np.abs(e - e[0]), axis=0) / np.where(e[0] > 0, e[0], 1.0)
    return {"E0": e[0], "trace_integral": integ, "drift": drift, "dt": dt, "m": m,
            "trace": res["trace"]}


def inequality_suite(op: DiscreteOperator, consts: ObservabilityConstants, T: float,
                     samples: int = 100, seed: int = 0, dt: Optional[float] = None,
                     batch: int = 50) -> dict:
    """Margins of both inequalities on ``samples`` random smooth data sets.

    Margins are reported relative: direct / E0 and inverse / ((C T - C') E0).
    The inverse suite is skipped (None) when T <= T0.
    """
    rng = np.random.default_rng(seed)
    direct, inverse, drift = [], [], []
    left = samples
    while left > 0:
        k = min(batch, left)
        y0, y1 = smooth_random_data(op.grid, k, rng)
        res = run_batch(op, y0, y1, T, dt)
        lhs = op.grid.eta1 * res["trace_integral"]
        e0 = res["E0"]
        direct.append(((consts.C1 + consts.C2 * T) * e0 - lhs) / e0)
        if T > consts.T0:
            bound = (consts.slope * T - consts.offset) * e0
            inverse.append((lhs - bound) / bound)
        drift.append(res["drift"])
        left -= k
    direct = np.concatenate(direct)
    out = {"direct_rel_margin": direct, "min_direct": float(direct.min()),
           "max_drift": float(np.concatenate(drift).max()), "inverse_rel_margin": None,
           "min_inverse": None}
    if inverse:
        inv = np.concatenate(inverse)
        out["inverse_rel_margin"] = inv
        out["min_inverse"] = float(inv.min())
    return out


# ---------------------------------------------------------------------------
# observability constant


@dataclass
class CTEstimate:
    CT_hat: float
    cost: float
    worst_y0: np.ndarray
    worst_y1: np.ndarray
    sample_min: float
    ratios: np.ndarray


def _basis(grid: Grid, coeffs: CoefficientSet, sampler: str, modes: int,
           packets: int) -> np.ndarray:
    cols = []
    x = grid.nodes
    if sampler in ("smooth", "mixed"):
        k = np.arange(1, modes + 1)
        cols.append(np.sin(np.pi * np.outer(x, k)))
    if sampler in ("packets", "mixed"):
        width = 0.5 / packets
        centers = np.linspace(2 * width, 1 - 2 * width, packets)
        speed = np.sqrt(coeffs.a.value_at(x))
        for c in centers:
            g = np.exp(-0.5 * ((x - c) / width) ** 2)
            cols.append(np.column_stack([g, speed * (-(x - c) / width ** 2) * g]))
    if not cols:
        raise ValueError(f"unknown sampler {sampler!r}")
    return np.column_stack(cols)


def estimate_CT(op: DiscreteOperator, T: float, sampler: str = "mixed", budget: int = 256,
                refine: int = 64, seed: int = 0, dt: Optional[float] = None, modes: int = 24,
                packets: int = 24) -> CTEstimate:
    """Upper estimate of C_T = inf int_0^T y_x(t,1)^2 dt / E(0).

    Data live in the span of a fixed basis (low sine modes and/or Gaussian
    packets, each usable as displacement or velocity).  Every basis element
    is propagated once; afterwards the ratio of any combination is a ratio of
    two quadratic forms.  ``budget`` random combinations are drawn and the
    worst one is improved by ``refine`` sweeps of exact coordinate descent on
    the Rayleigh quotient.  The result is an upper bound of the discrete
    constant.
    """
    if budget <= 0:
        raise BudgetZero("estimate_CT needs a positive sample budget")
    g = op.grid
    phi = _basis(g, g.coeffs, sampler, modes, packets)
    q = phi.shape[1]
    zeros = np.zeros_like(phi)
    y0 = np.hstack([phi, zeros])
    y1 = np.hstack([zeros, phi])
    res = run_batch(op, y0, y1, T, dt)
    tr = res["trace"]
    w = np.full(tr.shape[0], res["dt"])
    w[0] = w[-1] = 0.5 * res["dt"]
    Q = tr.T @ (w[:, None] * tr)
    Q = 0.5 * (Q + Q.T)
    S_phi = op.energy_apply(phi)
    E = np.zeros((2 * q, 2 * q))
    E[:q, :q] = 0.5 * phi.T @ S_phi
    E[q:, q:] = 0.5 * phi.T @ (g.mass[:, None] * phi)
    E = 0.5 * (E + E.T)

    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((2 * q, budget))
    if sampler in ("smooth", "mixed"):
        # damp high sine modes like smooth_random_data
        kk = np.arange(1, modes + 1)
        coeffs[:modes] /= kk[:, None] ** 2
        coeffs[q:q + modes] *= (np.pi / kk)[:, None]
    num = np.einsum("ij,ik,kj->j", coeffs, Q, coeffs)
    den = np.einsum("ij,ik,kj->j", coeffs, E, coeffs)
    ratios = num / den
    j = int(np.argmin(ratios))
    c = coeffs[:, j].copy()
    sample_min = float(ratios[j])
    c, best = _coordinate_descent(Q, E, c, refine)
    best = min(best, sample_min)
    return CTEstimate(best, 1.0 / best if best > 0 else math.inf, phi @ c[:q], phi @ c[q:],
                      sample_min, ratios)


def _coordinate_descent(Q: np.ndarray, E: np.ndarray, c: np.ndarray, sweeps: int):
    """Minimize c'Qc / c'Ec by exact 2x2 Rayleigh-Ritz on span{c, e_j}."""
    qc, ec = Q @ c, E @ c
    cqc, cec = float(c @ qc), float(c @ ec)
    best = cqc / cec
    for _ in range(sweeps):
        improved = False
        for j in range(c.size):
            if E[j, j] <= 0:
                continue
            A = np.array([[cqc, qc[j]], [qc[j], Q[j, j]]])
            B = np.array([[cec, ec[j]], [ec[j], E[j, j]]])
            try:
                vals, vecs = linalg.eigh(A, B)
            except linalg.LinAlgError:
                continue
            if vals[0] < best * (1 - 1e-13):
                alpha, beta = vecs[:, 0]
                c = alpha * c
                c[j] += beta
                qc = alpha * qc + beta * Q[:, j]
                ec = alpha * ec + beta * E[:, j]
                cqc, cec = float(c @ qc), float(c @ ec)
                # renormalize to unit energy
                s = 1.0 / math.sqrt(cec)
                c, qc, ec = s * c, s * qc, s * ec
                cqc, cec = cqc * s * s, 1.0
                best = cqc / cec
                improved = True
        if not improved:
            break
    return c, best


def constants_for(coeffs: CoefficientSet, chp: float,
                  allow_nondegenerate: bool = True) -> ObservabilityConstants:
    """Convenience: degeneracy report + inverse_constants in one call."""
    r = degeneracy_report(coeffs)
    return inverse_constants(r, chp, coeffs.lam, coeffs, allow_nondegenerate)
