"""Time integration of the homogeneous and boundary-controlled wave systems.

The first-order system ``(y, y_t)' = (y_t, A_lambda y + B f)`` is advanced by
the implicit midpoint rule.  Eliminating the velocity gives one symmetric
positive definite tridiagonal solve per step,

    (W + dt^2/4 S) y+ = W (y + dt p) - dt^2/4 S y + dt^2/2 W B fbar,
    p+ = 2 (y+ - y) / dt - p,

where ``fbar = (f(t_k) + f(t_k+1)) / 2`` and ``W B fbar = eta_{n+1/2} fbar / h``
at the last node.  The discrete energy ``(y'Sy + p'Wp)/2`` is a quadratic
invariant of the homogeneous scheme, so it is conserved up to round-off.
"""
from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import get_lapack_funcs

from .coefficients import CoefficientSet, degeneracy_report
from .errors import EnergyDriftExceeded, GridMismatch, SolverFailure
from .operator import DiscreteOperator, assemble
from .weighted_spaces import Grid, GridFunction

log = logging.getLogger(__name__)

_pbtrs = get_lapack_funcs("pbtrs", dtype=np.float64)


@dataclass(frozen=True)
class WaveState:
    y: GridFunction
    yt: GridFunction
    t: float = 0.0

    def __post_init__(self):
        if self.y.grid is not self.yt.grid:
            raise GridMismatch("displacement and velocity on different grids")

    @property
    def grid(self) -> Grid:
        return self.y.grid


class MidpointStepper:
    """Implicit midpoint steps of fixed size ``dt`` (negative runs backward)."""

    def __init__(self, op: DiscreteOperator, dt: float):
        if dt == 0:
            raise ValueError("dt must be nonzero")
        self.op = op
        self.dt = float(dt)
        self.c = 0.25 * self.dt * self.dt
        g = op.grid
        self.mass = g.mass
        self.inject = 2.0 * self.c * g.eta_faces[-1] / g.h
        # factor (W/c + S); rhs is divided by c before the solve
        self._fac = op.cholesky(1.0 / self.c)

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = _pbtrs(self._fac, rhs / self.c, lower=0)
        if info != 0:
            raise SolverFailure(f"banded solve failed (info={info})")
        return x

    def step(self, y: np.ndarray, p: np.ndarray, fbar=0.0,
             sy: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
        """Advance raw arrays (n,) or (n, k); ``fbar`` is the midpoint boundary value.

        ``sy`` may pass a precomputed ``S y``.
        """
        w = self.mass if y.ndim == 1 else self.mass[:, None]
        if sy is None:
            sy = self.op.energy_apply(y)
        rhs = w * (y + self.dt * p) - self.c * sy
        if np.any(fbar):
            rhs[-1] += self.inject * np.asarray(fbar)
        y1 = self._solve(rhs)
        p1 = (2.0 / self.dt) * (y1 - y) - p
        return y1, p1


def _energy_arrays(op: DiscreteOperator, y: np.ndarray, p: np.ndarray, right=0.0,
                   sy: Optional[np.ndarray] = None) -> np.ndarray:
    """Discrete energy of (n,) or (n, k) arrays, right boundary value included."""
    g = op.grid
    if sy is None:
        sy = op.energy_apply(y)
    e = np.sum(y * sy, axis=0) + np.sum(
        (g.mass if p.ndim == 1 else g.mass[:, None]) * p * p, axis=0)
    right = np.asarray(right, dtype=float)
    if np.any(right):
        ef = g.eta_faces[-1] / g.h
        e = e + ef * ((right - y[-1]) ** 2 - y[-1] ** 2)
    return 0.5 * e


def _trace_arrays(grid: Grid, y: np.ndarray, right=0.0):
    """One-sided second-order y_x(1): (3 y(1) - 4 y_n + y_{n-1}) / (2h)."""
    return (3.0 * np.asarray(right) - 4.0 * y[-1] + y[-2]) / (2.0 * grid.h)


def time_grid(T: float, dt: float) -> tuple[int, float]:
    """Number of steps and the step actually used, so that m * dt == T."""
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    m = max(1, int(math.ceil(T / dt - 1e-9)))
    return m, T / m


def propagate(op: DiscreteOperator, y0: np.ndarray, p0: np.ndarray, dt: float, m: int,
              f: Optional[np.ndarray] = None, keep_states: bool = False,
              keep_every: int = 0) -> dict:
    """Run ``m`` midpoint steps on raw arrays; the batch axis is axis 1.

    ``f`` holds boundary values at the m+1 time nodes (shape (m+1,) or
    (m+1, k)).  Returns energies, traces, final arrays and optional states.
    """
    stepper = MidpointStepper(op, dt)
    y, p = np.array(y0, dtype=float), np.array(p0, dtype=float)
    batch = y.shape[1:]
    if f is None:
        f = np.zeros((m + 1,) + batch)
    else:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != m + 1:
            raise ValueError(f"boundary series has {f.shape[0]} samples, expected {m + 1}")
        f = np.broadcast_to(f.reshape(f.shape + (1,) * (len(batch) + 1 - f.ndim)),
                            (m + 1,) + batch)
    energy = np.empty((m + 1,) + batch)
    trace = np.empty((m + 1,) + batch)
    edge = np.empty((m + 1,) + batch)
    edge[0] = y[-1]
    sy = op.energy_apply(y)
    energy[0] = _energy_arrays(op, y, p, f[0], sy)
    trace[0] = _trace_arrays(op.grid, y, f[0])
    store = keep_states or keep_every > 0
    every = 1 if keep_states else keep_every
    snaps_t, snaps_y, snaps_p = [], [], []
    if store:
        snaps_t.append(0)
        snaps_y.append(y.copy())
        snaps_p.append(p.copy())
    for k in range(m):
        y, p = stepper.step(y, p, 0.5 * (f[k] + f[k + 1]), sy)
        sy = op.energy_apply(y)
        energy[k + 1] = _energy_arrays(op, y, p, f[k + 1], sy)
        trace[k + 1] = _trace_arrays(op.grid, y, f[k + 1])
        edge[k + 1] = y[-1]
        if store and ((k + 1) % every == 0 or k + 1 == m):
            snaps_t.append(k + 1)
            snaps_y.append(y.copy())
            snaps_p.append(p.copy())
    out = {"energy": energy, "trace": trace, "edge": edge, "y": y, "p": p, "f": f}
    if store:
        out["snap_index"] = np.array(snaps_t)
        out["snap_y"] = np.array(snaps_y)
        out["snap_p"] = np.array(snaps_p)
    return out


@dataclass(eq=False)
class Trajectory:
    """Time-indexed run data on ``t_k = k dt``, k = 0..m."""

    grid: Grid
    dt: float
    t: np.ndarray
    energy: np.ndarray
    boundary_trace: np.ndarray
    boundary: np.ndarray
    final: WaveState
    initial: WaveState
    snap_index: Optional[np.ndarray] = None
    snap_y: Optional[np.ndarray] = None
    snap_yt: Optional[np.ndarray] = None
    drift: float = 0.0
    drift_exceeded: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def steps(self) -> int:
        return self.t.size - 1

    def state_at(self, k: int) -> WaveState:
        """State at time index k (must be a stored snapshot)."""
        if self.snap_index is None:
            raise ValueError("trajectory was run without stored states")
        pos = np.flatnonzero(self.snap_index == k)
        if pos.size == 0:
            raise ValueError(f"time index {k} is not a stored snapshot")
        j = int(pos[0])
        g = self.grid
        return WaveState(GridFunction(g, self.snap_y[j], 0.0, float(self.boundary[k])),
                         GridFunction(g, self.snap_yt[j]), float(self.t[k]))

    def trace_integral(self) -> float:
        """int_0^T y_x(t, 1)^2 dt by the trapezoid rule."""
        return float(trapezoid(self.boundary_trace ** 2, dx=self.dt))


def _relative_drift(energy: np.ndarray) -> np.ndarray:
    e0 = energy[0]
    dev = np.max(np.abs(energy - e0), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(e0 > 0, dev / np.where(e0 > 0, e0, 1.0), np.where(dev > 0, np.inf, 0.0))
    return rel


def _check_pair(y0: GridFunction, y1: GridFunction, op: Optional[DiscreteOperator]):
    if y0.grid is not y1.grid:
        raise GridMismatch("initial displacement and velocity on different grids")
    if op is None:
        op = assemble(y0.grid)
    elif op.grid is not y0.grid:
        raise GridMismatch("initial data not on the operator's grid")
    return op


def _build_trajectory(op, res, dt, m, y0, y1, meta) -> Trajectory:
    g = op.grid
    t = np.arange(m + 1) * dt
    f = np.asarray(res["f"])
    final = WaveState(GridFunction(g, res["y"], 0.0, float(f[-1])), GridFunction(g, res["p"]),
                      float(t[-1]))
    initial = WaveState(GridFunction(g, y0.values, 0.0, float(f[0])), GridFunction(g, y1.values),
                        0.0)
    traj = Trajectory(g, dt, t, res["energy"], res["trace"], f.copy(), final, initial, meta=meta)
    if "snap_index" in res:
        traj.snap_index = res["snap_index"]
        traj.snap_y = res["snap_y"]
        traj.snap_yt = res["snap_p"]
    return traj


def simulate_homogeneous(y0: GridFunction, y1: GridFunction, T: float,
                         dt: Optional[float] = None, *, op: Optional[DiscreteOperator] = None,
                         tol: float = 1e-8, keep_states: bool = False, keep_every: int = 0,
                         strict: bool = False) -> Trajectory:
    """Solve the Dirichlet problem with data (y0, y1) on [0, T].

    ``dt`` defaults to the mesh size h and is shrunk so that it divides T.
    The relative energy drift is stored on the trajectory; it is flagged
    (and raised with ``strict``) when it exceeds ``tol``.
    """
    op = _check_pair(y0, y1, op)
    m, dt = time_grid(T, op.grid.h if dt is None else dt)
    res = propagate(op, y0.values, y1.values, dt, m, keep_states=keep_states,
                    keep_every=keep_every)
    traj = _build_trajectory(op, res, dt, m, y0, y1, {"problem": "homogeneous"})
    traj.drift = float(_relative_drift(traj.energy))
    traj.drift_exceeded = traj.drift > tol
    if traj.drift_exceeded:
        msg = f"relative energy drift {traj.drift:.3e} exceeds {tol:.1e}"
        if strict:
            raise EnergyDriftExceeded(msg, traj)
        log.warning(msg)
    return traj


def simulate_controlled(u0: GridFunction, u1: GridFunction, f, T: float,
                        dt: Optional[float] = None, *, op: Optional[DiscreteOperator] = None,
                        keep_states: bool = False, keep_every: int = 0) -> Trajectory:
    """Solve the problem with u(t, 0) = 0 and u(t, 1) = f(t).

    ``f`` is sampled on the same time grid (m + 1 values).  With ``f == 0``
    the result coincides bit for bit with :func:`simulate_homogeneous`.
    """
    op = _check_pair(u0, u1, op)
    f = np.asarray(f, dtype=float)
    m, dt = time_grid(T, op.grid.h if dt is None else dt)
    res = propagate(op, u0.values, u1.values, dt, m, f=f, keep_states=keep_states,
                    keep_every=keep_every)
    return _build_trajectory(op, res, dt, m, u0, u1, {"problem": "controlled"})


def step_midpoint(state: WaveState, op: DiscreteOperator, dt: float,
                  boundary: tuple[float, float] = (0.0, 0.0)) -> WaveState:
    """One implicit-midpoint step; ``boundary`` is f at (t, t + dt).

    A negative ``dt`` steps backward in time (the rule is symmetric).
    """
    if state.grid is not op.grid:
        raise GridMismatch("state not on the operator's grid")
    y1, p1 = MidpointStepper(op, dt).step(np.asarray(state.y.values),
                                          np.asarray(state.yt.values),
                                          0.5 * (boundary[0] + boundary[1]))
    g = op.grid
    return WaveState(GridFunction(g, y1, 0.0, boundary[1]), GridFunction(g, p1), state.t + dt)


def energy(state: WaveState, coeffs: Optional[CoefficientSet] = None) -> float:
    """E = 1/2 int [ y_t^2/sigma + eta y_x^2 - lambda y^2/(sigma d) ]."""
    g = state.grid
    lam = (coeffs or g.coeffs).lam
    op = assemble(g, lam)
    return float(_energy_arrays(op, np.asarray(state.y.values), np.asarray(state.yt.values),
                                state.y.right))


def boundary_trace_extract(traj: Trajectory) -> tuple[np.ndarray, float]:
    """Series y_x(t_k, 1) and its squared integral over [0, T]."""
    return traj.boundary_trace.copy(), traj.trace_integral()


# ---------------------------------------------------------------------------
# export


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns t, E, y_x(t,1), one row per time node."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "E", "y_x(t,1)"])
        for t, e, tr in zip(traj.t, traj.energy, traj.boundary_trace):
            w.writerow([repr(float(t)), repr(float(e)), repr(float(tr))])


SNAPSHOT_HEADER = struct.Struct("<8sqq")


def write_snapshots(traj: Trajectory, path) -> None:
    """Binary snapshot file, little-endian.

    Header: magic ``b"DWSNAP01"``, int64 n (interior nodes), int64 count.
    Then ``count`` records of float64: t, y_1..y_n, y_t_1..y_t_n.
    """
    if traj.snap_index is None:
        raise ValueError("trajectory has no stored snapshots")
    n = traj.grid.n
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_HEADER.pack(b"DWSNAP01", n, traj.snap_index.size))
        for j, k in enumerate(traj.snap_index):
            rec = np.concatenate([[traj.t[k]], traj.snap_y[j], traj.snap_yt[j]])
            fh.write(rec.astype("<f8").tobytes())


def read_snapshots(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic, n, count = SNAPSHOT_HEADER.unpack(fh.read(SNAPSHOT_HEADER.size))
        if magic != b"DWSNAP01":
            raise ValueError("not a snapshot file")
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(count, 2 * n + 1)
    return data[:, 0], data[:, 1:n + 1], data[:, n + 1:]


# ---------------------------------------------------------------------------
# behaviour near the degenerate endpoint


def _loglog_slope(x: np.ndarray, v: np.ndarray) -> float:
    mask = v > 0
    if mask.sum() < 2:
        return math.inf if not np.any(v) else math.nan
    return float(np.polyfit(np.log(x[mask]), np.log(v[mask]), 1)[0])


def boundary_diagnostics(traj: Trajectory, coeffs: Optional[CoefficientSet] = None,
                         indices: Optional[Sequence[int]] = None, nodes: int = 8) -> dict:
    """Check that the boundary quantities near x = 0 decay.

    For each stored snapshot evaluates (x/a) y^2, (x^2/(a d)) y^2,
    x^2 y_x^2 and x y_x^2 at the first ``nodes`` grid points and fits a
    log-log slope; a positive slope means decay toward 0.  ``x y_x^2`` is
    only expected to decay when K_a <= 1 or x b/a is bounded.
    """
    g = traj.grid
    coeffs = coeffs or g.coeffs
    if traj.snap_index is None:
        raise ValueError("trajectory has no stored snapshots")
    r = degeneracy_report(coeffs)
    x = g.nodes[:nodes]
    a = coeffs.a.value_at(x)
    d = coeffs.d.value_at(x)
    items = {
        "x/a y^2": (lambda y, yx: x / a * y * y, True),
        "x^2/(ad) y^2": (lambda y, yx: x * x / (a * d) * y * y, True),
        "x^2 y_x^2": (lambda y, yx: x * x * yx * yx, True),
        "x y_x^2": (lambda y, yx: x * yx * yx, r.K_a <= 1.0 or r.M_inf is not None),
    }
    picks = traj.snap_index if indices is None else indices
    out = {"nodes": x.tolist(), "snapshots": []}
    for k in picks:
        st = traj.state_at(int(k))
        full = st.y.full()
        yx = (full[2:nodes + 2] - full[:nodes]) / (2.0 * g.h)
        y = full[1:nodes + 1]
        entry = {"t": st.t, "items": {}}
        for name, (fn, applicable) in items.items():
            v = fn(y, yx)
            slope = _loglog_slope(x, v)
            decays = bool(not np.any(v)) or (slope > 0 and v[0] <= v[-1])
            entry["items"][name] = {"values": v.tolist(), "slope": slope,
                                    "decays": decays, "applicable": bool(applicable)}
        out["snapshots"].append(entry)
    out["all_applicable_decay"] = all(
        it["decays"] for s in out["snapshots"] for it in s["items"].values() if it["applicable"])
    return out
