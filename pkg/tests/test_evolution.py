import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from degwave.coefficients import CoefficientProfile as Profile, CoefficientSet
from degwave.errors import EnergyDriftExceeded
from degwave.evolution import (WaveState, boundary_diagnostics, boundary_trace_extract, energy,
                               read_snapshots, simulate_controlled, simulate_homogeneous,
                               step_midpoint, write_snapshots, write_trajectory_csv)
from degwave.observability import smooth_random_data
from degwave.operator import assemble
from degwave.weighted_spaces import Grid, GridFunction

from conftest import chp_of, power_set, unit_set


def _pair(g, y0, y1=None):
    return GridFunction(g, y0), GridFunction(g, np.zeros(g.n) if y1 is None else y1)


def test_energy_examples():
    g = Grid(200, unit_set())
    zero = WaveState(g.zeros(), g.zeros(), 0.0)
    assert energy(zero) == 0.0
    ones = WaveState(g.zeros(), GridFunction(g, np.ones(g.n)), 0.0)
    assert energy(ones) == pytest.approx(0.5, abs=1e-2)


def test_energy_quadrature_oracle():
    s = power_set(0.5, 0.5, lam=-1.0)
    g = Grid(4000, s)
    st_ = WaveState(g.function(lambda x: x * (1 - x)), g.zeros(), 0.0)
    i_grad = integrate.quad(lambda x: (1 - 2 * x) ** 2, 0, 1)[0]
    i_sing = integrate.quad(lambda x: (x * (1 - x)) ** 2 / x, 0, 1)[0]
    assert energy(st_) == pytest.approx(0.5 * (i_grad + i_sing), abs=1e-4)


def test_zero_data_zero_trajectory():
    g = Grid(40, power_set(0.5, 0.5))
    traj = simulate_homogeneous(g.zeros(), g.zeros(), 1.0)
    assert np.all(traj.energy == 0) and np.all(traj.boundary_trace == 0)
    assert traj.drift == 0.0
    series, integral = boundary_trace_extract(traj)
    assert integral == 0.0 and not np.any(series)


def test_step_zero_state():
    g = Grid(20, unit_set())
    st_ = step_midpoint(WaveState(g.zeros(), g.zeros(), 0.0), assemble(g), 0.05)
    assert not np.any(st_.y.values) and st_.t == 0.05


def test_string_recurrence_and_trace():
    g = Grid(200, unit_set())
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes))
    traj = simulate_homogeneous(y0, y1, 2.0)
    assert traj.drift < 1e-11
    assert np.max(np.abs(traj.final.y.values - y0.values)) < 5e-4
    assert np.max(np.abs(traj.boundary_trace + np.pi * np.cos(np.pi * traj.t))) < 5e-3
    assert traj.trace_integral() == pytest.approx(math.pi ** 2, rel=1e-3)


def test_per_step_conservation(sqrt_chp):
    g = Grid(100, power_set(0.5, 0.5, lam=-0.5 / sqrt_chp))
    rng = np.random.default_rng(3)
    y0, y1 = smooth_random_data(g, 1, rng)
    traj = simulate_homogeneous(*_pair(g, y0[:, 0], y1[:, 0]), 3.0)
    assert np.max(np.abs(np.diff(traj.energy))) <= 1e-11 * traj.energy[0]


def test_strict_drift_raises():
    g = Grid(30, unit_set())
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes))
    with pytest.raises(EnergyDriftExceeded) as exc:
        simulate_homogeneous(y0, y1, 1.0, tol=1e-300, strict=True)
    assert exc.value.trajectory is not None


def test_step_forward_backward():
    g = Grid(80, power_set(0.5, 0.5))
    op = assemble(g)
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes), np.cos(3 * g.nodes) * g.nodes * (1 - g.nodes))
    st_ = WaveState(y0, y1, 0.0)
    back = step_midpoint(step_midpoint(st_, op, 0.01), op, -0.01)
    assert np.max(np.abs(back.y.values - y0.values)) < 1e-12
    assert np.max(np.abs(back.yt.values - y1.values)) < 1e-10


def test_trace_self_convergence():
    vals = []
    for n in (200, 400):
        g = Grid(n, power_set(0.5, 0.5))
        y0, y1 = _pair(g, np.sin(np.pi * g.nodes) * g.nodes)
        vals.append(simulate_homogeneous(y0, y1, 3.0).trace_integral())
    assert vals[1] == pytest.approx(vals[0], rel=1e-2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_linearity_and_superposition(seed, alpha):
    g = Grid(40, power_set(0.7, 0.2))
    r = np.random.default_rng(seed)
    a0, a1 = smooth_random_data(g, 2, r)
    t1 = simulate_homogeneous(*_pair(g, a0[:, 0], a1[:, 0]), 0.7)
    t2 = simulate_homogeneous(*_pair(g, a0[:, 1], a1[:, 1]), 0.7)
    ts = simulate_homogeneous(*_pair(g, a0[:, 0] + a0[:, 1], a1[:, 0] + a1[:, 1]), 0.7)
    tsc = simulate_homogeneous(*_pair(g, alpha * a0[:, 0], alpha * a1[:, 0]), 0.7)
    scale = np.max(np.abs(t1.final.y.values)) + np.max(np.abs(t2.final.y.values))
    assert np.allclose(ts.final.y.values, t1.final.y.values + t2.final.y.values,
                       atol=1e-12 * scale)
    assert np.allclose(tsc.final.y.values, alpha * t1.final.y.values,
                       atol=1e-12 * abs(alpha) * scale)


def test_controlled_with_zero_f_is_homogeneous():
    g = Grid(50, power_set(0.5, 0.5))
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes))
    h = simulate_homogeneous(y0, y1, 1.0)
    c = simulate_controlled(y0, y1, np.zeros(h.t.size), 1.0)
    assert np.array_equal(h.final.y.values, c.final.y.values)
    assert np.array_equal(h.boundary_trace, c.boundary_trace)
    z = simulate_controlled(g.zeros(), g.zeros(), np.zeros(h.t.size), 1.0)
    assert not np.any(z.final.y.values)


def test_controlled_boundary_energy_balance():
    # dE/dt = eta(1) f_t y_x(1): check the integrated balance
    g = Grid(400, unit_set())
    T = 1.0
    t = np.linspace(0, T, g.n + 2)
    f = np.sin(2 * np.pi * t) * t
    traj = simulate_controlled(g.zeros(), g.zeros(), f, T)
    work = integrate.trapezoid(np.gradient(f, t) * traj.boundary_trace, t)
    assert traj.energy[-1] == pytest.approx(work, rel=2e-2)


@pytest.mark.parametrize("lam_frac", [-0.5, 0.0, 0.5])
def test_energy_never_negative(lam_frac):
    chp = chp_of(0.5, 0.5)
    g = Grid(60, power_set(0.5, 0.5, lam=lam_frac / chp))
    r = np.random.default_rng(0)
    y0, y1 = smooth_random_data(g, 1, r)
    assert simulate_homogeneous(*_pair(g, y0[:, 0], y1[:, 0]), 1.0).energy.min() > 0


def test_csv_and_snapshot_roundtrip(tmp_path):
    g = Grid(20, power_set(0.5, 0.5))
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes))
    traj = simulate_homogeneous(y0, y1, 0.5, keep_every=3)
    write_trajectory_csv(traj, tmp_path / "t.csv")
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "E", "y_x(t,1)"] and len(rows) == traj.t.size + 1
    assert float(rows[-1][1]) == traj.energy[-1]
    write_snapshots(traj, tmp_path / "s.bin")
    t, y, yt = read_snapshots(tmp_path / "s.bin")
    assert np.array_equal(t, traj.t[traj.snap_index])
    assert np.array_equal(y, traj.snap_y) and np.array_equal(yt, traj.snap_yt)
    assert traj.snap_index[-1] == traj.steps


def test_boundary_diagnostics():
    g = Grid(400, power_set(0.5, 0.5))
    zero = simulate_homogeneous(g.zeros(), g.zeros(), 0.2, keep_every=5)
    assert boundary_diagnostics(zero)["all_applicable_decay"]
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes))
    traj = simulate_homogeneous(y0, y1, 0.2, keep_every=10)
    rep = boundary_diagnostics(traj)
    assert rep["all_applicable_decay"]
    assert rep["snapshots"][0]["items"]["x/a y^2"]["slope"] >= 2.0


def test_boundary_diagnostics_strong_degeneracy():
    s = CoefficientSet(Profile.power(1.5), Profile.power(0.6), Profile.power(0.2), 0.0)
    g = Grid(400, s)
    y0, y1 = _pair(g, np.sin(np.pi * g.nodes) * g.nodes)
    rep = boundary_diagnostics(simulate_homogeneous(y0, y1, 0.2, keep_every=10))
    for snap in rep["snapshots"]:
        assert snap["items"]["x y_x^2"]["applicable"]
        assert snap["items"]["x y_x^2"]["decays"]
