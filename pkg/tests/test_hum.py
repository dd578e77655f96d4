import math
import warnings

import numpy as np
import pytest

from degwave.errors import CoercivityWarning, NoConvergence
from degwave.evolution import simulate_homogeneous
from degwave.hum import (FinalData, _adjoint_edges, _midpoint, lambda_form, nodal_trace,
                         rhs_functional, solve_backward, solve_hum, verify_null_control,
                         write_control_csv)
from degwave.observability import constants_for, smooth_random_data
from degwave.operator import assemble
from degwave.weighted_spaces import Grid, GridFunction, inner_l2_sigma

from conftest import power_set, unit_set


def _random_final(g, rng, k=1):
    v0, v1 = smooth_random_data(g, k, rng)
    return [FinalData.from_arrays(g, v0[:, j], v1[:, j]) for j in range(k)]


@pytest.fixture(scope="module")
def sqrt_case():
    from conftest import chp_of

    chp = chp_of(0.5, 0.5)
    s = power_set(0.5, 0.5, lam=0.1 / chp)
    c = constants_for(s, chp)
    return s, c


def test_backward_zero():
    g = Grid(30, unit_set())
    traj = solve_backward(FinalData(g.zeros(), g.zeros()), 1.0)
    assert not np.any(traj.boundary_trace) and not np.any(traj.energy)


def test_backward_reflection_bitwise(rng):
    g = Grid(60, power_set(0.5, 0.5))
    (V,) = _random_final(g, rng)
    back = solve_backward(V, 1.3)
    fwd = simulate_homogeneous(V.v0, -V.v1, 1.3)
    assert np.array_equal(back.boundary_trace[::-1], fwd.boundary_trace)
    assert np.array_equal(back.energy[::-1], fwd.energy)
    assert np.array_equal(back.initial.y.values, fwd.final.y.values)
    assert np.array_equal(back.initial.yt.values, -fwd.final.yt.values)
    assert np.ptp(back.energy) <= 1e-11 * back.energy[0]


def test_lambda_form_zero_and_symmetry(rng):
    g = Grid(50, power_set(0.5, 0.5))
    V, W = _random_final(g, rng, 2)
    zero = FinalData(g.zeros(), g.zeros())
    assert lambda_form(V, zero, 2.0) == 0.0
    a, b = lambda_form(V, W, 2.0), lambda_form(W, V, 2.0)
    assert abs(a - b) <= 1e-12 * max(abs(a), lambda_form(V, V, 2.0))


def test_rhs_functional_zero_linear_manufactured(rng):
    g = Grid(50, power_set(0.5, 0.5))
    (W,) = _random_final(g, rng)
    assert rhs_functional(W, g.zeros(), g.zeros(), 1.5) == 0.0
    u0 = GridFunction(g, np.sin(np.pi * g.nodes))
    u1 = GridFunction(g, g.nodes * (1 - g.nodes))
    W2 = FinalData(2.5 * W.v0, 2.5 * W.v1)
    assert rhs_functional(W2, u0, u1, 1.5) == pytest.approx(
        2.5 * rhs_functional(W, u0, u1, 1.5), rel=1e-12)
    start = solve_backward(W, 1.5).initial
    val = rhs_functional(W, start.yt, g.zeros(), 1.5)
    assert val == pytest.approx(inner_l2_sigma(start.yt, start.yt), rel=1e-9)


def test_coercivity_floor(sqrt_case):
    s, c = sqrt_case
    g = Grid(100, s)
    op = assemble(g)
    T = 2 * c.T0
    from degwave.evolution import time_grid

    m, dt = time_grid(T, g.h)
    v0, v1 = smooth_random_data(g, 100, np.random.default_rng(11))
    edges, _ = _adjoint_edges(op, v0, v1, dt, m)
    obs = _midpoint(nodal_trace(op, edges))
    lam_vv = g.eta_faces[-1] * dt * np.sum(obs * obs, axis=0)
    energy = 0.5 * (np.sum(v0 * op.energy_apply(v0), 0) + np.sum(g.mass[:, None] * v1 * v1, 0))
    floor = c.slope * T - c.offset
    assert np.min(lam_vv / energy) >= (1 - 0.02) * floor
    # continuity: bounded by the direct-inequality constant
    assert np.max(lam_vv / energy) <= (1 + 0.02) * (c.C1 + c.C2 * T)


def test_hum_zero_data():
    g = Grid(40, unit_set())
    res = solve_hum(g.zeros(), g.zeros(), 3.0)
    assert res.iterations == 0 and res.converged and not np.any(res.f)
    assert res.final_y_norm == 0.0 and res.final_yt_norm == 0.0


def test_hum_string_small():
    g = Grid(50, unit_set())
    res = solve_hum(g.function(lambda x: np.sin(np.pi * x)), g.zeros(), 3.0, max_iter=60,
                    raise_on_failure=False)
    assert max(res.relative_final_norms) <= 1e-4
    assert res.transposition_residual <= 1e-10
    j = res.functional
    assert np.all(np.diff(j) <= 1e-12 * np.max(np.abs(j)))


def test_hum_optimality_probes(sqrt_case, rng):
    s, c = sqrt_case
    g = Grid(60, s)
    op = assemble(g)
    T = 1.5 * c.T0
    u0, u1 = g.function(lambda x: np.sin(np.pi * x)), g.function(lambda x: x * (1 - x))
    res = solve_hum(u0, u1, T, op=op)
    assert res.converged
    Vbar = res.final_data
    probes = _random_final(g, rng, 20)
    scale = max(abs(rhs_functional(W, u0, u1, T, op=op)) for W in probes)
    for W in probes:
        d = lambda_form(Vbar, W, T, op=op) - rhs_functional(W, u0, u1, T, op=op)
        assert abs(d) <= 1e-6 * scale


def test_hum_warns_below_t0(sqrt_case):
    s, c = sqrt_case
    g = Grid(40, s)
    with pytest.warns(CoercivityWarning):
        solve_hum(g.function(lambda x: np.sin(np.pi * x)), g.zeros(), 0.5 * c.T0, T0=c.T0,
                  max_iter=5, raise_on_failure=False)


def test_hum_no_convergence_carries_result():
    g = Grid(60, unit_set())
    with pytest.raises(NoConvergence) as exc:
        solve_hum(g.function(lambda x: np.sin(np.pi * x)), g.zeros(), 3.0, max_iter=2)
    assert exc.value.result is not None and exc.value.result.iterations == 2


def test_verify_zero_control_keeps_free_norms():
    g = Grid(80, power_set(0.5, 0.5))
    op = assemble(g)
    u0 = g.function(lambda x: np.sin(np.pi * x))
    res = solve_hum(u0, g.zeros(), 1.0, max_iter=1, verify=False, raise_on_failure=False)
    res.f = np.zeros_like(res.f)
    y_norm, yt_norm = verify_null_control(res, u0, g.zeros(), 1.0, op=op)
    free = simulate_homogeneous(u0, g.zeros(), 1.0)
    assert y_norm == pytest.approx(math.sqrt(inner_l2_sigma(free.final.y, free.final.y)),
                                   rel=1e-12)
    assert yt_norm > 0 and res.transposition_residual < 1e-10


def test_control_csv(tmp_path):
    g = Grid(30, unit_set())
    res = solve_hum(g.function(lambda x: np.sin(np.pi * x)), g.zeros(), 3.0, max_iter=3,
                    raise_on_failure=False)
    write_control_csv(res, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,f" and len(lines) == res.t.size + 1
    assert float(lines[5].split(",")[1]) == res.f[4]
