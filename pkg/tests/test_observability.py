import dataclasses
import math

import numpy as np
import pytest

from degwave.coefficients import CoefficientProfile as Profile, CoefficientSet, degeneracy_report
from degwave.errors import BudgetZero, HypothesisViolated, TimeTooShort
from degwave.evolution import simulate_homogeneous
from degwave.observability import (check_direct_inequality, check_inverse_inequality,
                                   constants_for, direct_constants, estimate_CT,
                                   inequality_suite, inverse_constants, packet_data,
                                   remainder_note, run_batch)
from degwave.operator import assemble
from degwave.weighted_spaces import Grid, GridFunction

from conftest import chp_of, power_set, unit_set


def test_direct_constants_examples(sqrt_chp):
    r = degeneracy_report(power_set(0.5, 0.5))
    assert direct_constants(r, sqrt_chp, 0.0) == (2.0, 2.5)
    assert direct_constants(r, 10 * sqrt_chp, 0.0) == (2.0, 2.5)
    r2 = degeneracy_report(power_set(0.5, 0.5, sa=2.0))
    assert direct_constants(r2, sqrt_chp, 0.0)[0] == 2.0
    r3 = degeneracy_report(power_set(0.5, 0.5, sa=0.5))
    assert direct_constants(r3, sqrt_chp, 0.0)[0] == 4.0


def test_direct_constants_require_regular_domain():
    with pytest.raises(HypothesisViolated):
        direct_constants(degeneracy_report(power_set(1.5, 0.5)), 1.0, 0.0)


def test_inverse_constants_sqrt_example(sqrt_chp):
    c = constants_for(power_set(0.5, 0.5), sqrt_chp)
    assert c.C5 == 4.0 + 0.5 * max(1.0, sqrt_chp)
    assert (c.C5, c.C6, c.T0) == (4.5, 0.75, 6.0)
    assert c.epsilon is None and not c.negative_lambda


def test_inverse_constants_negative_branch(sqrt_chp):
    c = constants_for(power_set(0.5, 0.5, lam=-0.5 / sqrt_chp), sqrt_chp)
    # C4 = 2 (1 - 1/4) - 0.5 (1 + 3/4 + 1/2) = 0.375
    assert c.C4 == pytest.approx(0.375, rel=1e-14)
    assert c.T0 == pytest.approx(12.0, rel=1e-14)
    assert c.negative_lambda


def test_epsilon_positive_lambda(sqrt_chp):
    c = constants_for(power_set(0.5, 0.5, lam=0.3 / sqrt_chp), sqrt_chp)
    assert c.epsilon == pytest.approx(0.7, rel=1e-12)
    assert c.lam == pytest.approx((1 - c.epsilon) / sqrt_chp, rel=1e-12)


def test_boundary_of_positive_case_is_admissible():
    # K_a + 2 K_d = 2 - 2M exactly
    s = power_set(0.5, 0.75)
    c = constants_for(s, chp_of(0.5, 0.75, 2048))
    assert c.which_case == 1


def test_large_drift_makes_c6_nonpositive():
    r = dataclasses.replace(degeneracy_report(unit_set()), K_a=0.4, K_d=0.0, M=0.8 + 1e-9,
                            M_inf=0.8 + 1e-9)
    with pytest.raises(HypothesisViolated):
        inverse_constants(r, 0.1, 0.0)


def test_inverse_constants_deterministic(sqrt_chp):
    s = power_set(0.5, 0.5, lam=-0.3 / sqrt_chp)
    assert constants_for(s, sqrt_chp) == constants_for(s, sqrt_chp)


def test_remainder_note():
    # admissible lambda >= 0 cases satisfy K_a/2 + K_d <= 1 - M, so no note
    s = power_set(0.5, 0.75)
    chp = chp_of(0.5, 0.75, 2048)
    c = constants_for(s.with_lambda(0.2 / chp), chp)
    assert remainder_note(degeneracy_report(s), c) is None
    forced = dataclasses.replace(c, M_used=0.3)
    assert "< 0" in remainder_note(degeneracy_report(s), forced)


def test_zero_data_margins(sqrt_chp):
    g = Grid(40, power_set(0.5, 0.5))
    c = constants_for(g.coeffs, sqrt_chp)
    traj = simulate_homogeneous(g.zeros(), g.zeros(), 7.0)
    assert check_direct_inequality(traj, c, 0.0, 7.0) == 0.0
    assert check_inverse_inequality(traj, c, 0.0, 7.0) == 0.0
    with pytest.raises(TimeTooShort):
        check_inverse_inequality(traj, c, 0.0, c.T0)


def test_inverse_just_above_t0(sqrt_chp):
    g = Grid(100, power_set(0.5, 0.5))
    c = constants_for(g.coeffs, sqrt_chp)
    T = c.T0 * (1 + 1e-9)
    traj = simulate_homogeneous(g.function(lambda x: np.sin(np.pi * x)), g.zeros(), T)
    margin = check_inverse_inequality(traj, c, float(traj.energy[0]), T)
    assert margin == pytest.approx(traj.grid.eta1 * traj.trace_integral(), rel=1e-6)


def test_direct_inequality_string():
    g = Grid(200, unit_set())
    traj = simulate_homogeneous(g.function(lambda x: np.sin(np.pi * x)), g.zeros(), 2.0)
    consts = direct_constants(degeneracy_report(unit_set()), 1 / math.pi ** 2, 0.0)
    assert check_direct_inequality(traj, consts, float(traj.energy[0]), 2.0) > 0


@pytest.mark.parametrize("lam_frac", [-0.5, 0.0, 0.5])
def test_random_suite_small(lam_frac, sqrt_chp):
    s = power_set(0.5, 0.5, lam=lam_frac / sqrt_chp)
    c = constants_for(s, sqrt_chp)
    out = inequality_suite(assemble(Grid(100, s)), c, 2 * c.T0, samples=12, seed=5)
    assert out["min_direct"] >= -0.02
    assert out["min_inverse"] >= -0.02
    assert out["max_drift"] <= 1e-10


def test_estimate_ct_budget_zero():
    with pytest.raises(BudgetZero):
        estimate_CT(assemble(Grid(20, unit_set())), 1.0, budget=0)


def test_estimate_ct_is_attained_ratio():
    op = assemble(Grid(100, unit_set()))
    est = estimate_CT(op, 2.5, budget=64, refine=8)
    res = run_batch(op, est.worst_y0[:, None], est.worst_y1[:, None], 2.5)
    ratio = res["trace_integral"][0] / res["E0"][0]
    assert ratio == pytest.approx(est.CT_hat, rel=1e-8)
    assert est.CT_hat <= est.sample_min
    assert est.cost == pytest.approx(1 / est.CT_hat)


def test_ratio_scale_invariant():
    op = assemble(Grid(80, power_set(0.5, 0.5)))
    y0, y1 = packet_data(op.grid, 0.4, 0.05, -1)
    data0 = np.column_stack([y0, -3.7 * y0, 1e-3 * y0])
    data1 = np.column_stack([y1, -3.7 * y1, 1e-3 * y1])
    res = run_batch(op, data0, data1, 1.5)
    r = res["trace_integral"] / res["E0"]
    assert np.allclose(r, r[0], rtol=1e-12, atol=0)


def test_string_below_critical_time_unobservable():
    est = estimate_CT(assemble(Grid(200, unit_set())), 1.0)
    assert est.CT_hat < 0.05


def test_string_above_critical_time_respects_bound():
    s = unit_set()
    c = constants_for(s, 1 / math.pi ** 2)
    est = estimate_CT(assemble(Grid(200, s)), 3.0, budget=128, refine=16)
    assert est.CT_hat >= c.lower_bound(3.0)
    # sharp value is 4 for T in [2, 4]
    assert est.CT_hat == pytest.approx(4.0, rel=0.05)


def test_estimate_ct_monotone_in_t():
    op = assemble(Grid(120, unit_set()))
    vals = [estimate_CT(op, T, budget=64, refine=16).CT_hat for T in (1.5, 2.5, 3.5)]
    assert vals[1] >= 0.95 * vals[0] and vals[2] >= 0.95 * vals[1]
