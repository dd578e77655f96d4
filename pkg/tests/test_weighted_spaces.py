import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from degwave.coefficients import CoefficientProfile as Profile, CoefficientSet
from degwave.errors import ClassRequired, GridMismatch, NegativeSquare
from degwave.weighted_spaces import (Grid, GridFunction, chp_closed_form_bound, estimate_chp,
                                     inner_l2_sigma, norm_eta_seminorm, norm_h1_lambda,
                                     norm_h1_sigma)

from conftest import NO_DRIFT, chp_of, power_set, unit_set


def test_grid_layout():
    g = Grid(9, power_set(0.5, 0.5))
    assert g.h == 0.1
    assert g.nodes[0] > 0 and g.nodes[-1] < 1
    assert np.allclose(g.faces, np.arange(10) * 0.1 + 0.05)
    assert np.all(g.mass > 0) and np.all(g.singular_mass > 0)


def test_inner_zero_and_mismatch():
    g = Grid(10, unit_set())
    assert inner_l2_sigma(g.zeros(), g.zeros()) == 0.0
    with pytest.raises(GridMismatch):
        inner_l2_sigma(g.zeros(), Grid(10, unit_set()).zeros())
    with pytest.raises(GridMismatch):
        GridFunction(g, np.zeros(3))


def test_inner_constant_one_unit_weight():
    xs = np.logspace(-6, 0, 50)
    ones = Profile.tabulated(xs, np.ones_like(xs))
    g = Grid(400, CoefficientSet(ones, NO_DRIFT, ones, 0.0))
    one = GridFunction(g, np.ones(g.n), 1.0, 1.0)
    assert inner_l2_sigma(one, one) == pytest.approx(1.0, abs=1e-12)


def test_inner_sqrt_weight_order():
    # int x^2 / x^{1/2} = 2/5
    errs = []
    for n in (200, 800):
        g = Grid(n, power_set(0.5, 0.5))
        u = g.function(lambda x: x, right=1.0)
        errs.append(abs(inner_l2_sigma(u, u) - 0.4))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] > 4.0 ** 1.4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_inner_bilinear_symmetric(seed, alpha, beta):
    g = Grid(32, power_set(0.7, 0.3))
    r = np.random.default_rng(seed)
    u, v, w = (GridFunction(g, r.standard_normal(g.n)) for _ in range(3))
    assert inner_l2_sigma(u, v) == pytest.approx(inner_l2_sigma(v, u), rel=1e-14, abs=1e-14)
    lhs = inner_l2_sigma(alpha * u + beta * v, w)
    rhs = alpha * inner_l2_sigma(u, w) + beta * inner_l2_sigma(v, w)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_norms_zero_and_lambda_free():
    g = Grid(50, power_set(0.5, 0.5))
    assert norm_h1_lambda(g.zeros()) == 0.0
    u = g.function(lambda x: np.sin(np.pi * x))
    assert norm_h1_lambda(u) == norm_h1_sigma(u)
    assert norm_eta_seminorm(u) == pytest.approx(math.pi / math.sqrt(2), rel=1e-3)


def test_norm_h1_lambda_quadrature_oracle():
    s = power_set(1.0, 1.0, lam=-1.0)
    g = Grid(4000, s)
    u = g.function(lambda x: x * (1 - x))
    # int u^2/x + int (1-2x)^2 + int u^2/x^2
    i1 = integrate.quad(lambda x: x * (1 - x) ** 2, 0, 1)[0]
    i2 = integrate.quad(lambda x: (1 - 2 * x) ** 2, 0, 1)[0]
    i3 = integrate.quad(lambda x: (1 - x) ** 2, 0, 1)[0]
    assert norm_h1_lambda(u) == pytest.approx(math.sqrt(i1 + i2 + i3), abs=1e-4)


def test_norm_negative_square(sqrt_chp):
    s = power_set(0.5, 0.5, lam=3.0 / sqrt_chp)
    g = Grid(200, s)
    # the ground state of the Hardy pencil makes the form negative
    from scipy.linalg import eigh_tridiagonal
    sc = 1.0 / np.sqrt(g.singular_mass)
    diag, off = g.stiffness_bands
    _, vec = eigh_tridiagonal(diag * sc * sc, off * sc[:-1] * sc[1:], select="i",
                              select_range=(0, 0))
    u = GridFunction(g, vec[:, 0] * sc)
    with pytest.raises(NegativeSquare):
        norm_h1_lambda(u)


def test_chp_unit_case():
    c = estimate_chp(Grid(4096, unit_set()))
    assert c == pytest.approx(1 / math.pi ** 2, rel=1e-2)


def test_chp_tabulated_unit():
    xs = np.logspace(-6, 0, 40)
    ones = Profile.tabulated(xs, np.ones_like(xs))
    c = estimate_chp(Grid(2048, CoefficientSet(ones, NO_DRIFT, ones, 0.0)))
    assert c * math.pi ** 2 == pytest.approx(1.0, rel=1e-2)


def test_chp_hardy_pencil_inequality(rng):
    s = power_set(0.8, 0.6)
    g = Grid(300, s)
    c = estimate_chp(g)
    for _ in range(50):
        u = rng.standard_normal(g.n)
        lhs = float(np.dot(g.singular_mass, u * u))
        rhs = float(u @ g.stiffness_apply(u))
        assert lhs <= c * rhs * (1 + 1e-10)


@pytest.mark.parametrize("ka, kd", [(0.5, 0.5), (1.0, 0.5), (0.3, 0.8)])
def test_chp_below_closed_form_bound(ka, kd):
    s = power_set(ka, kd)
    assert chp_of(ka, kd, 2048) <= chp_closed_form_bound(s) + 1e-9


def test_closed_form_bound_examples():
    assert chp_closed_form_bound(power_set(0.5, 0.5)) == 4.0
    s = CoefficientSet(Profile.power(1.0), Profile.power(1.0), Profile.power(1.0), 0.0)
    assert chp_closed_form_bound(s) == pytest.approx(4 * math.e, rel=1e-12)
    assert chp_closed_form_bound(power_set(0.5, 0.5, sa=2.0, sd=2.0)) == 1.0
    with pytest.raises(ClassRequired):
        chp_closed_form_bound(unit_set())


def test_norm_equivalence_ratios_stable(sqrt_chp):
    ratios = {}
    for n in (100, 200):
        s = power_set(0.5, 0.5, lam=0.5 / sqrt_chp)
        g = Grid(n, s)
        r = np.random.default_rng(7)
        vals = []
        for _ in range(100):
            c = r.standard_normal(8) / np.arange(1, 9)
            u = g.function(lambda x: np.sin(np.pi * np.outer(x, np.arange(1, 9))) @ c)
            vals.append(norm_h1_lambda(u) / norm_eta_seminorm(u))
        ratios[n] = (min(vals), max(vals))
    for lo, hi in ratios.values():
        assert 0 < lo <= hi < math.inf
    assert ratios[200][0] == pytest.approx(ratios[100][0], rel=0.05)
    assert ratios[200][1] == pytest.approx(ratios[100][1], rel=0.05)
