"""Degenerate/singular wave equation with drift on (0, 1).

    u_tt - a(x) u_xx - lambda u / d(x) - b(x) u_x = 0,   u(t, 0) = 0, u(t, 1) = f(t)

Weighted function spaces, an energy-conserving discretization, explicit
observability constants and boundary null control by HUM.
"""
from .coefficients import (CoefficientProfile, CoefficientSet, DegeneracyClass,
                           DegeneracyReport, check_hypotheses, classify_degeneracy,
                           degeneracy_report, drift_constants, eta, sigma)
from .errors import *  # noqa: F401,F403
from .evolution import (Trajectory, WaveState, boundary_diagnostics, boundary_trace_extract,
                        energy, simulate_controlled, simulate_homogeneous, step_midpoint)
from .hum import (ControlResult, FinalData, lambda_form, rhs_functional, solve_backward,
                  solve_hum, verify_null_control)
from .observability import (ObservabilityConstants, check_direct_inequality,
                            check_inverse_inequality, direct_constants, estimate_CT,
                            inverse_constants)
from .operator import DiscreteOperator, assemble, green_identity_defect, solve_resolvent
from .weighted_spaces import (Grid, GridFunction, chp_closed_form_bound, chp_extrapolated,
                              estimate_chp, inner_l2_sigma, norm_eta_seminorm, norm_h1_lambda,
                              norm_h1_sigma)

__version__ = "0.1.0"
