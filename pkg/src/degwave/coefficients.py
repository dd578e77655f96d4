"""Coefficient profiles a, b, d, the Feller weight and degeneracy bookkeeping.

The equation handled throughout the package is

    u_tt - a(x) u_xx - lambda/d(x) u - b(x) u_x = 0   on (0, 1),

with a and d allowed to vanish at x = 0.  ``eta`` and ``sigma = a / eta``
turn the non-divergence operator ``a u'' + b u'`` into ``sigma (eta u')'``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import NonDegenerate, NonIntegrableDrift, NotPositive

# sample used for sup-type estimates on tabulated profiles
_N_LOG_SAMPLE = 2048
_X_MIN_SAMPLE = 1e-12
_LEQ_SLACK = 1e-12


class DegeneracyClass(str, enum.Enum):
    WD = "WD"
    SD = "SD"
    NONE = "None"


def degeneracy_class(k: float) -> DegeneracyClass:
    if 0.0 < k < 1.0:
        return DegeneracyClass.WD
    if 1.0 <= k < 2.0:
        return DegeneracyClass.SD
    return DegeneracyClass.NONE


@dataclass(frozen=True, eq=False)
class CoefficientProfile:
    """A coefficient on [0, 1].

    ``kind == "power"`` is ``scale * x**exponent``.  ``kind == "tabulated"``
    holds samples ``(xs, gs)`` on (0, 1]; positive tables are interpolated
    linearly in log-log coordinates (exact for pure powers, continued as a
    power law below the first abscissa), signed tables linearly in x.
    """

    kind: str
    exponent: float = 0.0
    scale: float = 1.0
    xs: Optional[np.ndarray] = field(default=None, repr=False)
    gs: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def power(cls, exponent: float, scale: float = 1.0) -> "CoefficientProfile":
        if exponent < 0:
            raise ValueError("power-law exponent must be >= 0")
        return cls("power", float(exponent), float(scale))

    @classmethod
    def constant(cls, value: float) -> "CoefficientProfile":
        return cls.power(0.0, value)

    @classmethod
    def tabulated(cls, xs, gs) -> "CoefficientProfile":
        xs = np.asarray(xs, dtype=float)
        gs = np.asarray(gs, dtype=float)
        if xs.ndim != 1 or xs.shape != gs.shape or xs.size < 2:
            raise ValueError("tabulated profile needs two equal 1-D arrays of length >= 2")
        order = np.argsort(xs)
        xs, gs = xs[order], gs[order]
        if xs[0] <= 0 or xs[-1] > 1 + 1e-12:
            raise ValueError("tabulated abscissae must lie in (0, 1]")
        xs.setflags(write=False)
        gs.setflags(write=False)
        return cls("tabulated", xs=xs, gs=gs)

    @classmethod
    def from_csv(cls, path) -> "CoefficientProfile":
        xs, gs = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    x, g = float(row[0]), float(row[1])
                except ValueError:
                    continue  # header line
                xs.append(x)
                gs.append(g)
        return cls.tabulated(xs, gs)

    @property
    def is_power(self) -> bool:
        return self.kind == "power"

    @cached_property
    def _loglog(self) -> bool:
        return bool(np.all(self.gs > 0))

    @cached_property
    def _log_tables(self):
        return np.log(self.xs), np.log(self.gs)

    def _tab_value(self, x: np.ndarray) -> np.ndarray:
        if not self._loglog:
            return np.interp(x, self.xs, self.gs)
        lx, lg = self._log_tables
        out = np.empty_like(x)
        pos = x > 0
        t = np.log(x[pos])
        vals = np.interp(t, lx, lg)
        # power-law continuation outside the table
        lo = t < lx[0]
        s0 = (lg[1] - lg[0]) / (lx[1] - lx[0])
        vals[lo] = lg[0] + s0 * (t[lo] - lx[0])
        hi = t > lx[-1]
        s1 = (lg[-1] - lg[-2]) / (lx[-1] - lx[-2])
        vals[hi] = lg[-1] + s1 * (t[hi] - lx[-1])
        out[pos] = np.exp(vals)
        out[~pos] = 0.0 if s0 > 1e-12 else self.gs[0]
        return out

    def value_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_power:
            if self.exponent == 0.0:
                return self.scale * np.ones_like(x)
            return self.scale * np.power(x, self.exponent)
        return self._tab_value(np.atleast_1d(x)).reshape(x.shape)

    def derivative_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_power:
            if self.exponent == 0.0:
                return np.zeros_like(x)
            return self.scale * self.exponent * np.power(x, self.exponent - 1.0)
        step = 1e-6 * np.maximum(x, 1e-12)
        return (self.value_at(x + step) - self.value_at(x - step)) / (2 * step)

    def log_sample(self) -> np.ndarray:
        lo = self.xs[0] if self.kind == "tabulated" else _X_MIN_SAMPLE
        return np.logspace(np.log10(lo), 0.0, _N_LOG_SAMPLE)

    def __call__(self, x):
        return self.value_at(x)


def _sup_log_derivative(g: CoefficientProfile) -> float:
    if g.is_power:
        return g.exponent
    x = g.log_sample()
    v = g.value_at(x)
    # x g'/g = d log g / d log x, centered differences in log-log coordinates
    return float(np.max(np.abs(np.gradient(np.log(v), np.log(x)))))


def classify_degeneracy(g: CoefficientProfile) -> tuple[float, DegeneracyClass]:
    """Return ``(K_g, class)`` with ``K_g = sup x|g'(x)|/g(x)`` over (0, 1].

    Exact for power laws; for tabulated profiles the sup is estimated on a
    2048-point log-spaced sample and is not a certified bound.
    """
    g0 = float(g.value_at(0.0))
    if g0 != 0.0:
        raise NonDegenerate(f"g(0) = {g0} != 0")
    if np.any(g.value_at(g.log_sample()) <= 0):
        raise NotPositive("g must be strictly positive on (0, 1]")
    k = _sup_log_derivative(g)
    return k, degeneracy_class(k)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    a: CoefficientProfile
    b: CoefficientProfile
    d: CoefficientProfile
    lam: float = 0.0

    def __post_init__(self):
        for name in ("a", "d"):
            g = getattr(self, name)
            if np.any(g.value_at(g.log_sample()) <= 0):
                raise NotPositive(f"{name} must be strictly positive on (0, 1]")

    def with_lambda(self, lam: float) -> "CoefficientSet":
        return CoefficientSet(self.a, self.b, self.d, float(lam))

    @property
    def drift_free(self) -> bool:
        return self.b.is_power and self.b.scale == 0.0

    @property
    def power_pair(self) -> bool:
        return self.a.is_power and self.b.is_power

    def drift_ratio(self, x):
        """b/a at x > 0."""
        return self.b.value_at(x) / self.a.value_at(x)

    @cached_property
    def drift_integrable(self) -> bool:
        try:
            check_drift_integrable(self)
        except NonIntegrableDrift:
            return False
        return True

    @cached_property
    def eta_range(self) -> tuple[float, float]:
        """(min, max) of eta over a dense sample of [0, 1]."""
        x = np.unique(np.concatenate([np.linspace(0.0, 1.0, 4097),
                                      np.logspace(-12, 0, 1024)]))
        e = eta(x, self)
        return float(e.min()), float(e.max())


def _drift_antiderivative_power(s: CoefficientSet, x: np.ndarray) -> np.ndarray:
    """int_{1/2}^x b/a for power-law a and b (closed form)."""
    c = s.b.scale / s.a.scale
    p = s.b.exponent - s.a.exponent
    with np.errstate(divide="ignore"):
        if p == -1.0:
            return c * (np.log(x) - math.log(0.5))
        half = np.power(0.5, p + 1.0)
        return c * (np.power(x, p + 1.0) - half) / (p + 1.0)


def _quad_drift(s: CoefficientSet, lo: float, hi: float) -> float:
    """int_lo^hi b/a with dyadic splitting toward 0."""
    if hi <= lo:
        return 0.0
    cuts = [lo]
    if lo < 0.25:
        k = max(2, int(math.floor(-math.log2(hi))) + 1)
        kmax = 200 if lo == 0.0 else int(math.ceil(-math.log2(lo)))
        inner = [2.0 ** -j for j in range(kmax, k - 1, -1) if lo < 2.0 ** -j < hi]
        cuts.extend(inner)
    cuts.append(hi)
    f = lambda t: float(s.drift_ratio(t))  # noqa: E731
    return sum(integrate.quad(f, u, v, limit=200)[0] for u, v in zip(cuts[:-1], cuts[1:]))


def check_drift_integrable(s: CoefficientSet, cap: float = 1e6) -> float:
    """Probe int_0^1 |b/a| on the nested pieces [2^-k-1, 2^-k].

    Returns the accumulated integral; raises NonIntegrableDrift when it
    exceeds ``cap`` or when the pieces stop decaying.
    """
    if s.drift_free:
        return 0.0
    if s.power_pair:
        p = s.b.exponent - s.a.exponent
        if p <= -1.0:
            raise NonIntegrableDrift(f"b/a ~ x^{p} is not integrable at 0")
        return abs(s.b.scale / s.a.scale) / (p + 1.0)
    f = lambda t: float(abs(s.drift_ratio(t)))  # noqa: E731
    total = integrate.quad(f, 0.5, 1.0, limit=200)[0]
    pieces = []
    for k in range(1, 200):
        piece = integrate.quad(f, 2.0 ** (-k - 1), 2.0 ** -k, limit=100)[0]
        pieces.append(piece)
        total += piece
        if total > cap:
            raise NonIntegrableDrift(f"partial integral of |b/a| exceeds cap {cap:g}")
        if piece < 1e-17 * max(total, 1e-300):
            return total
    tail = np.asarray(pieces[-20:])
    if tail[0] > 0 and np.all(tail[1:] >= 0.999 * tail[:-1]):
        raise NonIntegrableDrift("dyadic pieces of |b/a| do not decay toward 0")
    return total


def eta(x, s: CoefficientSet):
    """Feller weight exp(int_{1/2}^x b/a) at the points ``x`` in [0, 1]."""
    x = np.asarray(x, dtype=float)
    if s.drift_free:
        return np.ones_like(x)
    if not s.drift_integrable:
        raise NonIntegrableDrift("b/a is not integrable on (0, 1)")
    if s.power_pair:
        return np.exp(_drift_antiderivative_power(s, x))
    flat = x.ravel()
    order = np.argsort(flat)
    xs = flat[order]
    prim = np.empty_like(xs)
    # cumulative quadrature outward from the anchor 1/2
    j = int(np.searchsorted(xs, 0.5))
    acc, prev = 0.0, 0.5
    for i in range(j, xs.size):
        acc += _quad_drift(s, prev, xs[i])
        prim[i], prev = acc, xs[i]
    acc, prev = 0.0, 0.5
    for i in range(j - 1, -1, -1):
        acc -= _quad_drift(s, xs[i], prev)
        prim[i], prev = acc, xs[i]
    out = np.empty_like(flat)
    out[order] = np.exp(prim)
    return out.reshape(x.shape)


def sigma(x, s: CoefficientSet):
    """sigma = a / eta."""
    return s.a.value_at(x) / eta(x, s)


def drift_constants(s: CoefficientSet) -> tuple[float, Optional[float]]:
    """Return ``(M, M_inf)`` with M = sup|b| / a(1) and M_inf = sup|x b / a|.

    ``M_inf`` is None when ``x b / a`` is unbounded near 0.
    """
    a1 = float(s.a.value_at(1.0))
    if s.drift_free:
        return 0.0, 0.0
    if s.b.is_power:
        m = abs(s.b.scale) / a1
    else:
        xb = np.unique(np.concatenate([np.linspace(0, 1, 4097), s.b.log_sample()]))
        m = float(np.max(np.abs(s.b.value_at(xb)))) / a1
    if s.power_pair:
        p = 1.0 + s.b.exponent - s.a.exponent
        m_inf = abs(s.b.scale / s.a.scale) if p >= 0 else None
        return m, m_inf
    x = np.logspace(-16, 0, 4096)
    v = np.abs(x * s.drift_ratio(x))
    small = x < 1e-12
    head, rest = v[small], v[~small]
    if head.max() > (1 + 1e-9) * rest.max() and head[0] > head[-1]:
        return m, None
    return m, float(v.max())


@dataclass(frozen=True)
class DegeneracyReport:
    K_a: float
    K_d: float
    class_a: DegeneracyClass
    class_d: DegeneracyClass
    M: float
    M_inf: Optional[float]
    b_over_a_integrable: bool
    a_degenerate: bool
    d_degenerate: bool
    a1: float
    d1: float
    max_d: float
    eta1: float


def degeneracy_report(s: CoefficientSet) -> DegeneracyReport:
    """Collect K_a, K_d, classes, drift constants and boundary values.

    Unlike :func:`classify_degeneracy` this never raises for coefficients that
    stay positive at 0; they get ``K`` from the same sup and class None.
    """
    k_a = _sup_log_derivative(s.a)
    k_d = _sup_log_derivative(s.d)
    m, m_inf = drift_constants(s)
    xd = np.unique(np.concatenate([np.linspace(0, 1, 4097), s.d.log_sample()]))
    return DegeneracyReport(
        K_a=k_a,
        K_d=k_d,
        class_a=degeneracy_class(k_a),
        class_d=degeneracy_class(k_d),
        M=m,
        M_inf=m_inf,
        b_over_a_integrable=s.drift_integrable,
        a_degenerate=float(s.a.value_at(0.0)) == 0.0,
        d_degenerate=float(s.d.value_at(0.0)) == 0.0,
        a1=float(s.a.value_at(1.0)),
        d1=float(s.d.value_at(1.0)),
        max_d=float(np.max(s.d.value_at(xd))),
        eta1=float(eta(1.0, s)) if s.drift_integrable else math.nan,
    )


# ---------------------------------------------------------------------------
# hypothesis verdicts


@dataclass(frozen=True)
class Verdict:
    passed: bool
    detail: str


# names of the four controllability cases, in order
CONTROL_CASES = (
    "Ka<=1, lambda<0",
    "Ka<=1, lambda>=0",
    "Ka>1 with bounded xb/a, lambda<0",
    "Ka>1 with bounded xb/a, lambda>=0",
)


# verdicts a run needs; weak_case / strong_case only say which branch is active
REQUIRED_VERDICTS = ("structure", "lambda_admissible", "regular_domain", "trace_regularity",
                     "controllability")


@dataclass(frozen=True)
class HypothesisVerdicts:
    """Pass/fail per assumption, keyed by a descriptive name.

    Keys: ``structure`` (b/a integrable, a and d vanish at 0, K_a + K_d <= 2),
    ``lambda_admissible`` (lambda < 1/C_HP), ``regular_domain``
    (K_a + 2 K_d <= 2), ``trace_regularity`` (the previous three with a, d
    WD or SD), ``weak_case`` (trace_regularity with K_a <= 1), ``strong_case``
    (trace_regularity with K_a > 1 and xb/a bounded) and ``controllability``
    (one of the four :data:`CONTROL_CASES`).
    """

    verdicts: dict
    control_case: Optional[int]
    report: DegeneracyReport
    chp: float
    lam: float
    nondegenerate_allowed: bool

    def __getitem__(self, key) -> Verdict:
        return self.verdicts[key]

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    def failures(self, required_only: bool = False) -> list[str]:
        keys = REQUIRED_VERDICTS if required_only else tuple(self.verdicts)
        return [f"{k} failed ({self.verdicts[k].detail})" for k in keys
                if not self.verdicts[k].passed]

    @property
    def required_passed(self) -> bool:
        """All verdicts except the mutually exclusive weak/strong case flags."""
        return all(self.verdicts[k].passed for k in REQUIRED_VERDICTS)


def _leq(lhs, rhs):
    return lhs <= rhs + _LEQ_SLACK


def lambda_window_negative(k_a: float, k_d: float, m: float, chp: float) -> float:
    """Lower end of the admissible negative-lambda window."""
    return -(2.0 - k_a - 2.0 * m) / (chp * (1.0 + 1.5 * k_a + k_d + m))


def check_hypotheses(s: CoefficientSet, chp: float, *, allow_nondegenerate: bool = True,
                     report: Optional[DegeneracyReport] = None) -> HypothesisVerdicts:
    """Evaluate every structural assumption on (a, b, d, lambda).

    With ``allow_nondegenerate`` a coefficient that stays positive at 0 is
    accepted wherever a WD/SD class is demanded, as the K = 0 limit (this is
    how the classical string a = 1 enters the constant formulas).
    """
    r = report or degeneracy_report(s)
    lam = s.lam
    ka, kd = r.K_a, r.K_d

    def class_ok(cls, degenerate):
        if cls is not DegeneracyClass.NONE:
            return True
        return allow_nondegenerate and not degenerate

    v = {}
    vanish = r.a_degenerate and r.d_degenerate
    shape_ok = vanish or allow_nondegenerate
    v["structure"] = Verdict(
        r.b_over_a_integrable and shape_ok and _leq(ka + kd, 2.0),
        f"b/a integrable={r.b_over_a_integrable}, a(0)=d(0)=0: {vanish}, "
        f"K_a+K_d={ka + kd:.6g} <= 2",
    )
    v["lambda_admissible"] = Verdict(lam < 1.0 / chp, f"lambda={lam:.6g} < 1/C_HP={1.0 / chp:.6g}")
    v["regular_domain"] = Verdict(_leq(ka + 2 * kd, 2.0), f"K_a+2K_d={ka + 2 * kd:.6g} <= 2")
    classes = class_ok(r.class_a, r.a_degenerate) and class_ok(r.class_d, r.d_degenerate)
    trace_ok = (v["lambda_admissible"].passed and r.b_over_a_integrable and classes
                and v["regular_domain"].passed)
    v["trace_regularity"] = Verdict(
        trace_ok, f"classes a={r.class_a.value}, d={r.class_d.value}; K_a+2K_d <= 2")
    v["weak_case"] = Verdict(trace_ok and _leq(ka, 1.0), f"K_a={ka:.6g} <= 1")
    strong = trace_ok and ka > 1.0 and r.M_inf is not None
    v["strong_case"] = Verdict(strong, f"K_a={ka:.6g} > 1 and M_inf={r.M_inf}")

    case = None
    for idx, (base, m) in enumerate(((v["weak_case"].passed, r.M),
                                     (v["strong_case"].passed, r.M_inf))):
        if not base or m is None:
            continue
        if lam >= 0.0:
            if _leq(ka + 2 * kd, 2.0 - 2.0 * m):
                case = 2 * idx + 1
        elif ka < 2.0 - 2.0 * m and lambda_window_negative(ka, kd, m, chp) < lam:
            case = 2 * idx
        if case is not None:
            break
    v["controllability"] = Verdict(
        case is not None,
        CONTROL_CASES[case] if case is not None else "no controllability case applies")
    return HypothesisVerdicts(v, case, r, chp, lam, allow_nondegenerate)
