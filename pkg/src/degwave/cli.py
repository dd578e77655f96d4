"""Command-line driver: ``degwave {report,simulate,observe,control,sweep}``.

Runs are described by a TOML file (``key = value`` with dotted sections);
flags override file values.  Exit codes: 0 success, 1 invalid input,
2 a hypothesis, tolerance or verification check failed (outputs are still
written).
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import CoefficientProfile, CoefficientSet, check_hypotheses, degeneracy_report
from .errors import (BudgetZero, ClassRequired, CoercivityWarning, ConfigError, DegwaveError,
                     HypothesisViolated, TimeTooShort)
from .evolution import simulate_homogeneous, write_snapshots, write_trajectory_csv
from .hum import solve_hum, write_control_csv
from .observability import (constants_for, direct_constants, estimate_CT, inequality_suite,
                            remainder_note, smooth_random_data)
from .operator import assemble
from .weighted_spaces import Grid, GridFunction, chp_closed_form_bound, estimate_chp

log = logging.getLogger("degwave")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

# ---------------------------------------------------------------------------
# configuration


def _number(lo=-math.inf, hi=math.inf, lo_open=False, integer=False):
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {v!r}")
        if integer and not isinstance(v, int):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite")
        if v < lo or (lo_open and v == lo) or v > hi:
            bracket = "(" if lo_open else "["
            raise ConfigError(f"{key}={v!r} outside {bracket}{lo}, {hi}]")
        return int(v) if integer else float(v)
    return check


def _choice(*options):
    def check(key, v):
        if v not in options:
            raise ConfigError(f"{key}: expected one of {options}, got {v!r}")
        return v
    return check


def _boolean(key, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{key}: expected true/false, got {v!r}")
    return v


def _string(key, v):
    if not isinstance(v, str):
        raise ConfigError(f"{key}: expected a string, got {v!r}")
    return v


def _list_of(check):
    def wrapped(key, v):
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{key}: expected a non-empty list")
        return [check(f"{key}[{i}]", x) for i, x in enumerate(v)]
    return wrapped


_PROFILE_KEYS = {"exponent": _number(0.0), "scale": _number(), "table": _string}
_DATA_KEYS = {"kind": _choice("zero", "sine", "bump", "random"), "mode": _number(1, integer=True),
              "amplitude": _number(), "center": _number(0.0, 1.0, lo_open=True),
              "width": _number(0.0, lo_open=True)}

SCHEMA = {
    "coefficients": {"lambda": _number(), "lambda_chp": _number()},
    "grid": {"n": _number(2, 1_000_000, integer=True), "dt": _number(0.0, lo_open=True),
             "dt_factor": _number(0.0, 10.0, lo_open=True),
             "chp_n": _number(16, 1_000_000, integer=True)},
    "time": {"T": _number(0.0, lo_open=True), "T_factor": _number(0.0, lo_open=True)},
    "observe": {"samples": _number(1, integer=True), "budget": _number(0, integer=True),
                "refine": _number(0, integer=True),
                "sampler": _choice("smooth", "packets", "mixed"),
                "batch": _number(1, integer=True)},
    "control": {"tol": _number(0.0, 1.0, lo_open=True), "max_iter": _number(1, integer=True),
                "final_tol": _number(0.0, lo_open=True), "probes": _number(1, integer=True)},
    "tolerances": {"drift": _number(0.0, lo_open=True), "inequality": _number(0.0)},
    "run": {"seed": _number(0, integer=True), "out": _string, "conservative": _boolean,
            "snapshot_every": _number(0, integer=True)},
    "sweep": {"K_a": _list_of(_number(0.0)), "K_d": _list_of(_number(0.0)),
              "lambda": _list_of(_number()), "lambda_chp": _list_of(_number()),
              "T_factor": _list_of(_number(0.0, lo_open=True)),
              "workers": _number(1, 256, integer=True)},
}


@dataclass(frozen=True)
class ProfileSpec:
    exponent: float = 0.0
    scale: float = 1.0
    table: Optional[str] = None

    def build(self) -> CoefficientProfile:
        if self.table is not None:
            return CoefficientProfile.from_csv(self.table)
        return CoefficientProfile.power(self.exponent, self.scale)


@dataclass(frozen=True)
class DataSpec:
    kind: str = "zero"
    mode: int = 1
    amplitude: float = 1.0
    center: float = 0.5
    width: float = 0.05

    def build(self, grid: Grid, rng: np.random.Generator, velocity: bool) -> np.ndarray:
        x = grid.nodes
        if self.kind == "zero":
            return np.zeros(grid.n)
        if self.kind == "sine":
            return self.amplitude * np.sin(self.mode * np.pi * x)
        if self.kind == "bump":
            return self.amplitude * np.exp(-0.5 * ((x - self.center) / self.width) ** 2)
        y0, y1 = smooth_random_data(grid, 1, rng)
        return self.amplitude * (y1 if velocity else y0)[:, 0]


@dataclass(frozen=True)
class RunConfig:
    a: ProfileSpec = ProfileSpec(0.5)
    b: ProfileSpec = ProfileSpec(0.0, 0.0)
    d: ProfileSpec = ProfileSpec(0.5)
    lam: float = 0.0
    lambda_chp: Optional[float] = None
    n: int = 200
    dt: Optional[float] = None
    dt_factor: float = 1.0
    chp_n: int = 4096
    T: Optional[float] = None
    T_factor: float = 2.0
    y0: DataSpec = DataSpec("sine")
    y1: DataSpec = DataSpec("zero")
    samples: int = 100
    budget: int = 256
    refine: int = 64
    sampler: str = "mixed"
    batch: int = 50
    cg_tol: float = 1e-8
    max_iter: int = 500
    final_tol: float = 1e-3
    probes: int = 10
    drift_tol: float = 1e-8
    inequality_tol: float = 0.02
    seed: int = 0
    out: str = "out"
    conservative: bool = False
    snapshot_every: int = 0
    sweep: dict = field(default_factory=dict)

    def coefficient_set(self, lam: float = 0.0) -> CoefficientSet:
        return CoefficientSet(self.a.build(), self.b.build(), self.d.build(), lam)


_RENAME = {("coefficients", "lambda"): "lam", ("control", "tol"): "cg_tol",
           ("tolerances", "drift"): "drift_tol", ("tolerances", "inequality"): "inequality_tol"}


def _parse_block(key, raw, schema, cls, base_dir: Optional[Path]):
    if not isinstance(raw, dict):
        raise ConfigError(f"{key}: expected a table")
    vals = {}
    for k, v in raw.items():
        if k not in schema:
            raise ConfigError(f"unknown key {key}.{k}")
        vals[k] = schema[k](f"{key}.{k}", v)
    if cls is ProfileSpec:
        if "table" in vals:
            if set(vals) - {"table"}:
                raise ConfigError(f"{key}: 'table' excludes exponent/scale")
            p = Path(vals["table"])
            vals["table"] = str(p if p.is_absolute() or base_dir is None else base_dir / p)
        elif key.endswith((".a", ".d")) and vals.get("scale", 1.0) <= 0:
            raise ConfigError(f"{key}.scale must be positive")
    return cls(**vals)


def parse_config(raw: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a parsed TOML document; unknown keys are rejected."""
    kwargs: dict[str, Any] = {}
    for section, body in raw.items():
        if section == "data":
            if not isinstance(body, dict):
                raise ConfigError("data: expected a table")
            for k, v in body.items():
                if k not in ("y0", "y1"):
                    raise ConfigError(f"unknown key data.{k}")
                kwargs[k] = _parse_block(f"data.{k}", v, _DATA_KEYS, DataSpec, base_dir)
            continue
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for k, v in body.items():
            if section == "coefficients" and k in ("a", "b", "d"):
                kwargs[k] = _parse_block(f"coefficients.{k}", v, _PROFILE_KEYS, ProfileSpec,
                                         base_dir)
                continue
            if k not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{k}")
            val = SCHEMA[section][k](f"{section}.{k}", v)
            if section == "sweep":
                kwargs.setdefault("sweep", {})[k] = val
            else:
                kwargs[_RENAME.get((section, k), k)] = val
    coeffs = raw.get("coefficients", {})
    if "lambda" in coeffs and "lambda_chp" in coeffs:
        raise ConfigError("give either coefficients.lambda or coefficients.lambda_chp")
    if "dt" in raw.get("grid", {}) and "dt_factor" in raw.get("grid", {}):
        raise ConfigError("give either grid.dt or grid.dt_factor")
    if "T" in raw.get("time", {}) and "T_factor" in raw.get("time", {}):
        raise ConfigError("give either time.T or time.T_factor")
    sweep = kwargs.get("sweep", {})
    if "lambda" in sweep and "lambda_chp" in sweep:
        raise ConfigError("give either sweep.lambda or sweep.lambda_chp")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent)


# ---------------------------------------------------------------------------
# shared setup


@dataclass
class Setup:
    cfg: RunConfig
    coeffs: CoefficientSet
    chp: float
    chp_estimate: float
    chp_bound: Optional[float]
    verdicts: Any
    consts: Any
    consts_error: Optional[str]

    @property
    def T0(self) -> Optional[float]:
        return self.consts.T0 if self.consts is not None else None

    def horizon(self) -> float:
        if self.cfg.T is not None:
            return self.cfg.T
        if self.T0 is None:
            raise HypothesisViolated(
                f"time.T_factor needs T0, which is unavailable: {self.consts_error}")
        return self.cfg.T_factor * self.T0

    def operator(self, n: Optional[int] = None):
        grid = Grid(n or self.cfg.n, self.coeffs)
        return assemble(grid)

    def dt(self, grid: Grid) -> float:
        return self.cfg.dt if self.cfg.dt is not None else self.cfg.dt_factor * grid.h


def prepare(cfg: RunConfig) -> Setup:
    base = cfg.coefficient_set(0.0)
    chp_est = estimate_chp(Grid(cfg.chp_n, base))
    try:
        bound = chp_closed_form_bound(base)
    except ClassRequired:
        bound = None
    if cfg.conservative:
        if bound is None:
            raise ConfigError("--conservative needs a and d weakly or strongly degenerate")
        chp = bound
    else:
        chp = chp_est
    lam = cfg.lambda_chp / chp if cfg.lambda_chp is not None else cfg.lam
    coeffs = base.with_lambda(lam)
    report = degeneracy_report(coeffs)
    verdicts = check_hypotheses(coeffs, chp, report=report)
    consts, err = None, None
    try:
        consts = constants_for(coeffs, chp)
    except HypothesisViolated as exc:
        err = str(exc)
    return Setup(cfg, coeffs, chp, chp_est, bound, verdicts, consts, err)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_dict(s: Setup) -> dict:
    r = s.verdicts.report
    out = {
        "K_a": r.K_a, "K_d": r.K_d, "class_a": r.class_a.value, "class_d": r.class_d.value,
        "M": r.M, "M_inf": r.M_inf, "b_over_a_integrable": r.b_over_a_integrable,
        "eta1": r.eta1, "lambda": s.coeffs.lam, "C_HP_estimate": s.chp_estimate,
        "C_HP_bound": s.chp_bound, "C_HP_used": s.chp, "conservative": s.cfg.conservative,
    }
    try:
        c1, c2 = direct_constants(r, s.chp, s.coeffs.lam)
    except HypothesisViolated:
        c1 = c2 = None
    out.update({"C1": c1, "C2": c2})
    if s.consts is not None:
        c = s.consts
        out.update({"C3": c.C3, "C4": c.C4, "C5": c.C5, "C6": c.C6, "epsilon": c.epsilon,
                    "T0": c.T0, "active_case": c.case_name})
        note = remainder_note(r, c)
        if note:
            out["note"] = note
    else:
        out.update({k: None for k in ("C3", "C4", "C5", "C6", "epsilon", "T0", "active_case")})
        out["constants_error"] = s.consts_error
    out["verdicts"] = {k: {"passed": v.passed, "detail": v.detail}
                       for k, v in s.verdicts.verdicts.items()}
    out["failures"] = s.verdicts.failures(required_only=True)
    return out


def _report_text(d: dict) -> str:
    lines = []
    for k, v in d.items():
        if k == "verdicts":
            for name, vd in v.items():
                lines.append(f"verdict.{name} = {'pass' if vd['passed'] else 'FAIL'}"
                             f"  # {vd['detail']}")
        elif k == "failures":
            lines.extend(v)
        else:
            lines.append(f"{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def _write_json(path: Path, d: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2, sort_keys=False, default=float)
        fh.write("\n")


def _outdir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _initial_data(s: Setup, grid: Grid) -> tuple[GridFunction, GridFunction]:
    rng = np.random.default_rng(s.cfg.seed)
    return (GridFunction(grid, s.cfg.y0.build(grid, rng, False)),
            GridFunction(grid, s.cfg.y1.build(grid, rng, True)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_report(cfg: RunConfig) -> int:
    s = prepare(cfg)
    d = report_dict(s)
    out = _outdir(cfg)
    text = _report_text(d)
    (out / "report.txt").write_text(text, encoding="utf-8")
    _write_json(out / "report.json", d)
    sys.stdout.write(text)
    return EXIT_OK if s.verdicts.required_passed else EXIT_FAILED


def _is_classical_string(c: CoefficientSet) -> bool:
    return (c.a.is_power and c.a.exponent == 0 and c.a.scale == 1.0 and c.drift_free
            and c.lam == 0.0)


def cmd_simulate(cfg: RunConfig, tol: Optional[float] = None) -> int:
    tol = cfg.inequality_tol if tol is None else tol
    s = prepare(cfg)
    op = s.operator()
    T = s.horizon()
    y0, y1 = _initial_data(s, op.grid)
    traj = simulate_homogeneous(y0, y1, T, s.dt(op.grid), op=op, tol=cfg.drift_tol,
                                keep_every=cfg.snapshot_every)
    out = _outdir(cfg)
    write_trajectory_csv(traj, out / "trajectory.csv")
    if cfg.snapshot_every:
        write_snapshots(traj, out / "snapshots.bin")
    E0 = float(traj.energy[0])
    summary = {"T": T, "dt": traj.dt, "steps": traj.steps, "E0": E0, "drift": traj.drift,
               "drift_tol": cfg.drift_tol, "trace_integral": traj.trace_integral()}
    status = EXIT_OK
    if traj.drift_exceeded:
        status = EXIT_FAILED
    try:
        consts = direct_constants(s.verdicts.report, s.chp, s.coeffs.lam)
        from .observability import check_direct_inequality

        margin = check_direct_inequality(traj, consts, E0, T)
        summary.update({"C1": consts[0], "C2": consts[1], "direct_margin": margin})
        if margin < -tol * E0:
            log.error("direct inequality violated: margin %.3e < -%.2g E0", margin, tol)
            status = EXIT_FAILED
    except HypothesisViolated as exc:
        summary["direct_margin"] = None
        log.warning("direct inequality not evaluated: %s", exc)
    if _is_classical_string(s.coeffs):
        # the string has period 2: y(2) = y0 and y_t(2) = y1
        back = simulate_homogeneous(y0, y1, 2.0, s.dt(op.grid), op=op)
        scale = max(np.max(np.abs(y0.values)), np.max(np.abs(y1.values)), 1e-300)
        err = max(np.max(np.abs(back.final.y.values - y0.values)),
                  np.max(np.abs(back.final.yt.values - y1.values))) / scale
        summary["recurrence_error"] = float(err)
        log.info("recurrence check at t = 2: relative error %.3e", err)
    _write_json(out / "simulate.json", summary)
    sys.stdout.write(_report_text(summary))
    return status


def cmd_observe(cfg: RunConfig, tol: Optional[float] = None) -> int:
    tol = cfg.inequality_tol if tol is None else tol
    if cfg.budget <= 0:
        raise BudgetZero("observe.budget must be positive")
    s = prepare(cfg)
    if s.consts is None:
        log.error("constants unavailable: %s", s.consts_error)
        _write_json(_outdir(cfg) / "observe.json", {"error": s.consts_error})
        return EXIT_FAILED
    op = s.operator()
    T = s.horizon()
    c = s.consts
    est = estimate_CT(op, T, cfg.sampler, cfg.budget, cfg.refine, cfg.seed, s.dt(op.grid))
    summary = {"T": T, "T0": c.T0, "CT_hat": est.CT_hat, "c_T": est.cost,
               "CT_lower_bound": c.lower_bound(T) if T > c.T0 else None}
    if T <= c.T0:
        msg = str(TimeTooShort(f"T={T:.6g} <= T0={c.T0:.6g}"))
        log.warning("%s: inverse inequality suite skipped", msg)
        summary["inverse_skipped"] = msg
    suite = inequality_suite(op, c, T, cfg.samples, cfg.seed, s.dt(op.grid), cfg.batch)
    summary.update({"min_direct_rel_margin": suite["min_direct"],
                    "min_inverse_rel_margin": suite["min_inverse"],
                    "max_drift": suite["max_drift"], "tol": tol})
    out = _outdir(cfg)
    with open(out / "observe.csv", "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sample", "direct_rel_margin", "inverse_rel_margin"])
        inv = suite["inverse_rel_margin"]
        for i, dm in enumerate(suite["direct_rel_margin"]):
            wr.writerow([i, repr(float(dm)), "" if inv is None else repr(float(inv[i]))])
    _write_json(out / "observe.json", summary)
    sys.stdout.write(_report_text(summary))
    failed = suite["min_direct"] < -tol or (
        suite["min_inverse"] is not None and suite["min_inverse"] < -tol)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_control(cfg: RunConfig, tol: Optional[float] = None) -> int:
    final_tol = cfg.final_tol if tol is None else tol
    s = prepare(cfg)
    op = s.operator()
    T = s.horizon()
    if s.T0 is None:
        log.warning("no controllability case applies (%s); coercivity is not guaranteed",
                    s.consts_error)
    u0, u1 = _initial_data(s, op.grid)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CoercivityWarning)
        res = solve_hum(u0, u1, T, cfg.cg_tol, cfg.max_iter, op=op, dt=s.dt(op.grid),
                        T0=s.T0, probes=cfg.probes, seed=cfg.seed, raise_on_failure=False)
    for w in caught:
        log.warning("%s: %s", w.category.__name__, w.message)
    out = _outdir(cfg)
    write_control_csv(res, out / "control.csv")
    with open(out / "cg.csv", "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "residual", "J"])
        for i, (r, j) in enumerate(zip(res.cg_residuals, res.functional)):
            wr.writerow([i, repr(float(r)), repr(float(j))])
    ry, ryt = res.relative_final_norms
    summary = {"T": T, "T0": s.T0, "iterations": res.iterations, "converged": res.converged,
               "final_y_norm": res.final_y_norm, "final_yt_norm": res.final_yt_norm,
               "initial_norm": res.initial_norm, "relative_final_y": ry,
               "relative_final_yt": ryt, "transposition_residual": res.transposition_residual,
               "control_l2": res.control_l2(), "final_tol": final_tol}
    _write_json(out / "control.json", summary)
    sys.stdout.write(_report_text(summary))
    if res.initial_norm > 0 and max(ry, ryt) > final_tol:
        log.error("final norms %.3e, %.3e exceed %.1e", ry, ryt, final_tol)
        return EXIT_FAILED
    return EXIT_OK


SWEEP_COLUMNS = ("K_a", "K_d", "lambda", "T_factor", "T", "C_HP", "case", "C1", "C2", "C3",
                 "C4", "C5", "C6", "epsilon", "T0", "passed", "failures")


def _sweep_cell(args) -> dict:
    cfg, ka, kd, lam_value, lam_is_fraction, tf = args
    cell = replace(cfg, a=replace(cfg.a, exponent=ka, table=None),
                   d=replace(cfg.d, exponent=kd, table=None),
                   lam=0.0 if lam_is_fraction else lam_value,
                   lambda_chp=lam_value if lam_is_fraction else None, T=None, T_factor=tf)
    row = dict.fromkeys(SWEEP_COLUMNS)
    row.update({"K_a": ka, "K_d": kd, "T_factor": tf})
    try:
        s = prepare(cell)
    except DegwaveError as exc:
        row.update({"passed": False, "failures": str(exc)})
        return row
    d = report_dict(s)
    row.update({k: d[k] for k in ("C1", "C2", "C3", "C4", "C5", "C6", "epsilon", "T0")})
    row.update({"lambda": s.coeffs.lam, "C_HP": s.chp, "case": d["active_case"],
                "passed": s.verdicts.required_passed, "failures": "; ".join(d["failures"])})
    if s.T0 is not None:
        row["T"] = tf * s.T0
    return row


def sweep_rows(cfg: RunConfig, workers: Optional[int] = None) -> list[dict]:
    sw = cfg.sweep
    kas = sw.get("K_a", [cfg.a.exponent])
    kds = sw.get("K_d", [cfg.d.exponent])
    if "lambda_chp" in sw:
        lams, frac = sw["lambda_chp"], True
    elif "lambda" in sw:
        lams, frac = sw["lambda"], False
    elif cfg.lambda_chp is not None:
        lams, frac = [cfg.lambda_chp], True
    else:
        lams, frac = [cfg.lam], False
    tfs = sw.get("T_factor", [cfg.T_factor])
    cells = [(cfg, ka, kd, lam, frac, tf)
             for ka, kd, lam, tf in itertools.product(kas, kds, lams, tfs)]
    workers = workers or sw.get("workers", 1)
    if workers <= 1 or len(cells) == 1:
        return [_sweep_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps the input order, so rows are deterministic
        return list(pool.map(_sweep_cell, cells))


def cmd_sweep(cfg: RunConfig) -> int:
    rows = sweep_rows(cfg)
    out = _outdir(cfg)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SWEEP_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(r[k]) for k in SWEEP_COLUMNS])
    for r in rows:
        sys.stdout.write(", ".join(f"{k}={_fmt(r[k])}" for k in SWEEP_COLUMNS[:7])
                         + f", T0={_fmt(r['T0'])}, passed={r['passed']}\n")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAILED


COMMANDS = {"report": cmd_report, "simulate": cmd_simulate, "observe": cmd_observe,
            "control": cmd_control, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degwave",
        description="Degenerate wave equation with drift: constants, simulation, "
                    "observability and boundary null control.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run description")
    common.add_argument("--conservative", action="store_true", default=None,
                        help="use the closed-form C_HP bound instead of the estimate")
    common.add_argument("--seed", type=int, help="seed for randomized suites")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float,
                        help="pass/fail tolerance of the subcommand (inequality margin for "
                             "simulate/observe, relative final norm for control)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__ or name)
    return parser


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    over = {}
    if args.conservative:
        over["conservative"] = True
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    if args.tol is not None and not (args.tol >= 0 and math.isfinite(args.tol)):
        raise ConfigError("--tol must be a nonnegative number")
    return replace(cfg, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _apply_flags(cfg, args)
        fn = COMMANDS[args.command]
        if args.command in ("simulate", "observe", "control"):
            return fn(cfg, args.tol)
        return fn(cfg)
    except (ConfigError, BudgetZero) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except DegwaveError as exc:
        log.error("%s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
