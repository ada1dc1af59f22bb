"""Experiment orchestration: configuration files, runs, report files."""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import os
import platform
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import spectral as sp
from .core import CoupledState, Parameters, make_initial_data, matched_initial_data, momentum, operators_for, validate_params
from .dynamics import Stepper, simulate
from .energy import COLUMNS, EnergyTrace, compute_functionals, fit_decay, fit_power, weight_b, write_json
from .errors import IoError, MismatchedBases, ParseError
from .linear import default_xi_set, mode_matrices, slow_rate_sweep, spectrum_rows, write_spectrum_csv

__all__ = [
    "KINDS",
    "ExperimentSpec",
    "Report",
    "default_spec",
    "load_config",
    "parse_config",
    "dump_config",
    "validate_spec",
    "run",
    "run_simulate",
    "run_spectrum",
    "run_sweep_nu",
    "run_limit_compare",
    "emit_reports",
    "default_workers",
]

KINDS = ("simulate", "spectrum", "sweep-nu", "limit-compare")
DYNAMIC_KINDS = ("simulate", "sweep-nu", "limit-compare")
WORKERS_ENV = "FENE_WORKERS"

_PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(Parameters) if f.init)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    base: Parameters = field(default_factory=Parameters)
    nu_list: tuple = (100.0,)
    eps: float = 0.01
    output_dir: str = "out"
    stride: int = 5
    probe_times: tuple = (0.5, 1.0, 2.0)
    mismatch: float = 1.0
    horizon_nu_fraction: float = 0.5
    fit_window: float = 1.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for f in dataclasses.fields(self):
            if f.name in ("kind", "base"):
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        out["params"] = {k: v for k, v in self.base.to_dict().items() if v is not None}
        return out


_SPEC_KEYS = {f.name for f in dataclasses.fields(ExperimentSpec)} - {"base"} | {"params"}
_REQUIRED = ("kind",)


def default_spec(kind: str) -> ExperimentSpec:
    """Reasonable desk-scale configuration for each experiment kind."""
    if kind == "simulate":
        return ExperimentSpec(kind, Parameters(dt=0.02, t_final=2.0), (100.0,))
    if kind == "spectrum":
        return ExperimentSpec(kind, Parameters(), (10.0, 100.0, 1000.0))
    if kind == "sweep-nu":
        return ExperimentSpec(kind, Parameters(dt=0.05), (50.0, 100.0, 200.0, 400.0), stride=10)
    if kind == "limit-compare":
        return ExperimentSpec(kind, Parameters(dt=0.02, t_final=2.0), (50.0, 100.0, 200.0, 400.0))
    raise ParseError(f"unknown experiment kind {kind!r}", field="kind")


def _key_line(text, key):
    if text is None:
        return None
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _coerce_tuple(values, name, text):
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise ParseError(f"'{name}' must be a list of numbers", field=name, line=_key_line(text, name))
    return tuple(float(v) for v in values)


def parse_config(data: dict, text: str | None = None) -> ExperimentSpec:
    """Strict conversion of a decoded TOML table into an :class:`ExperimentSpec`."""
    for key in data:
        if key not in _SPEC_KEYS:
            raise ParseError(f"unknown key '{key}'", field=key, line=_key_line(text, key))
    for key in _REQUIRED:
        if key not in data:
            raise ParseError(f"missing required field '{key}'", field=key)
    kind = data["kind"]
    if kind not in KINDS:
        raise ParseError(f"kind must be one of {KINDS}, got {kind!r}", field="kind", line=_key_line(text, "kind"))
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ParseError("'params' must be a table", field="params", line=_key_line(text, "params"))
    for key in params:
        if key not in _PARAM_FIELDS:
            raise ParseError(f"unknown parameter '{key}'", field=f"params.{key}", line=_key_line(text, key))
    base = Parameters(**params)
    kw = {}
    for key, value in data.items():
        if key in ("kind", "params"):
            continue
        if key in ("nu_list", "probe_times"):
            kw[key] = _coerce_tuple(value, key, text)
        else:
            kw[key] = value
    spec = ExperimentSpec(kind=kind, base=base, **kw)
    validate_spec(spec, text)
    return spec


def validate_spec(spec: ExperimentSpec, text=None) -> ExperimentSpec:
    nus = np.asarray(spec.nu_list, dtype=float)
    if nus.size == 0 or np.any(np.diff(nus) <= 0):
        raise ParseError("nu_list must be non-empty and strictly increasing", field="nu_list", line=_key_line(text, "nu_list"))
    if np.any(nus <= 2 * spec.base.mu):
        raise ParseError("every nu must exceed 2 mu (positive volume viscosity)", field="nu_list", line=_key_line(text, "nu_list"))
    if spec.kind in DYNAMIC_KINDS and not spec.eps > 0:
        raise ParseError("eps must be > 0 for dynamic experiments", field="eps", line=_key_line(text, "eps"))
    if not (isinstance(spec.stride, int) and spec.stride >= 1):
        raise ParseError("stride must be a positive integer", field="stride", line=_key_line(text, "stride"))
    if not 0 < spec.fit_window <= 1:
        raise ParseError("fit_window must lie in (0, 1]", field="fit_window", line=_key_line(text, "fit_window"))
    return spec


def load_config(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from exc
    return parse_config(data, text)


def dump_config(spec: ExperimentSpec, path) -> None:
    try:
        with open(path, "wb") as fh:
            tomli_w.dump(spec.to_dict(), fh)
    except OSError as exc:
        raise IoError(f"cannot write config {path}: {exc}") from exc


@dataclass(eq=False)
class Report:
    """Everything an experiment produces; ``summary`` is JSON-ready and deterministic."""

    kind: str
    summary: dict
    flags: dict
    traces: dict = field(default_factory=dict)
    spectrum: list | None = None
    wide: dict | None = None
    dim: int = 2

    @property
    def passed(self) -> bool:
        return all(self.flags.values())


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _safe_rate(t, y, window):
    try:
        return fit_decay(t, y, window)
    except (ValueError, ArithmeticError):
        return None


# ---------------------------------------------------------------- simulate

def _structural_flags(trace: EnergyTrace, p: Parameters) -> dict:
    from .spectral import product_constant

    c_emb = product_constant(p.dim, p.grid_n, p.sobolev_m - 1)
    scale = max(float(np.max(trace["u_m"], initial=0.0)), 1e-300)
    bound = trace["PM_m1"] + c_emb * trace["eta_m1"] * trace["u_m1"]
    return {
        "mass_conserved": bool(np.max(np.abs(trace["mean_eta"] - trace["mean_eta"][0])) <= 1e-13),
        "polymer_mass_conserved": bool(np.max(np.abs(trace["psi_mass"] - trace["psi_mass"][0])) <= 1e-12),
        "momentum_decomposition": bool(np.max(trace["decomp_residual"]) <= 1e-12 * scale),
        "decomposition_bound": bool(np.all(trace["Pu_m1"] <= bound * (1 + 1e-12) + 1e-300)),
        "eta_poincare": bool(np.all(trace["eta_0"] <= trace["grad_eta_0"] * (1 + 1e-12) + 1e-300)),
    }


def _simulate_one(args):
    p, eps, stride = args
    ops = operators_for(p.dim, p.k, p.rad_order, p.ang_order)
    s0 = make_initial_data(p, eps, ops)
    return simulate(p, s0, ops, stride=stride)


def run_simulate(spec: ExperimentSpec, workers=1) -> Report:
    p = validate_params(spec.base.with_nu(spec.nu_list[0]))
    trace = _simulate_one((p, spec.eps, spec.stride))
    fn = compute_functionals(trace)
    flags = _structural_flags(trace, p)
    summary = {
        "kind": spec.kind,
        "spec": spec.to_dict(),
        "nu": p.nu,
        "delta": p.delta,
        "samples": len(trace),
        "functionals": fn._asdict(),
        "final": {c: trace[c][-1] for c in COLUMNS},
        "flags": flags,
    }
    trace.final_state = None
    return Report(spec.kind, summary, flags, {p.nu: trace}, wide=_wide_from_traces({p.nu: trace}, ("eta_m", "u_m", "Qu_m", "PM_m1", "psi_m_L2")), dim=p.dim)


# ---------------------------------------------------------------- spectrum

def _dichotomy_ratio(mats, p):
    slow_max, fast_min = 0.0, np.inf
    keep = np.setdiff1d(np.arange(mats.shape[1]), [1 + p.dim])
    for mat in mats:
        ev = np.linalg.eigvals(mat[np.ix_(keep, keep)])
        rates = -ev.real
        slow = rates[rates <= 2.0 / p.nu]
        fast = rates[rates > 2.0 / p.nu]
        if slow.size:
            slow_max = max(slow_max, float(slow.max()))
        if fast.size:
            fast_min = min(fast_min, float(fast.min()))
    return fast_min / slow_max if slow_max > 0 else np.inf


def run_spectrum(spec: ExperimentSpec, workers=1, kmax=4) -> Report:
    base = spec.base
    ops = operators_for(base.dim, base.k, base.rad_order, base.ang_order)
    p_list = [validate_params(base.with_nu(nu)) for nu in spec.nu_list]
    xi_set = default_xi_set(base.dim, kmax)
    rows = spectrum_rows(p_list, xi_set, ops)
    max_re = max(r[-2] for r in rows)
    coupled = slow_rate_sweep(p_list, xi_set, ops, coupling=True)
    decoupled = slow_rate_sweep(p_list, xi_set, ops, coupling=False)
    ratios = {}
    for p in p_list:
        if p.nu >= 100:
            ratios[p.nu] = _dichotomy_ratio(mode_matrices(np.array(xi_set), p, ops), p)
    flags = {
        "spectral_stability": bool(max_re <= 1e-10),
        "slow_branch_scaling": bool(all(abs(r.rate * r.nu - 1) <= 0.05 for r in decoupled)),
        "slow_fast_dichotomy": bool(all(v >= 10 for v in ratios.values())),
    }
    summary = {
        "kind": spec.kind,
        "spec": spec.to_dict(),
        "max_re_lambda": max_re,
        "slow_rates": [
            {"nu": c.nu, "coupled": c.rate, "coupled_xi": list(c.xi), "decoupled": dc.rate, "decoupled_xi": list(dc.xi)}
            for c, dc in zip(coupled, decoupled)
        ],
        "dichotomy_ratio": {str(k): v for k, v in ratios.items()},
        "flags": flags,
    }
    return Report(spec.kind, summary, flags, spectrum=rows, dim=base.dim)


# ---------------------------------------------------------------- sweep-nu

def run_sweep_nu(spec: ExperimentSpec, workers=1, trace_source=None) -> Report:
    """One run per ``nu`` from the same master draw; reports ``nu``-slopes of the
    sup norms and decay rates.

    ``trace_source(p) -> EnergyTrace`` replaces the solver (synthetic input).
    """
    members = []
    for nu in spec.nu_list:
        p = validate_params(spec.base.with_nu(nu))
        members.append(p.replace(t_final=spec.horizon_nu_fraction * p.nu))
    if trace_source is not None:
        traces = [trace_source(p) for p in members]
    else:
        traces = _map(_simulate_one, [(p, spec.eps, spec.stride) for p in members], workers)
    by_nu = {p.nu: tr for p, tr in zip(members, traces)}
    for tr in traces:
        tr.final_state = None
    per_nu = []
    for p, tr in zip(members, traces):
        t = tr.t
        per_nu.append(
            {
                "nu": p.nu,
                "sup_eta_m": float(np.max(tr["eta_m"])),
                "sup_Qu_m": float(np.max(tr["Qu_m"])),
                "rate_u_m": _safe_rate(t, tr["u_m"], spec.fit_window),
                "rate_PM_m1": _safe_rate(t, tr["PM_m1"], spec.fit_window),
                "rate_eta_m": _safe_rate(t, tr["eta_m"], spec.fit_window),
            }
        )
    nus = [r["nu"] for r in per_nu]
    summary = {"kind": spec.kind, "spec": spec.to_dict(), "members": per_nu}
    flags = {}
    if len(set(nus)) >= 3:
        s_eta = fit_power(nus, [r["sup_eta_m"] for r in per_nu])
        s_qu = fit_power(nus, [r["sup_Qu_m"] for r in per_nu])
        summary["slope_sup_eta_m"] = s_eta
        summary["slope_sup_Qu_m"] = s_qu
        flags["eta_scaling"] = bool(-0.65 <= s_eta <= -0.35)
        flags["Qu_scaling"] = bool(-0.65 <= s_qu <= -0.35)
    else:
        summary["note"] = "insufficient for power fit"
    enhanced = {}
    for p, r in zip(members, per_nu):
        if p.nu >= 100 and p.mu >= 4.0 / p.nu and r["rate_u_m"] is not None and r["rate_PM_m1"] is not None:
            enhanced[str(p.nu)] = bool(r["rate_PM_m1"] >= 2.0 * r["rate_u_m"])
    if enhanced:
        summary["enhanced_decay"] = enhanced
        flags["enhanced_momentum_decay"] = all(enhanced.values())
    summary["flags"] = flags
    wide = _wide_from_traces(by_nu, ("eta_m", "Qu_m", "u_m", "PM_m1"))
    return Report(spec.kind, summary, flags, by_nu, wide=wide, dim=spec.base.dim)


# ---------------------------------------------------------------- limit-compare

def _limit_member(args):
    p, eps, mismatch, probe_steps, stride, surrogate = args
    ops = operators_for(p.dim, p.k, p.rad_order, p.ang_order)
    s0, v0, phi0 = matched_initial_data(p, eps, mismatch, ops)
    if v0.dim != s0.dim or phi0.basis_ref != s0.psi.basis_ref:
        raise MismatchedBases("compressible and limit states use different bases")
    d = p.dim
    comp = Stepper(p, ops, scheme=p.scheme, system="incompressible" if surrogate else "compressible")
    limit = Stepper(p, ops, scheme=p.scheme, system="incompressible")
    y = s0.to_vector()
    z = np.concatenate([np.zeros_like(v0.data[:1]), v0.data, phi0.coeffs], axis=0)
    if surrogate:
        # eta and Qu removed: the compressible side then has the limit dynamics,
        # and the limit run starts from the same projected data
        y[0] = 0.0
        y[1 : 1 + d], _ = sp.leray_project(y[1 : 1 + d], d)
        z = y.copy()
    m1 = p.sobolev_m - 1

    def err(y, z):
        st = CoupledState.from_vector(y, 0.0, d, s0.psi.basis_ref)
        pm, _ = sp.leray_project(momentum(st).data, d)
        return sp.sobolev_norm_coeffs(pm - z[1 : 1 + d], d, m1) ** 2 + sp.sobolev_norm_coeffs(y[1 + d :] - z[1 + d :], d, m1) ** 2

    n_steps = int(round(p.t_final / p.dt))
    keep = set(range(0, n_steps + 1, stride)) | {n_steps} | set(probe_steps)
    times, errs = [0.0], [err(y, z)]
    for i in range(1, n_steps + 1):
        y = comp.advance(y)
        z = limit.advance(z)
        if i in keep:
            times.append(i * p.dt)
            errs.append(err(y, z))
    return np.array(times), np.array(errs)


def run_limit_compare(spec: ExperimentSpec, workers=1, surrogate=False) -> Report:
    """Co-evolve the compressible system and its incompressible limit for every
    ``nu`` and measure ``err = ||PM - v||^2_{m-1} + ||psi - phi||^2_{m-1,L2}``.

    ``surrogate=True`` removes the density and potential velocity from the
    compressible side (the ``nu -> infinity`` picture), so both runs coincide.
    """
    members = [validate_params(spec.base.with_nu(nu)) for nu in spec.nu_list]
    dt = spec.base.dt
    horizon = max(spec.base.t_final, max(spec.probe_times))
    members = [p.replace(t_final=horizon) for p in members]
    probe_steps = [int(round(t / dt)) for t in spec.probe_times]
    args = [(p, spec.eps, spec.mismatch, probe_steps, spec.stride, surrogate) for p in members]
    results = _map(_limit_member, args, workers)
    per_nu, wide = [], {}
    for p, (t, e) in zip(members, results):
        b = weight_b(t, p)
        probe = {str(tp): float(e[np.argmin(np.abs(t - tp))]) for tp in spec.probe_times}
        be0 = float(b[0] * e[0])
        per_nu.append(
            {
                "nu": p.nu,
                "err0": float(e[0]),
                "err_probe": probe,
                "sup_err": float(np.max(e)),
                "sup_b_err": float(np.max(b * e)),
                "b_err0": be0,
            }
        )
        wide[f"t@nu={p.nu:g}"] = t
        wide[f"err@nu={p.nu:g}"] = e
        wide[f"b_err@nu={p.nu:g}"] = b * e
    summary = {"kind": spec.kind, "spec": spec.to_dict(), "members": per_nu}
    flags = {}
    if len(members) >= 3 and all(r["err_probe"][str(tp)] > 0 for r in per_nu for tp in spec.probe_times):
        slopes = {
            str(tp): fit_power([r["nu"] for r in per_nu], [r["err_probe"][str(tp)] for r in per_nu]) for tp in spec.probe_times
        }
        summary["slopes"] = slopes
        flags["limit_rate"] = all(-1.3 <= s <= -0.7 for s in slopes.values())
    elif len(members) < 3:
        summary["note"] = "insufficient for power fit"
    flags["weighted_error_bounded"] = all(r["sup_b_err"] <= 10.0 * r["b_err0"] for r in per_nu)
    if surrogate or spec.eps == 0:
        flags["limit_coincides"] = all(r["sup_err"] <= 1e-10 for r in per_nu)
        flags.pop("weighted_error_bounded")
    summary["flags"] = flags
    return Report(spec.kind, summary, flags, wide=wide, dim=spec.base.dim)


def run(spec: ExperimentSpec, workers=1) -> Report:
    if spec.kind == "simulate":
        return run_simulate(spec, workers)
    if spec.kind == "spectrum":
        return run_spectrum(spec, workers)
    if spec.kind == "sweep-nu":
        return run_sweep_nu(spec, workers)
    if spec.kind == "limit-compare":
        return run_limit_compare(spec, workers)
    raise ParseError(f"unknown experiment kind {spec.kind!r}", field="kind")


# ---------------------------------------------------------------- reports

def _wide_from_traces(traces: dict, columns) -> dict:
    wide = {}
    for nu, tr in traces.items():
        wide[f"t@nu={nu:g}"] = tr.t
        for c in columns:
            wide[f"{c}@nu={nu:g}"] = tr[c]
    return wide


def _write_wide(wide: dict, path):
    names = list(wide)
    length = max((len(v) for v in wide.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(length):
            w.writerow([repr(float(wide[n][i])) if i < len(wide[n]) else "" for n in names])


def emit_reports(report: Report, out_dir) -> list:
    """Write ``summary.json``, ``metadata.json`` and whichever of ``energy.csv``,
    ``spectrum.csv`` and ``wide.csv`` apply.  Returns the written paths."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = dict(report.summary)
        summary["flags"] = report.flags
        summary["all_pass"] = report.passed
        write_json(summary, out / "summary.json")
        written.append(out / "summary.json")
        meta = {
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "host": platform.node(),
        }
        write_json(meta, out / "metadata.json")
        written.append(out / "metadata.json")
        if report.traces:
            with open(out / "energy.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("nu",) + COLUMNS)
                for nu, tr in report.traces.items():
                    for row in tr.rows():
                        w.writerow([repr(float(nu))] + [repr(v) for v in row])
            written.append(out / "energy.csv")
        if report.spectrum is not None:
            write_spectrum_csv(report.spectrum, out / "spectrum.csv", report.dim)
            written.append(out / "spectrum.csv")
        if report.wide:
            _write_wide(report.wide, out / "wide.csv")
            written.append(out / "wide.csv")
    except OSError as exc:
        raise IoError(f"cannot write reports to {out}: {exc}") from exc
    return written
