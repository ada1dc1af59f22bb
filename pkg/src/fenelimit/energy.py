"""Norm monitoring, the weighted energy functionals and rate fits."""
from __future__ import annotations

import csv
import json
from typing import NamedTuple

import numpy as np
from scipy import integrate

from . import spectral as sp
from .core import CoupledState, Parameters, momentum
from .errors import DegenerateAbscissa, EmptyTrace, NonPositiveSeries

__all__ = [
    "COLUMNS",
    "EnergyTrace",
    "weight_a",
    "weight_b",
    "sample_norms",
    "Functionals",
    "compute_functionals",
    "fit_decay",
    "fit_power",
    "write_energy_csv",
    "write_json",
]

# primary columns first; the rest are diagnostics
COLUMNS = (
    "t",
    "eta_m",
    "u_m",
    "Qu_m",
    "Pu_m",
    "PM_m1",
    "psi_m_L2",
    "psi_m1_H1",
    "grad_u_m",
    "grad_eta_m1",
    "grad_Qu_m",
    "psi_m_H1",
    "PM_m",
    "grad_PM_m1",
    "psi_m1_L2",
    "eta_m1",
    "u_m1",
    "Pu_m1",
    "eta_0",
    "grad_eta_0",
    "decomp_residual",
    "mean_eta",
    "mean_M",
    "psi_mass",
    "energy_L2",
    "a",
    "b",
)


def weight_a(t, p: Parameters):
    """``(1 + delta t)^2`` up to ``t = nu``, then ``C_delta nu^2 e^{2 c t / nu}``
    with ``C_delta`` fixed by continuity."""
    t = np.asarray(t, dtype=float)
    nu, dl, c = p.nu, _delta(p), p.c_tilde
    c_delta = (1.0 + dl * nu) ** 2 / (nu**2 * np.exp(2.0 * c))
    with np.errstate(over="ignore"):
        late = c_delta * nu**2 * np.exp(2.0 * c * t / nu)
    out = np.where(t <= nu, (1.0 + dl * t) ** 2, late)
    return out if out.ndim else float(out)


def weight_b(t, p: Parameters):
    """``nu (1 + delta t)`` up to ``t = nu``; exponential branch continued from
    the value at ``t = nu``."""
    t = np.asarray(t, dtype=float)
    nu, dl, c = p.nu, _delta(p), p.c_tilde
    c_b = (1.0 + dl * nu) / (nu * np.exp(2.0 * c))
    with np.errstate(over="ignore"):
        late = c_b * nu**2 * np.exp(2.0 * c * t / nu)
    out = np.where(t <= nu, nu * (1.0 + dl * t), late)
    return out if out.ndim else float(out)


def _delta(p):
    if p.delta is None:
        raise ValueError("delta is unset; run validate_params first")
    return p.delta


def _h1_quadratic(coeffs, L_mat, dim, m):
    """``sum_xi <xi>^{2m} c^H (-L) c (2 pi)^d``."""
    n = coeffs.shape[-1]
    w = (1.0 + np.sum(sp.wavenumbers(dim, n) ** 2, axis=0)) ** m
    flat = coeffs.reshape(coeffs.shape[0], -1)
    q = np.sum((np.conj(flat) * (-L_mat @ flat)).real, axis=0)
    return float(max(np.sum(w.ravel() * q), 0.0) * (2.0 * np.pi) ** dim)


def sample_norms(s: CoupledState, p: Parameters, ops) -> dict:
    """Every monitored quantity of a single state."""
    d, m = s.dim, p.sobolev_m
    nrm = sp.sobolev_norm_coeffs
    k2 = np.sum(sp.wavenumbers(d, s.n) ** 2, axis=0)
    eta, u, c = s.eta.data, s.u.data, s.psi.coeffs
    pu, qu = sp.leray_project(u, d)
    M = momentum(s)
    pm, _ = sp.leray_project(M.data, d)
    eta_phys = s.eta.physical()
    pe_u, _ = sp.leray_project(sp.product(eta_phys[None], s.u.physical(), d), d)
    out = {
        "t": float(s.t),
        "eta_m": nrm(eta, d, m),
        "u_m": nrm(u, d, m),
        "Qu_m": nrm(qu, d, m),
        "Pu_m": nrm(pu, d, m),
        "PM_m1": nrm(pm, d, m - 1),
        "psi_m_L2": nrm(c, d, m),
        "psi_m1_H1": np.sqrt(_h1_quadratic(c, ops.L_mat, d, m - 1)),
        "grad_u_m": nrm(u, d, m, k2),
        "grad_eta_m1": nrm(eta, d, m - 1, k2),
        "grad_Qu_m": nrm(qu, d, m, k2),
        "psi_m_H1": np.sqrt(_h1_quadratic(c, ops.L_mat, d, m)),
        "PM_m": nrm(pm, d, m),
        "grad_PM_m1": nrm(pm, d, m - 1, k2),
        "psi_m1_L2": nrm(c, d, m - 1),
        "eta_m1": nrm(eta, d, m - 1),
        "u_m1": nrm(u, d, m - 1),
        "Pu_m1": nrm(pu, d, m - 1),
        "eta_0": nrm(eta, d, 0),
        "grad_eta_0": nrm(eta, d, 0, k2),
        "decomp_residual": nrm(pu - (pm - pe_u), d, 0),
        "mean_eta": float(eta[(0,) * d].real),
        "mean_M": float(np.max(np.abs(M.mean()))),
        "psi_mass": float(c[(0,) + (0,) * d].real),
        "energy_L2": 0.5 * (nrm(eta, d, 0) ** 2 + nrm(u, d, 0) ** 2 + nrm(c, d, 0) ** 2),
        "a": float(weight_a(s.t, p)),
        "b": float(weight_b(s.t, p)),
    }
    return {k: float(v) for k, v in out.items()}


class EnergyTrace:
    """Time series of monitored norms, one row per sample, strictly increasing in t."""

    def __init__(self, params: Parameters, ops=None):
        self.params = params
        self.ops = ops
        self.columns = {name: [] for name in COLUMNS}
        self.final_state = None

    def __len__(self):
        return len(self.columns["t"])

    def record(self, s: CoupledState):
        if self.ops is None:
            from .core import operators_for

            p = self.params
            self.ops = operators_for(p.dim, p.k, p.rad_order, p.ang_order)
        self.append(sample_norms(s, self.params, self.ops))

    def append(self, row: dict):
        t = row["t"]
        if len(self) and not t > self.columns["t"][-1]:
            raise ValueError(f"sample time {t} does not increase")
        for name in COLUMNS:
            v = row.get(name, np.nan)
            if name not in ("t", "mean_eta", "psi_mass") and v < 0:
                raise ValueError(f"negative norm in column {name}")
            self.columns[name].append(float(v))

    def __getitem__(self, name) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    @property
    def t(self):
        return self["t"]

    @classmethod
    def from_columns(cls, params: Parameters, data: dict):
        """Synthetic trace; missing norm columns are zero and weights are filled in."""
        t = np.asarray(data["t"], dtype=float)
        tr = cls(params)
        for i, ti in enumerate(t):
            row = {name: 0.0 for name in COLUMNS}
            row["a"] = float(weight_a(ti, params))
            row["b"] = float(weight_b(ti, params))
            for name, values in data.items():
                row[name] = float(np.asarray(values, dtype=float)[i])
            tr.append(row)
        return tr

    def prefix(self, count):
        tr = EnergyTrace(self.params, self.ops)
        for name in COLUMNS:
            tr.columns[name] = list(self.columns[name][:count])
        return tr

    def rows(self):
        return [[self.columns[c][i] for c in COLUMNS] for i in range(len(self))]


class Functionals(NamedTuple):
    E_B: float
    E_P: float
    E_I: float
    E_eta: float
    E_I_m: float  # E_I with ||PM||_m inside the dissipation integral


def _trapz(y, t):
    if len(t) < 2:
        return 0.0
    return float(integrate.trapezoid(y, t))


def compute_functionals(trace: EnergyTrace) -> Functionals:
    """``E_B, E_P, E_I, E_eta`` at the last sample; sups are running maxima of the
    weighted squares, integrals use the trapezoid rule on the sample times."""
    if len(trace) == 0:
        raise EmptyTrace("trace has no samples")
    p = trace.params
    t = trace.t
    e = np.exp(2.0 * p.c_tilde * t / p.nu)
    a = trace["a"]
    sq = {k: trace[k] ** 2 for k in COLUMNS if k != "t"}
    e_b = np.max(e * (sq["eta_m"] + sq["u_m"] + sq["psi_m_L2"])) + _trapz(
        e * (p.mu * sq["grad_u_m"] + sq["psi_m_H1"]), t
    )
    e_p = p.nu * np.max(e * (sq["Qu_m"] + sq["eta_m"])) + p.nu**2 * _trapz(e * sq["grad_Qu_m"], t)
    sup_i = np.max(a * (sq["PM_m1"] + sq["psi_m1_L2"]))
    e_i = sup_i + _trapz(a * (sq["grad_PM_m1"] + sq["psi_m1_H1"]), t)
    e_i_m = sup_i + _trapz(a * (sq["PM_m"] + sq["psi_m1_H1"]), t)
    e_eta = _trapz(e * sq["grad_eta_m1"], t)
    return Functionals(*(float(v) for v in (e_b, e_p, e_i, e_eta, e_i_m)))


def fit_decay(t, y, window=0.5) -> float:
    """Least-squares slope of ``-log y`` against ``t`` over the trailing
    ``window`` fraction of the samples (positive means decaying)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 10:
        raise ValueError(f"need at least 10 samples, got {t.size}")
    if np.any(~(y > 0)):
        raise NonPositiveSeries("series must be strictly positive")
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    start = int(np.floor((1.0 - window) * t.size))
    start = min(start, t.size - 2)
    slope = np.polyfit(t[start:], np.log(y[start:]), 1)[0]
    return float(-slope)


def fit_power(nus, values) -> float:
    """Log-log least-squares slope of ``values`` against ``nu``."""
    nus = np.asarray(nus, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.unique(nus).size < 3:
        raise DegenerateAbscissa("need at least 3 distinct nu values")
    if np.any(~(values > 0)) or np.any(~(nus > 0)):
        raise NonPositiveSeries("power fit needs positive abscissae and values")
    return float(np.polyfit(np.log(nus), np.log(values), 1)[0])


def write_energy_csv(trace: EnergyTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for row in trace.rows():
            w.writerow([repr(v) for v in row])


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")
