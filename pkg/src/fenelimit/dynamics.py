"""Right-hand sides and IMEX time stepping for the compressible perturbation
system and its incompressible limit.

The whole linearized generator (viscosity, acoustic coupling, linear stress and
drift forcing, Fokker-Planck relaxation) is treated implicitly mode by mode; the
remainder ``F(y) - A y`` (transport, ``R_u``, nonlinear drift) is explicit.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .core import CoupledState, Parameters, PolymerField
from .errors import DensityNonPositive, FeneError, NotSolenoidal, SimulationError, SolveFailed
from .linear import mode_matrices
from .polymer import FpOperators

__all__ = [
    "compressible_rhs",
    "incompressible_rhs",
    "rhs_vector",
    "Stepper",
    "imex_step",
    "simulate",
    "save_checkpoint",
    "load_checkpoint",
    "export_fields_csv",
]

SOLENOIDAL_TOL = 1e-12


def _phys(a, d):
    return sp.to_physical(a, d)


def _spec(a, d):
    return sp.dealias(sp.to_spectral(a, d), d)


def _polymer_rhs(u_hat, gu_phys, u_phys, c_hat, p, ops, d):
    """Transport, drift and relaxation of the polymer coefficients."""
    D, src = ops.drift_for(p.sigma_mode)
    n = c_hat.shape[-1]
    grid = (n,) * d
    c_phys = _phys(c_hat, d)
    gc = _phys(sp.grad(c_hat, d), d)  # (d, N, grid)
    N = ops.size
    transport = np.sum(u_phys.reshape(d, 1, -1) * gc.reshape(d, N, -1), axis=0)
    g = gu_phys.reshape(d * d, 1, -1)
    # drift: sum_jk g_jk (D_jk c + src_jk)
    dc = (D.reshape(d * d * N, N) @ c_phys.reshape(N, -1)).reshape(d * d, N, -1)
    drift = np.sum(g * dc, axis=0)
    lin_src = src.reshape(d * d, N).T @ g[:, 0, :]
    nonlin = (drift - transport).reshape((ops.size,) + grid)
    lin = lin_src.reshape((ops.size,) + grid)
    return _spec(nonlin + lin, d) + np.tensordot(ops.L_mat, c_hat, axes=([1], [0]))


def _momentum_terms(eta_hat, u_hat, c_hat, p, ops, d, check=True):
    """Spectral derivatives of (eta, u) plus shared physical quantities."""
    eta = _phys(eta_hat, d)
    rho = 1.0 + eta
    if check and np.min(rho) <= 0:
        raise DensityNonPositive(f"min density {np.min(rho):.3e} <= 0")
    u = _phys(u_hat, d)
    gu_hat = sp.grad(u_hat, d)  # gu[j, k] = d_j u_k
    gu = _phys(gu_hat, d)
    div_u = np.trace(gu_hat, axis1=0, axis2=1)
    tau = np.tensordot(ops.stress_vec, c_hat, axes=([2], [0]))
    visc = p.mu * sp.laplacian(u_hat, d) + (p.mu + p.lam) * sp.grad(div_u, d) + sp.div(tau, d)
    grad_eta = sp.grad(eta_hat, d)
    # R_u = -(eta/rho) (viscous + div tau) - eta grad eta, 1/rho pointwise
    adv = np.einsum("jx,jkx->kx", u.reshape(d, -1), gu.reshape(d, d, -1)).reshape(u.shape)
    r_u = -(eta / rho)[None] * _phys(visc, d) - eta[None] * _phys(grad_eta, d)
    du = visc - grad_eta + _spec(r_u - adv, d)
    # continuity in divergence form: -div u - div(eta u); exactly mean-preserving
    deta = -div_u - sp.div(_spec(eta[None] * u, d), d)
    return deta, du, u, gu


def rhs_vector(y, p: Parameters, ops: FpOperators, system="compressible", check=True) -> np.ndarray:
    """Time derivative of a stacked coefficient array ``(eta, u_1..u_d, c...)``."""
    d = p.dim
    eta_hat, u_hat, c_hat = y[0], y[1 : 1 + d], y[1 + d :]
    if system == "incompressible":
        eta_hat = np.zeros_like(eta_hat)
    deta, du, u, gu = _momentum_terms(eta_hat, u_hat, c_hat, p, ops, d, check)
    dc = _polymer_rhs(u_hat, gu, u, c_hat, p, ops, d)
    if system == "incompressible":
        du, _ = sp.leray_project(du, d)
        deta = np.zeros_like(deta)
    out = np.concatenate([deta[None], du, dc], axis=0)
    return sp.dealias(out, d)


def compressible_rhs(s: CoupledState, ops: FpOperators, p: Parameters) -> CoupledState:
    """Derivative of the compressible perturbation system, as a state-shaped object.

    The returned object's ``t`` is the evaluation time.
    """
    _check_basis(s, ops)
    y = rhs_vector(s.to_vector(), p, ops)
    return CoupledState.from_vector(y, s.t, s.dim, s.psi.basis_ref)


def _solenoidal_defect(u_hat, d):
    scale = max(1.0, float(np.max(np.abs(u_hat), initial=0.0)))
    return float(np.max(np.abs(sp.div(u_hat, d)), initial=0.0)) / scale


def incompressible_rhs(v: sp.SpectralField, phi: PolymerField, ops: FpOperators, p: Parameters):
    """``(dv, dphi)`` for the limit system.

    ``dv = P(-v.grad v + div tau) + mu lap v``; the polymer equation is the same
    as in the compressible system with velocity ``v``.
    """
    d = v.dim
    if _solenoidal_defect(v.data, d) > SOLENOIDAL_TOL:
        raise NotSolenoidal(f"div v = {_solenoidal_defect(v.data, d):.3e} exceeds {SOLENOIDAL_TOL}")
    if phi.basis_ref != ops.basis.ref:
        from .errors import BasisMismatch

        raise BasisMismatch(f"polymer field in basis {phi.basis_ref!r}, operators in {ops.basis.ref!r}")
    y = np.concatenate([np.zeros_like(v.data[:1]), v.data, phi.coeffs], axis=0)
    dy = rhs_vector(y, p, ops, system="incompressible")
    return sp.SpectralField(dy[1 : 1 + d], d), PolymerField(dy[1 + d :], phi.basis_ref, d)


def _check_basis(s, ops):
    if s.psi.basis_ref != ops.basis.ref or s.psi.size != ops.size:
        from .errors import BasisMismatch

        raise BasisMismatch(f"state in basis {s.psi.basis_ref!r}, operators in {ops.basis.ref!r}")


# ARS(2,2,2): L-stable, stiffly accurate implicit part
_GAMMA = 1.0 - 1.0 / np.sqrt(2.0)
_DELTA = 1.0 - 1.0 / (2.0 * _GAMMA)


@dataclass(eq=False)
class Stepper:
    """IMEX integrator with per-mode factorizations of ``I - gamma dt A``.

    ``linear=True`` drops the explicit remainder, so the run integrates the
    linearized system.  ``system`` selects the compressible or limit equations.
    """

    params: Parameters
    ops: FpOperators
    scheme: int = 1
    system: str = "compressible"
    linear: bool = False
    n: int | None = None
    _key: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.scheme not in (1, 2):
            raise ValueError(f"scheme must be 1 or 2, got {self.scheme}")
        if self.n is None:
            self.n = self.params.grid_n
        self.refactor()

    @property
    def dt(self):
        return self.params.dt

    @property
    def gamma(self):
        return 1.0 if self.scheme == 1 else _GAMMA

    def refactor(self, params: Parameters | None = None):
        """(Re)build the mode matrices and implicit inverses."""
        if params is not None:
            self.params = params
        p, d, n = self.params, self.params.dim, self.n
        key = (p, self.scheme, self.system, n)
        if key == self._key:
            return
        mask = sp.dealias_mask(d, n)
        self._idx = np.nonzero(mask.ravel())[0]
        xis = sp.wavenumbers(d, n).reshape(d, -1).T[self._idx]
        self.A = mode_matrices(xis, p, self.ops, True, self.system)
        S = self.A.shape[1]
        M = np.eye(S)[None] - self.gamma * p.dt * self.A
        try:
            self.inv = np.linalg.inv(M)
        except np.linalg.LinAlgError as exc:
            raise SolveFailed(str(exc)) from exc
        resid = np.max(np.abs(M @ self.inv - np.eye(S)[None]))
        if not np.isfinite(resid) or resid > 1e-12:
            raise SolveFailed(f"implicit block factorization residual {resid:.3e} > 1e-12")
        self.factor_residual = float(resid)
        self._key = key

    def _compress(self, y):
        return y.reshape(y.shape[0], -1)[:, self._idx]

    def _expand(self, ym, like):
        out = np.zeros(like.shape[0:1] + (like[0].size,), dtype=complex)
        out[:, self._idx] = ym
        return out.reshape(like.shape)

    def _apply(self, mats, ym):
        return np.matmul(mats, ym.T[:, :, None])[:, :, 0].T

    def _explicit(self, y, ym):
        if self.linear:
            return np.zeros_like(ym)
        F = self._compress(rhs_vector(y, self.params, self.ops, self.system))
        return F - self._apply(self.A, ym)

    def advance(self, y):
        """One step on a stacked coefficient array; returns the new array."""
        dt = self.params.dt
        ym = self._compress(y)
        if self.scheme == 1:
            rhs = ym + dt * self._explicit(y, ym)
            new = self._apply(self.inv, rhs)
        else:
            g, dl = _GAMMA, _DELTA
            N1 = self._explicit(y, ym)
            Y2 = self._apply(self.inv, ym + g * dt * N1)
            y2 = self._expand(Y2, y)
            N2 = self._explicit(y2, Y2)
            AY2 = self._apply(self.A, Y2)
            new = self._apply(self.inv, ym + dt * (dl * N1 + (1 - dl) * N2 + (1 - g) * AY2))
        if not np.all(np.isfinite(new)):
            raise SolveFailed("non-finite values after implicit solve")
        out = sp.hermitian_part(self._expand(new, y), self.params.dim)
        if self.system == "incompressible":
            out[0] = 0.0
        elif not self.linear:
            _zero_momentum_mean(out, self.params.dim)
        return out


def _zero_momentum_mean(y, d):
    """Reset the velocity mean so that ``mean((1 + eta) u) = 0``.

    The velocity-form update conserves the momentum mean only up to the
    dealiasing and pointwise ``1/rho`` errors, and the zero mode has no damping,
    so the defect would persist.  ``mean(eta u)`` is exact for band-limited
    fields and independent of the mean of ``u`` because ``eta`` has zero mean.
    """
    zero = (0,) * d
    u = y[1 : 1 + d]
    eta = y[0]
    axes = tuple(range(1, d + 1))
    cross = np.sum(eta[None] * np.conj(u), axis=axes).real - eta[zero].real * u[(slice(None),) + zero].real
    u[(slice(None),) + zero] = -cross / (1.0 + eta[zero].real)


def imex_step(s: CoupledState, stepper: Stepper) -> CoupledState:
    """Advance ``s`` by one time step."""
    _check_basis(s, stepper.ops)
    if s.n != stepper.n or s.dim != stepper.params.dim:
        raise ValueError("state grid does not match the stepper")
    if stepper.system == "compressible" and not stepper.linear:
        s.check_density()
    y = stepper.advance(s.to_vector())
    return CoupledState.from_vector(y, s.t + stepper.params.dt, s.dim, s.psi.basis_ref)


def simulate(p: Parameters, s0: CoupledState, ops: FpOperators, monitors=None, stride=5,
             linear=False, system="compressible", stepper=None):
    """Step from ``s0`` to ``p.t_final``, sampling the energy monitor every
    ``stride`` steps (and at the final time).

    ``monitors`` are extra callables ``f(state)`` invoked at every sample.
    Returns the :class:`~fenelimit.energy.EnergyTrace`; the final state is
    attached as ``trace.final_state``.
    """
    from .energy import EnergyTrace

    stepper = stepper or Stepper(p, ops, scheme=p.scheme, system=system, linear=linear, n=s0.n)
    trace = EnergyTrace(p, ops)
    monitors = list(monitors or [])
    n_steps = int(round(p.t_final / p.dt)) if p.t_final > 0 else 0
    s = s0.copy()

    def sample(state):
        trace.record(state)
        for f in monitors:
            f(state)

    sample(s)
    for i in range(1, n_steps + 1):
        try:
            s = imex_step(s, stepper)
        except FeneError as exc:
            raise SimulationError(f"step {i} failed: {exc}", s.t) from exc
        s.t = s0.t + i * p.dt  # avoid drift from repeated addition
        if i % stride == 0 or i == n_steps:
            sample(s)
    trace.final_state = s
    return trace


def save_checkpoint(s: CoupledState, p: Parameters, path) -> None:
    """Self-describing ``.npz`` blob: JSON header (dims, orders, time) plus arrays."""
    header = {
        "format": "fenelimit-checkpoint-1",
        "t": s.t,
        "dim": s.dim,
        "grid_n": s.n,
        "basis_ref": s.psi.basis_ref,
        "basis_size": s.psi.size,
        "params": p.to_dict(),
    }
    np.savez(path, header=np.array(json.dumps(header, sort_keys=True)), eta=s.eta.data, u=s.u.data, psi=s.psi.coeffs)


def load_checkpoint(path):
    """Returns ``(state, header dict)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        d = header["dim"]
        s = CoupledState(
            float(header["t"]),
            sp.SpectralField(z["eta"], d),
            sp.SpectralField(z["u"], d),
            PolymerField(z["psi"], header["basis_ref"], d),
        )
    return s, header


def export_fields_csv(s: CoupledState, path, max_n=32) -> None:
    """Physical-grid fields (``eta``, ``u_i``, polymer mass) on a coarse grid."""
    if s.n > max_n:
        s = s.resample(max_n)
    d = s.dim
    pts = sp.grid_points(d, s.n).reshape(d, -1)
    eta = s.eta.physical().ravel()
    u = s.u.physical().reshape(d, -1)
    mass = s.psi.mass().ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["eta"] + [f"u{i + 1}" for i in range(d)] + ["psi_mass"])
        for j in range(eta.size):
            w.writerow([repr(float(v)) for v in (*pts[:, j], eta[j], *u[:, j], mass[j])])
