"""Parameters, state containers and initial data for the perturbation system.

The unknowns are the density perturbation ``eta = rho - 1``, the velocity ``u``
and the polymer perturbation ``psi = Psi - psi_inf``, stored as ``phi = psi/psi_inf``
coefficients in an :class:`~fenelimit.polymer.RBasis`.  Pressure is ``rho^3/3``
(so ``P'(1) = 1``), ``beta = R_0 = 1``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from . import spectral as sp
from .errors import BadGrid, BadParameter, DeltaTooLarge, DensityNonPositive, NonPositiveViscosity
from .polymer import FpOperators, assemble_operators, build_basis, poincare_gap

__all__ = [
    "Parameters",
    "PolymerField",
    "CoupledState",
    "validate_params",
    "operators_for",
    "poincare_constant",
    "make_initial_data",
    "momentum",
    "initial_norm_sum",
    "draw_master",
    "assemble_initial_state",
    "matched_initial_data",
]

SIGMA_MODES = ("full", "corotational")


@dataclass(frozen=True)
class Parameters:
    """Physical constants and numerical configuration.

    ``lam`` is the volume viscosity (``lambda``); ``nu = 2 mu + lam`` is derived.
    ``delta=None`` means "pick the default" during :func:`validate_params`.
    """

    mu: float = 1.0
    lam: float = 98.0
    k: float = 1.0
    dim: int = 2
    grid_n: int = 32
    rad_order: int = 6
    ang_order: int = 4
    dt: float = 0.01
    t_final: float = 1.0
    sobolev_m: int = 3
    c_tilde: float = 0.5
    delta: float | None = None
    sigma_mode: str = "full"
    seed: int = 0
    scheme: int = 1
    nu: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nu", 2.0 * self.mu + self.lam)

    def replace(self, **changes) -> "Parameters":
        changes.pop("nu", None)
        return dataclasses.replace(self, **changes)

    def with_nu(self, nu) -> "Parameters":
        """Same shear viscosity, volume viscosity chosen so that ``2 mu + lam = nu``."""
        return self.replace(lam=float(nu) - 2.0 * self.mu)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("nu")
        return d


@lru_cache(maxsize=16)
def operators_for(dim, k, rad_order, ang_order) -> FpOperators:
    """Cached basis + operator assembly."""
    return assemble_operators(build_basis(dim, k, rad_order, ang_order))


def poincare_constant(p: Parameters) -> float:
    """Measured ``C_P >= 1`` bounding energy by dissipation on the mean-free space.

    Torus side: ``||f|| <= ||grad f||`` with constant ``1/min|xi|^2 = 1``; polymer
    side: the inverse spectral gap of ``-L``.
    """
    ops = operators_for(p.dim, p.k, p.rad_order, p.ang_order)
    torus = 1.0  # smallest non-zero |xi|^2 on the unit-wavenumber torus
    return max(1.0, 1.0 / torus, 1.0 / poincare_gap(ops))


def validate_params(p: Parameters) -> Parameters:
    """Check every invariant; returns a copy with ``nu`` recomputed and ``delta`` filled in."""
    if not (p.mu > 0):
        raise NonPositiveViscosity(f"shear viscosity mu must be > 0, got {p.mu}")
    if not (p.lam > 0):
        raise NonPositiveViscosity(f"volume viscosity lambda must be > 0, got {p.lam}")
    if not (p.k > 0):
        raise BadParameter(f"potential strength k must be > 0, got {p.k}")
    if p.dim not in (2, 3):
        raise BadParameter(f"dim must be 2 or 3, got {p.dim}")
    n = p.grid_n
    if not (isinstance(n, (int, np.integer)) and n >= 8 and n & (n - 1) == 0):
        raise BadGrid(f"grid_n must be a power of two >= 8, got {n}")
    if p.rad_order < 2:
        raise BadParameter(f"rad_order must be >= 2, got {p.rad_order}")
    if p.ang_order < 1:
        raise BadParameter(f"ang_order must be >= 1, got {p.ang_order}")
    if not (p.dt > 0):
        raise BadParameter(f"dt must be > 0, got {p.dt}")
    if p.t_final < 0 or (0 < p.t_final < p.dt):
        raise BadParameter(f"t_final must be 0 or >= dt, got {p.t_final}")
    if int(p.sobolev_m) != p.sobolev_m or p.sobolev_m < 1:
        raise BadParameter(f"sobolev_m must be an integer >= 1, got {p.sobolev_m}")
    if not (0 < p.c_tilde <= 1):
        raise BadParameter(f"c_tilde must lie in (0, 1], got {p.c_tilde}")
    if p.sigma_mode not in SIGMA_MODES:
        raise BadParameter(f"sigma_mode must be one of {SIGMA_MODES}, got {p.sigma_mode!r}")
    if p.scheme not in (1, 2):
        raise BadParameter(f"scheme must be 1 or 2, got {p.scheme}")
    cp = poincare_constant(p)
    limit = p.mu / (4.0 * cp)
    delta = p.delta
    if delta is None:
        delta = min(0.1, p.mu / (8.0 * cp))
    if not (delta > 0):
        raise BadParameter(f"delta must be > 0, got {delta}")
    if delta > limit:
        raise DeltaTooLarge(f"delta={delta} exceeds mu/(4 C_P)={limit:.6g} (C_P={cp:.6g})")
    return p.replace(delta=float(delta), sobolev_m=int(p.sobolev_m))


@dataclass(eq=False)
class PolymerField:
    """Fourier coefficients (in x) of the ``phi`` expansion, shape ``(N_R, n, ..., n)``.

    Coefficient 0 multiplies the constant basis function, so it is the local
    polymer mass perturbation ``int_B psi dR``.
    """

    coeffs: np.ndarray
    basis_ref: str
    dim: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)

    @property
    def size(self):
        return self.coeffs.shape[0]

    def mass(self) -> np.ndarray:
        """Physical-space mass perturbation at every grid point."""
        return sp.to_physical(self.coeffs[0], self.dim)

    def norm(self, m=0) -> float:
        """``||psi||_{m, L^2}`` (orthonormal basis, so a plain coefficient sum)."""
        return sp.sobolev_norm_coeffs(self.coeffs, self.dim, m)

    def copy(self):
        return PolymerField(self.coeffs.copy(), self.basis_ref, self.dim)


@dataclass(eq=False)
class CoupledState:
    t: float
    eta: sp.SpectralField
    u: sp.SpectralField
    psi: PolymerField

    @property
    def dim(self):
        return self.eta.dim

    @property
    def n(self):
        return self.eta.n

    def density(self) -> np.ndarray:
        return 1.0 + self.eta.physical()

    def check_density(self):
        rho = self.density()
        if np.min(rho) <= 0:
            raise DensityNonPositive(f"min density {np.min(rho):.3e} <= 0 at t={self.t}")

    def to_vector(self) -> np.ndarray:
        """Stack ``(eta, u_1..u_d, c_0..c_{N-1})`` along a leading axis."""
        return np.concatenate([self.eta.data[None], self.u.data, self.psi.coeffs], axis=0)

    @classmethod
    def from_vector(cls, y, t, dim, basis_ref):
        return cls(
            float(t),
            sp.SpectralField(y[0].copy(), dim),
            sp.SpectralField(y[1 : 1 + dim].copy(), dim),
            PolymerField(y[1 + dim :].copy(), basis_ref, dim),
        )

    def copy(self):
        return CoupledState(self.t, self.eta.copy(), self.u.copy(), self.psi.copy())

    def resample(self, n_new) -> "CoupledState":
        d = self.dim
        return CoupledState(
            self.t,
            self.eta.resample(n_new),
            self.u.resample(n_new),
            PolymerField(sp.resample(self.psi.coeffs, d, n_new), self.psi.basis_ref, d),
        )

    @classmethod
    def zeros(cls, p: Parameters, basis_ref=None, size=None):
        if basis_ref is None or size is None:
            ops = operators_for(p.dim, p.k, p.rad_order, p.ang_order)
            basis_ref, size = ops.basis.ref, ops.size
        shape = (p.grid_n,) * p.dim
        return cls(
            0.0,
            sp.SpectralField(np.zeros(shape, complex), p.dim),
            sp.SpectralField(np.zeros((p.dim,) + shape, complex), p.dim),
            PolymerField(np.zeros((size,) + shape, complex), basis_ref, p.dim),
        )


def momentum(s: CoupledState) -> sp.SpectralField:
    """``M = (1 + eta) u`` via a physical-space product, dealiased."""
    rho = 1.0 + s.eta.physical()
    return sp.SpectralField(sp.product(rho[None], s.u.physical(), s.dim), s.dim)


def _random_coeffs(rng, dim, n, m, lead=(), with_mean=False):
    k2 = np.sum(sp.wavenumbers(dim, n) ** 2, axis=0)
    with np.errstate(divide="ignore"):
        amp = np.where(k2 > 0, k2 ** (-(m + 2) / 2.0), 1.0 if with_mean else 0.0)
    shape = tuple(lead) + (n,) * dim
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    raw = sp.hermitian_part(raw * amp * sp.dealias_mask(dim, n), dim)
    return raw


@dataclass(eq=False)
class MasterDraw:
    """Unit-norm random ingredients shared by every member of a parameter sweep."""

    p_part: np.ndarray
    q_part: np.ndarray
    eta: np.ndarray
    psi: np.ndarray
    m: int
    dim: int


def draw_master(p: Parameters, ops: FpOperators | None = None) -> MasterDraw:
    """Random smooth fields (spectra ~ |xi|^-(m+2)) with unit H^m norms.

    Depends only on the seed, grid, basis and ``m``, never on the viscosities.
    """
    ops = ops or operators_for(p.dim, p.k, p.rad_order, p.ang_order)
    rng = np.random.default_rng(p.seed)
    d, n, m = p.dim, p.grid_n, p.sobolev_m
    u_raw = _random_coeffs(rng, d, n, m, (d,))
    eta = _random_coeffs(rng, d, n, m)
    psi = _random_coeffs(rng, d, n, m, (ops.size,), with_mean=True)
    degree = np.array([2 * nr + l for (nr, l, _) in ops.basis.labels], dtype=float)
    psi *= ((1.0 + degree) ** -2.0)[(slice(None),) + (None,) * d]
    psi[0] = 0.0
    pu, qu = sp.leray_project(u_raw, d)
    pu[(slice(None),) + (0,) * d] = 0.0

    def unit(a):
        nrm = sp.sobolev_norm_coeffs(a, d, m)
        return a / nrm if nrm > 0 else a

    return MasterDraw(unit(pu), unit(qu), unit(eta), unit(psi), m, d)


def _zero_mode(d):
    return (slice(None),) + (0,) * d


def assemble_initial_state(p: Parameters, draw: MasterDraw, scale: float, basis_ref: str) -> CoupledState:
    """Fields ``scale * (P, nu^-1/2 Q, nu^-1/2 eta, psi)`` with the velocity mean
    chosen so that the momentum has zero mean."""
    d = p.dim
    inv_sqrt_nu = p.nu**-0.5
    eta = scale * inv_sqrt_nu * draw.eta
    u = scale * (draw.p_part + inv_sqrt_nu * draw.q_part)
    # eta has zero mean, so mean(eta u) does not depend on the mean of u
    mean_eta_u = np.sum(eta[None] * np.conj(u), axis=tuple(range(1, d + 1))).real
    u[_zero_mode(d)] = -mean_eta_u
    psi = scale * draw.psi
    return CoupledState(0.0, sp.SpectralField(eta, d), sp.SpectralField(u, d), PolymerField(psi, basis_ref, d))


def initial_norm_sum(s: CoupledState, p: Parameters) -> float:
    """``||u||_m + nu^1/2 ||Qu||_m + nu^1/2 ||eta||_m + ||psi||_{m,L2}``."""
    m, d = p.sobolev_m, p.dim
    _, q = sp.leray_project(s.u.data, d)
    root = np.sqrt(p.nu)
    return (
        sp.sobolev_norm_coeffs(s.u.data, d, m)
        + root * sp.sobolev_norm_coeffs(q, d, m)
        + root * sp.sobolev_norm_coeffs(s.eta.data, d, m)
        + s.psi.norm(m)
    )


def make_initial_data(p: Parameters, eps: float, ops: FpOperators | None = None, draw: MasterDraw | None = None) -> CoupledState:
    """Random smooth initial perturbation whose weighted norm sum equals ``eps``.

    Deterministic in ``p.seed``; the momentum has zero mean, ``eta`` has zero mean
    and the polymer mass coefficient vanishes.
    """
    ops = ops or operators_for(p.dim, p.k, p.rad_order, p.ang_order)
    ref = ops.basis.ref
    if eps == 0:
        return CoupledState.zeros(p, ref, ops.size)
    draw = draw or draw_master(p, ops)

    def excess(scale):
        return initial_norm_sum(assemble_initial_state(p, draw, scale, ref), p) - eps

    linear = initial_norm_sum(assemble_initial_state(p, draw, 1.0, ref), p)
    hi = eps / linear
    while excess(hi) < 0:
        hi *= 2.0
    scale = optimize.brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    return assemble_initial_state(p, draw, scale, ref)


def _unit_solenoidal(p: Parameters, m, stream=1):
    """Mean-free solenoidal field with unit ``H^m`` norm from an independent stream."""
    rng = np.random.default_rng([p.seed, stream])
    raw = _random_coeffs(rng, p.dim, p.grid_n, p.sobolev_m, (p.dim,))
    w, _ = sp.leray_project(raw, p.dim)
    w[_zero_mode(p.dim)] = 0.0
    return w / sp.sobolev_norm_coeffs(w, p.dim, m)


def matched_initial_data(p: Parameters, eps: float, mismatch: float = 1.0, ops=None, draw=None, tol=1e-15):
    """Initial data for comparing the compressible run with its incompressible limit.

    Returns ``(state, v0, phi0)``.  ``v0`` and ``phi0 = psi(0)`` do not depend on
    ``nu`` and satisfy ``||v0||_m + ||phi0||_{m,L2} = eps``.  The compressible
    state has ``eta`` and ``Qu`` of size ``eps nu^-1/2`` and a momentum whose
    solenoidal part is ``v0 + mismatch * eps * nu^-1/2 * w`` with ``w`` a fixed
    unit field in ``H^{m-1}``.
    """
    ops = ops or operators_for(p.dim, p.k, p.rad_order, p.ang_order)
    d, ref = p.dim, ops.basis.ref
    draw = draw or draw_master(p, ops)
    scale = 0.5 * eps
    v0 = scale * draw.p_part
    phi0 = scale * draw.psi
    inv_sqrt_nu = p.nu**-0.5
    eta = scale * inv_sqrt_nu * draw.eta
    qu = scale * inv_sqrt_nu * draw.q_part
    target = v0 + mismatch * eps * inv_sqrt_nu * _unit_solenoidal(p, p.sobolev_m - 1)
    # P[(1 + eta) u] = target with u = Pu + Qu, solved by fixed-point iteration
    eta_phys = sp.to_physical(eta, d)
    pu = target.copy()
    for _ in range(200):
        prod = sp.product(eta_phys[None], sp.to_physical(pu + qu, d), d)
        p_prod, _ = sp.leray_project(prod, d)
        new = target - p_prod
        change = np.max(np.abs(new - pu), initial=0.0)
        pu = new
        if change <= tol * max(np.max(np.abs(target), initial=0.0), 1e-300):
            break
    state = CoupledState(
        0.0,
        sp.SpectralField(eta, d),
        sp.SpectralField(sp.hermitian_part(pu + qu, d), d),
        PolymerField(phi0.copy(), ref, d),
    )
    return state, sp.SpectralField(v0, d), PolymerField(phi0, ref, d)
