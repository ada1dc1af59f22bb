"""Linearized generator around equilibrium, mode by mode.

State ordering per Fourier mode is ``(eta_hat, u_hat_1..u_hat_d, c_0..c_{N-1})``.
The velocity gradient maps as ``d_j u_k -> i xi_j u_hat_k``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product as iproduct
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import EigSolverFailure, ZeroMode
from .polymer import FpOperators

__all__ = [
    "ModeOperator",
    "mode_matrices",
    "assemble_mode",
    "eigen_decay",
    "slowest_rate",
    "acoustic_roots",
    "transverse_eigenvalues",
    "slow_rate_sweep",
    "SlowRate",
    "default_xi_set",
    "spectrum_rows",
    "write_spectrum_csv",
    "apply_generator",
    "SYSTEMS",
]

SYSTEMS = ("compressible", "incompressible")


def mode_matrices(xis, p, ops: FpOperators, coupling=True, system="compressible") -> np.ndarray:
    """Batched generator matrices, shape ``(M, S, S)`` with ``S = 1 + d + N_R``.

    ``xis`` has shape ``(M, d)``; the zero mode is allowed here (it gives the
    block ``diag(0, 0, L)``).  ``coupling=False`` drops the stress and drift
    blocks.  ``system="incompressible"`` projects the velocity rows with the
    Leray symbol and removes the density row and column.
    """
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}")
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    M, d = xis.shape
    N = ops.size
    S = 1 + d + N
    k2 = np.sum(xis**2, axis=1)
    A = np.zeros((M, S, S), dtype=complex)
    u = slice(1, 1 + d)
    c = slice(1 + d, S)
    A[:, 0, u] = -1j * xis
    A[:, u, 0] = -1j * xis
    A[:, u, u] = -p.mu * k2[:, None, None] * np.eye(d) - (p.mu + p.lam) * xis[:, :, None] * xis[:, None, :]
    if coupling:
        _, src = ops.drift_for(p.sigma_mode)
        # (div tau)_k = sum_j d_j tau_jk ; forcing sum_jk (d_j u_k) src_jk
        A[:, u, c] = 1j * np.einsum("mj,jkn->mkn", xis, ops.stress_vec)
        A[:, c, u] = 1j * np.einsum("mj,jkn->mnk", xis, src)
    A[:, c, c] = ops.L_mat
    if system == "incompressible":
        safe = np.where(k2 > 0, k2, 1.0)
        P = np.eye(d)[None] - xis[:, :, None] * xis[:, None, :] / safe[:, None, None]
        A[:, u, :] = np.einsum("mkl,mls->mks", P, A[:, u, :])
        A[:, 0, :] = 0.0
        A[:, :, 0] = 0.0
    return A


@dataclass(eq=False)
class ModeOperator:
    """Generator restricted to the single wavevector ``xi``."""

    xi: tuple
    mat: np.ndarray
    nu: float
    dim: int

    @property
    def size(self):
        return self.mat.shape[0]

    @property
    def mass_index(self):
        return 1 + self.dim


def assemble_mode(xi, p, ops: FpOperators, coupling=True, system="compressible") -> ModeOperator:
    xi = tuple(int(v) for v in xi)
    if len(xi) != p.dim:
        raise ValueError(f"wavevector {xi} does not match dim={p.dim}")
    if not any(xi):
        raise ZeroMode("the zero mode carries no dynamics in the linearized system")
    mat = mode_matrices(np.array([xi]), p, ops, coupling, system)[0]
    return ModeOperator(xi, mat, p.nu, p.dim)


def _eigvals(mat):
    try:
        ev = linalg.eigvals(mat)
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigSolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(ev)):
        raise EigSolverFailure("non-finite eigenvalues")
    return ev


def eigen_decay(mode: ModeOperator, include_mass=False, system="compressible") -> np.ndarray:
    """Eigenvalues sorted by descending real part.

    The polymer mass coefficient has an identically zero row (mass is
    conserved), so it contributes a spurious zero eigenvalue; it is removed
    unless ``include_mass``.  For an incompressible mode the density slot is
    removed as well.
    """
    mat = mode.mat
    drop = []
    if not include_mass:
        drop.append(mode.mass_index)
    if system == "incompressible":
        drop.append(0)
    if drop:
        keep = np.setdiff1d(np.arange(mode.size), drop)
        mat = mat[np.ix_(keep, keep)]
    ev = _eigvals(mat)
    order = np.lexsort((-ev.imag, -ev.real))
    return ev[order]


def slowest_rate(mode: ModeOperator, **kw) -> float:
    """``-max Re lambda``: the decay rate of the slowest mode."""
    return float(-eigen_decay(mode, **kw)[0].real)


def acoustic_roots(nu, xi_norm=1.0, pressure_slope=1.0):
    """Roots of ``z^2 + nu |xi|^2 z + P'(1) |xi|^2`` as (slow, fast).

    Computed in the cancellation-free form: slow = 2c/(-b - sqrt(b^2-4c)).
    """
    b = nu * xi_norm**2
    c = pressure_slope * xi_norm**2
    disc = np.sqrt(complex(b * b - 4 * c))
    fast = (-b - disc) / 2.0
    slow = c / fast
    return slow, fast


def transverse_eigenvalues(xi, p, ops: FpOperators, coupling=True) -> np.ndarray:
    """Spectrum of the solenoidal (transverse velocity plus polymer) subsystem."""
    mode = assemble_mode(xi, p, ops, coupling, system="incompressible")
    ev = eigen_decay(mode, system="incompressible")
    # the projected matrix has a zero row for the longitudinal direction
    # (the u component along xi); drop the eigenvalue it generates
    xi_arr = np.asarray(xi, float)
    if np.count_nonzero(xi_arr) >= 1 and p.dim >= 2:
        idx = np.argmin(np.abs(ev))
        ev = np.delete(ev, idx)
    return ev


class SlowRate(NamedTuple):
    nu: float
    rate: float
    xi: tuple


def default_xi_set(dim, kmax=4, half=False):
    """All non-zero integer wavevectors with ``|xi|_inf <= kmax``.

    ``half=True`` keeps one representative of each ``+/- xi`` pair (the other
    is its conjugate).
    """
    out = []
    for xi in iproduct(range(-kmax, kmax + 1), repeat=dim):
        if not any(xi):
            continue
        if half and tuple(-v for v in xi) in out:
            continue
        out.append(xi)
    return out


def slow_rate_sweep(p_list: Sequence, xi_set, ops: FpOperators, coupling=True) -> list:
    """For every parameter set, the smallest decay rate over ``xi_set``.

    Ties (within 1e-9 relative) go to the first wavevector in ``xi_set`` order, so the
    argmin is stable across reruns.
    """
    if len({(q.dim, q.k, q.rad_order, q.ang_order) for q in p_list}) > 1:
        raise ValueError("slow_rate_sweep needs a shared dimension and basis")
    xi_set = [tuple(x) for x in xi_set]
    out = []
    for p in p_list:
        mats = mode_matrices(np.array(xi_set), p, ops, coupling)
        best, arg = np.inf, None
        for xi, mat in zip(xi_set, mats):
            r = slowest_rate(ModeOperator(xi, mat, p.nu, p.dim))
            if r < best * (1 - 1e-9):
                best, arg = r, xi
        out.append(SlowRate(p.nu, float(best), arg))
    return out


def spectrum_rows(p_list: Sequence, xi_set, ops: FpOperators, coupling=True) -> list:
    """Rows ``(nu, xi_1..xi_d, rank, re, im)`` in deterministic order."""
    rows = []
    for p in p_list:
        mats = mode_matrices(np.array(xi_set), p, ops, coupling)
        for xi, mat in zip(xi_set, mats):
            ev = eigen_decay(ModeOperator(tuple(xi), mat, p.nu, p.dim))
            for rank, lam in enumerate(ev):
                rows.append((p.nu, *tuple(int(v) for v in xi), rank, float(lam.real), float(lam.imag)))
    return rows


def write_spectrum_csv(rows, path, dim):
    header = ["nu"] + [f"xi{i + 1}" for i in range(dim)] + ["rank", "re_lambda", "im_lambda"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def apply_generator(y: np.ndarray, p, ops: FpOperators, system="compressible", coupling=True) -> np.ndarray:
    """Apply the linear generator to a stacked coefficient array ``(S, n, ..., n)``."""
    d = p.dim
    n = y.shape[-1]
    from .spectral import wavenumbers

    xis = wavenumbers(d, n).reshape(d, -1).T
    A = mode_matrices(xis, p, ops, coupling, system)
    flat = y.reshape(y.shape[0], -1)
    return np.matmul(A, flat.T[:, :, None])[:, :, 0].T.reshape(y.shape)
