"""Fourier machinery on the periodic torus [-pi, pi)^d.

Coefficients are Fourier-series coefficients, ``f(x) = sum_xi f_hat(xi) e^{i xi.x}``,
stored on the full ``fftn`` layout.  The grid is ``x_j = 2 pi j / n``, which is the
same torus as [-pi, pi)^d up to a shift.  Leading array axes index components
(scalar: none, vector: ``(d,)``, tensor: ``(d, d)``); the trailing ``d`` axes are
the grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

__all__ = [
    "SpectralField",
    "wavenumbers",
    "dealias_mask",
    "to_spectral",
    "to_physical",
    "dealias",
    "hermitian_part",
    "grad",
    "div",
    "laplacian",
    "product",
    "leray_project",
    "sobolev_norm",
    "sobolev_norm_coeffs",
    "resample",
    "grid_points",
    "product_constant",
]


def _axes(dim):
    return tuple(range(-dim, 0))


@lru_cache(maxsize=None)
def wavenumbers(dim: int, n: int) -> np.ndarray:
    """Integer wavevectors, shape ``(dim, n, ..., n)``."""
    k = np.fft.fftfreq(n, 1.0 / n)
    k = np.rint(k).astype(float)
    grids = np.meshgrid(*([k] * dim), indexing="ij")
    out = np.stack(grids)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _ksq(dim, n):
    out = np.sum(wavenumbers(dim, n) ** 2, axis=0)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def dealias_mask(dim: int, n: int) -> np.ndarray:
    """True where every ``|xi_i| < n/3`` (two-thirds rule)."""
    k = wavenumbers(dim, n)
    mask = np.all(np.abs(k) < n / 3.0, axis=0)
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def grid_points(dim: int, n: int) -> np.ndarray:
    x = 2.0 * np.pi * np.arange(n) / n
    out = np.stack(np.meshgrid(*([x] * dim), indexing="ij"))
    out.setflags(write=False)
    return out


def to_spectral(values, dim):
    values = np.asarray(values)
    n = values.shape[-1]
    return sfft.fftn(values, axes=_axes(dim)) / n**dim


def to_physical(coeffs, dim):
    n = coeffs.shape[-1]
    return np.ascontiguousarray(sfft.ifftn(coeffs, axes=_axes(dim), norm="forward").real)


def dealias(coeffs, dim):
    return coeffs * dealias_mask(dim, coeffs.shape[-1])


def hermitian_part(coeffs, dim):
    """Project onto coefficients of real-valued fields."""
    axes = _axes(dim)
    flipped = np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)
    return 0.5 * (coeffs + np.conj(flipped))


def grad(coeffs, dim):
    """Spectral gradient; a new leading axis of length ``dim`` is prepended."""
    k = wavenumbers(dim, coeffs.shape[-1])
    return 1j * k.reshape((dim,) + (1,) * (coeffs.ndim - dim) + k.shape[1:]) * coeffs[None]


def div(coeffs, dim):
    """Divergence over the first component axis."""
    k = wavenumbers(dim, coeffs.shape[-1])
    kk = k.reshape((dim,) + (1,) * (coeffs.ndim - 1 - dim) + k.shape[1:])
    return np.sum(1j * kk * coeffs, axis=0)


def laplacian(coeffs, dim):
    return -_ksq(dim, coeffs.shape[-1]) * coeffs


def product(a_phys, b_phys, dim):
    """Dealiased spectral coefficients of a pointwise product."""
    return dealias(to_spectral(a_phys * b_phys, dim), dim)


def resample(coeffs, dim, n_new):
    """Zero-pad or truncate coefficients onto an ``n_new`` grid."""
    n = coeffs.shape[-1]
    lead = coeffs.shape[:-dim]
    out = np.zeros(lead + (n_new,) * dim, dtype=complex)
    keep = min(n, n_new)
    half = (keep - 1) // 2
    idx_old = np.r_[0 : half + 1, n - half : n]
    idx_new = np.r_[0 : half + 1, n_new - half : n_new]
    src = coeffs
    for ax in range(dim):
        src = np.take(src, idx_old, axis=len(lead) + ax)
    out[(Ellipsis,) + np.ix_(*([idx_new] * dim))] = src
    return out


def leray_project(coeffs, dim):
    """Split a vector field into solenoidal and gradient parts.

    The zero mode is kept entirely in the solenoidal part.
    """
    n = coeffs.shape[-1]
    k = wavenumbers(dim, n)
    ksq = _ksq(dim, n).copy()
    ksq[(0,) * dim] = 1.0
    kdotf = np.sum(k * coeffs, axis=0)
    q = k * (kdotf / ksq)[None]
    q[(slice(None),) + (0,) * dim] = 0.0
    return coeffs - q, q


def sobolev_norm_coeffs(coeffs, dim, m, extra_weight=None):
    """H^m norm from raw coefficients, summed over all leading components."""
    n = coeffs.shape[-1]
    w = (1.0 + _ksq(dim, n)) ** m
    if extra_weight is not None:
        w = w * extra_weight
    total = np.sum(w * np.abs(coeffs) ** 2) * (2.0 * np.pi) ** dim
    return float(np.sqrt(total))


def sobolev_norm(f: "SpectralField", m) -> float:
    """``sqrt(sum_xi (1+|xi|^2)^m |f_hat|^2 (2 pi)^d)``."""
    return sobolev_norm_coeffs(f.data, f.dim, m)


@lru_cache(maxsize=None)
def product_constant(dim: int, n: int, s: float) -> float:
    """Bound C with ``||fg||_s <= C ||f||_s ||g||_s`` for fields in the dealiased band.

    Uses ``<xi>^s <= 2^(s-1) (<eta>^s + <xi-eta>^s)`` and Cauchy-Schwarz on the
    l1 norm of the coefficients; valid for ``s >= 1``.
    """
    mask = dealias_mask(dim, n)
    ksq = _ksq(dim, n)[mask]
    kappa = np.sqrt(np.sum((1.0 + ksq) ** (-s)))
    return float(2.0 ** max(s, 1.0) * kappa / (2.0 * np.pi) ** (dim / 2.0))


@dataclass(eq=False)
class SpectralField:
    """Scalar, vector or tensor field held by its Fourier coefficients."""

    data: np.ndarray
    dim: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim < self.dim:
            raise ValueError("data has fewer axes than the spatial dimension")

    @classmethod
    def from_physical(cls, values, dim):
        return cls(to_spectral(values, dim), dim)

    @classmethod
    def zeros(cls, dim, n, components=()):
        return cls(np.zeros(tuple(components) + (n,) * dim, dtype=complex), dim)

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    @property
    def components(self) -> tuple:
        return self.data.shape[: -self.dim]

    def physical(self) -> np.ndarray:
        return to_physical(self.data, self.dim)

    def mean(self) -> np.ndarray:
        return self.data[(Ellipsis,) + (0,) * self.dim].real.copy()

    def dealiased(self) -> "SpectralField":
        return SpectralField(dealias(self.data, self.dim), self.dim)

    def is_hermitian(self, tol=1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.data), initial=0.0)))
        return bool(np.max(np.abs(self.data - hermitian_part(self.data, self.dim)), initial=0.0) <= tol * scale)

    def is_dealiased(self) -> bool:
        return not np.any(self.data[..., ~dealias_mask(self.dim, self.n)])

    def resample(self, n_new) -> "SpectralField":
        return SpectralField(resample(self.data, self.dim, n_new), self.dim)

    def norm(self, m=0) -> float:
        return sobolev_norm(self, m)

    def copy(self) -> "SpectralField":
        return SpectralField(self.data.copy(), self.dim)
