"""Galerkin discretisation of the FENE Fokker-Planck operator on the unit ball.

The polymer perturbation is written ``psi = psi_inf * phi`` and ``phi`` is expanded
in polynomials orthonormal for the weight ``psi_inf = (1-|R|^2)^k / Z``.  Each basis
function is a harmonic homogeneous polynomial of degree ``l`` (trigonometric
harmonics in 2D, solid spherical harmonics in 3D) times a Jacobi polynomial in
``s = |R|^2``.  All integrals are computed with a tensor Gauss rule whose radial
part is Gauss-Jacobi in ``s`` for the weight ``(1-s)^(k-1)``, so every integrand
that appears below (including the ones carrying ``grad U = 2kR/(1-s)``) is a
polynomial times the rule's weight and is integrated exactly.

Index conventions: ``(j, k)`` labels the velocity gradient entry ``d_j u_k``;
``stress_vec[j, k, n] = int R_j d_{R_k}U psi_inf phi_n dR`` so that
``tau_jk = sum_n c_n stress_vec[j, k, n]`` and ``(div tau)_k = d_j tau_jk``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from .errors import BasisMismatch, QuadratureOrderTooLow

__all__ = [
    "BallQuadrature",
    "RBasis",
    "FpOperators",
    "ball_quadrature",
    "build_basis",
    "assemble_operators",
    "stress",
    "adjointness_residual",
    "poincare_gap",
    "hardy_ratios",
    "HARDY_CONSTANT",
    "export_operators",
    "load_operator_dump",
]

# Calibrated once against k in {1, 2}, d in {2, 3}, orders up to 12; see tests.
HARDY_CONSTANT = 6.0


@dataclass(frozen=True, eq=False)
class BallQuadrature:
    """Nodes and weights with ``sum w f(R) = int_B f(R) (1-|R|^2)^(k-1) dR``."""

    dim: int
    k: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def s(self):
        return np.sum(self.nodes**2, axis=1)


def _angular_rule(dim, n_ang):
    if dim == 2:
        theta = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        omega = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        w = np.full(n_ang, 2.0 * np.pi / n_ang)
        return omega, w
    n_pol = max(1, n_ang // 2)
    z, wz = special.roots_legendre(n_pol)
    phi = 2.0 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    sin_t = np.sqrt(1.0 - zz**2)
    omega = np.stack([sin_t * np.cos(pp), sin_t * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    w = (wz[:, None] * np.full(n_ang, 2.0 * np.pi / n_ang)[None, :]).reshape(-1)
    return omega, w


def ball_quadrature(dim: int, k: float, n_rad: int, n_ang: int) -> BallQuadrature:
    """Tensor rule on the unit ball for the weight ``(1-|R|^2)^(k-1)``.

    Radial: ``n_rad``-point Gauss-Jacobi in ``x = 2|R|^2 - 1``.  Angular: ``n_ang``
    equispaced angles (2D) or ``n_ang/2`` Gauss-Legendre polar nodes times
    ``n_ang`` azimuths (3D).
    """
    alpha, beta = k - 1.0, dim / 2.0 - 1.0
    x, wx = special.roots_jacobi(n_rad, alpha, beta)
    s = 0.5 * (1.0 + x)
    # int_0^1 g(s)(1-s)^a s^b ds = 2^-(a+b+1) sum wx g, and dR = s^(d/2-1) ds dω / 2
    ws = wx * 2.0 ** (-(alpha + beta + 1.0)) * 0.5
    omega, wa = _angular_rule(dim, n_ang)
    r = np.sqrt(s)
    nodes = (r[:, None, None] * omega[None, :, :]).reshape(-1, dim)
    weights = (ws[:, None] * wa[None, :]).reshape(-1)
    return BallQuadrature(dim, float(k), nodes, weights)


def _exponents(dim, deg):
    return [e for e in itertools.product(range(deg + 1), repeat=dim) if sum(e) == deg]


@lru_cache(maxsize=None)
def _harmonic_polys(dim, l):
    """Monomial exponents and a coefficient matrix whose columns span the
    harmonic homogeneous polynomials of degree ``l``."""
    exps = _exponents(dim, l)
    if l < 2:
        return tuple(exps), np.eye(len(exps))
    low = {e: i for i, e in enumerate(_exponents(dim, l - 2))}
    lap = np.zeros((len(low), len(exps)))
    for col, e in enumerate(exps):
        for i in range(dim):
            if e[i] >= 2:
                f = list(e)
                f[i] -= 2
                lap[low[tuple(f)], col] += e[i] * (e[i] - 1)
    return tuple(exps), linalg.null_space(lap)


def _monomials(points, exps, grad=True):
    """Values ``(npts, nmono)`` and gradients ``(npts, dim, nmono)`` (``None``
    when ``grad`` is false)."""
    npts, dim = points.shape
    E = np.array(exps, dtype=int).reshape(-1, dim)
    top = int(E.max(initial=0))
    # powers[a, :, i] = points[:, i] ** a
    powers = points[None] ** np.arange(top + 1)[:, None, None]
    factors = [powers[E[:, i], :, i] for i in range(dim)]  # each (nmono, npts)
    vals = np.prod(factors, axis=0).T
    if not grad:
        return vals, None
    grads = np.zeros((npts, dim, len(E)))
    for i in range(dim):
        lower = E[:, i, None] * powers[np.maximum(E[:, i] - 1, 0), :, i]
        grads[:, i, :] = np.prod([lower] + factors[:i] + factors[i + 1 :], axis=0).T
    return vals, grads


@dataclass(eq=False)
class RBasis:
    """Orthonormal polynomial basis on the unit ball for the ``psi_inf`` weight.

    ``values[q, n]`` and ``grads[q, :, n]`` tabulate ``phi_n`` and its R-gradient at
    the quadrature nodes.  ``labels[n] = (radial index, degree l, harmonic index)``.
    """

    dim: int
    k: float
    rad_order: int
    ang_order: int
    quad: BallQuadrature
    norm_const: float
    labels: list
    values: np.ndarray
    grads: np.ndarray
    _harm: dict = field(repr=False)
    _polish: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.values.shape[1]

    @property
    def ref(self) -> str:
        return f"ball-d{self.dim}-k{self.k:g}-r{self.rad_order}-a{self.ang_order}"

    @property
    def max_degree(self) -> int:
        return self.ang_order + 2 * (self.rad_order - 1)

    @property
    def psi_weights(self) -> np.ndarray:
        """Weights with ``sum wq f(R_q) = int_B f psi_inf dR``."""
        return self.quad.weights * (1.0 - self.quad.s) / self.norm_const

    def psi_inf(self, points) -> np.ndarray:
        s = np.sum(np.atleast_2d(points) ** 2, axis=1)
        return np.clip(1.0 - s, 0.0, None) ** self.k / self.norm_const

    def evaluate(self, points):
        """Basis values ``(npts, N)`` and gradients ``(npts, dim, N)`` anywhere in B."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals, grads = self._raw(points)
        return vals @ self._polish, np.einsum("qdi,ij->qdj", grads, self._polish)

    def gram(self) -> np.ndarray:
        w = self.psi_weights
        return self.values.T @ (w[:, None] * self.values)

    def _raw(self, points):
        s = np.sum(points**2, axis=1)
        x = 2.0 * s - 1.0
        out_v = np.empty((points.shape[0], len(self.labels)))
        out_g = np.empty((points.shape[0], self.dim, len(self.labels)))
        cache = {}
        for col, (n, l, m) in enumerate(self.labels):
            if l not in cache:
                exps, coef = self._harm[l]
                mv, mg = _monomials(points, exps)
                cache[l] = (mv @ coef, np.einsum("qdc,ch->qdh", mg, coef))
            hv, hg = cache[l]
            beta = l + self.dim / 2.0 - 1.0
            p = special.eval_jacobi(n, self.k, beta, x)
            if n > 0:
                dp = 0.5 * (n + self.k + beta + 1.0) * special.eval_jacobi(n - 1, self.k + 1.0, beta + 1.0, x)
            else:
                dp = np.zeros_like(x)
            out_v[:, col] = hv[:, m] * p
            out_g[:, :, col] = hg[:, :, m] * p[:, None] + (hv[:, m] * dp * 4.0)[:, None] * points
        return out_v, out_g


def _default_quad_sizes(dim, rad_order, ang_order):
    dmax = ang_order + 2 * (rad_order - 1)
    n_rad = dmax + 2
    n_ang = 2 * dmax + 4
    return n_rad, n_ang


def _check_exactness(quad, degree, tol=1e-12):
    """Compare the rule against closed forms on every monomial up to ``degree``."""
    d, k = quad.dim, quad.k
    for deg in range(degree + 1):
        exps = _exponents(d, deg)
        vals, _ = _monomials(quad.nodes, exps, grad=False)
        got = quad.weights @ vals
        scale = quad.weights @ np.abs(vals)
        for e, g, sc in zip(exps, got, scale):
            if any(a % 2 for a in e):
                exact = 0.0
            else:
                ln_sphere = np.log(2.0) + sum(special.gammaln((a + 1) / 2.0) for a in e) - special.gammaln((deg + d) / 2.0)
                ln_rad = np.log(0.5) + special.betaln(deg / 2.0 + d / 2.0, k)
                exact = float(np.exp(ln_sphere + ln_rad))
            if abs(g - exact) > tol * max(sc, abs(exact)):
                raise QuadratureOrderTooLow(
                    f"quadrature not exact for monomial exponent {e}: {g!r} vs {exact!r}"
                )


def build_basis(dim: int, k: float, rad_order: int, ang_order: int, n_rad=None, n_ang=None) -> RBasis:
    """Weighted orthonormal basis with ``rad_order`` radial and ``ang_order + 1``
    angular degrees; the first function is the constant 1."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if k <= 0:
        raise ValueError("k must be positive")
    if rad_order < 1 or ang_order < 0:
        raise ValueError("orders must be >= 1 (radial) and >= 0 (angular)")
    nr_def, na_def = _default_quad_sizes(dim, rad_order, ang_order)
    quad = ball_quadrature(dim, k, n_rad or nr_def, n_ang or na_def)
    dmax = ang_order + 2 * (rad_order - 1)
    _check_exactness(quad, 2 * dmax + 2)

    s = quad.s
    norm_const = float(quad.weights @ (1.0 - s))
    wpsi = quad.weights * (1.0 - s) / norm_const

    harm = {}
    omega, w_ang = _angular_rule(dim, max(4 * ang_order + 4, 8))
    for l in range(ang_order + 1):
        exps, coef = _harmonic_polys(dim, l)
        hv, _ = _monomials(omega, exps)
        hv = hv @ coef
        chol = linalg.cholesky(hv.T @ (w_ang[:, None] * hv), lower=True)
        harm[l] = (exps, linalg.solve_triangular(chol, coef.T, lower=True).T)

    labels = []
    for n in range(rad_order):
        for l in range(ang_order + 1):
            nh = harm[l][1].shape[1]
            labels.extend((n, l, m) for m in range(nh))

    basis = RBasis(dim, float(k), rad_order, ang_order, quad, norm_const, labels,
                   np.empty(0), np.empty(0), harm, np.eye(len(labels)))
    raw_v, raw_g = basis._raw(quad.nodes)
    scale = 1.0 / np.sqrt(wpsi @ raw_v**2)
    raw_v, raw_g = raw_v * scale, raw_g * scale
    gram = raw_v.T @ (wpsi[:, None] * raw_v)
    # lower-triangular polish keeps phi_0 a multiple of the constant
    tri = linalg.inv(linalg.cholesky(gram, lower=True)).T
    basis._polish = np.diag(scale) @ tri
    basis.values = raw_v @ tri
    basis.grads = np.einsum("qdi,ij->qdj", raw_g, tri)
    if basis.values[0, 0] < 0:
        basis._polish[:, 0] *= -1
        basis.values[:, 0] *= -1
        basis.grads[:, :, 0] *= -1
    return basis


@dataclass(eq=False)
class FpOperators:
    """Galerkin matrices of the polymer equation in the basis ``basis``.

    L_mat[i, n]          = -int psi_inf grad phi_i . grad phi_n
    drift_mat[j, k, i, n] = int R_j d_k phi_i phi_n psi_inf      (action of d_j u_k)
    drift_src[j, k, n]    = int R_j d_k phi_n psi_inf            (forcing by d_j u_k)
    stress_vec[j, k, n]   = int R_j d_k U psi_inf phi_n
    mass_vec[n]           = int phi_n psi_inf
    """

    basis: RBasis
    L_mat: np.ndarray
    drift_mat: np.ndarray
    drift_src: np.ndarray
    stress_vec: np.ndarray
    mass_vec: np.ndarray

    @property
    def size(self):
        return self.basis.size

    @property
    def dim(self):
        return self.basis.dim

    def drift_for(self, sigma_mode="full"):
        """Drift operators with the velocity-gradient coupling ``sigma_mode`` applied."""
        if sigma_mode == "full":
            return self.drift_mat, self.drift_src
        if sigma_mode == "corotational":
            dm = 0.5 * (self.drift_mat - self.drift_mat.transpose(1, 0, 2, 3))
            ds = 0.5 * (self.drift_src - self.drift_src.transpose(1, 0, 2))
            return dm, ds
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")


def assemble_operators(basis: RBasis) -> FpOperators:
    """Assemble every operator family by quadrature in weak form (zero-flux
    boundary condition is natural, no boundary terms)."""
    q = basis.quad
    w = q.weights
    wpsi = basis.psi_weights
    V, G, R = basis.values, basis.grads, q.nodes

    L = -np.einsum("q,qdi,qdn->in", wpsi, G, G, optimize=True)
    L = 0.5 * (L + L.T)
    drift_mat = np.einsum("q,qj,qki,qn->jkin", wpsi, R, G, V, optimize=True)
    drift_src = np.einsum("q,qj,qkn->jkn", wpsi, R, G, optimize=True)
    # R_j d_k U psi_inf = 2k R_j R_k (1-s)^(k-1) / Z
    stress_vec = np.einsum("q,qj,qk,qn->jkn", w * (2.0 * basis.k / basis.norm_const), R, R, V, optimize=True)
    mass_vec = wpsi @ V
    return FpOperators(basis, L, drift_mat, drift_src, stress_vec, mass_vec)


def stress(psi, ops: FpOperators):
    """Kramers stress ``tau_jk`` of a polymer field, as a ``(d, d)`` tensor field.

    ``psi`` is a :class:`~fenelimit.core.PolymerField` (coefficients in Fourier
    space) or a bare coefficient array whose first axis is the basis index.
    """
    from .spectral import SpectralField

    coeffs = getattr(psi, "coeffs", psi)
    ref = getattr(psi, "basis_ref", ops.basis.ref)
    if ref != ops.basis.ref or coeffs.shape[0] != ops.size:
        raise BasisMismatch(f"polymer field in basis {ref!r}, operators in {ops.basis.ref!r}")
    tau = np.tensordot(ops.stress_vec, coeffs, axes=([2], [0]))
    return SpectralField(tau, ops.dim)


def adjointness_residual(ops: FpOperators, trace_corrected=True) -> float:
    """Max mismatch between the stress functional and the weak drift forcing.

    Integration by parts gives, for every test function ``phi_n``,
    ``int R_j d_k phi_n psi_inf = -delta_jk int phi_n psi_inf + int R_j d_k U psi_inf phi_n``,
    so the drift forcing is the stress functional up to the divergence term that
    vanishes for solenoidal velocities.  ``stress_vec`` comes from the ``grad U``
    integrand and ``drift_src`` from basis gradients.  With
    ``trace_corrected=False`` the divergence term is not subtracted.
    """
    d = ops.dim
    lhs = ops.stress_vec.copy()
    if trace_corrected:
        lhs -= np.eye(d)[:, :, None] * ops.mass_vec[None, None, :]
    return float(np.max(np.abs(lhs - ops.drift_src)))


def poincare_gap(ops: FpOperators) -> float:
    """Smallest non-zero eigenvalue of ``-L_mat`` (discrete Poincare constant)."""
    ev = np.sort(linalg.eigvalsh(-ops.L_mat))
    return float(ev[1])


def hardy_ratios(ops: FpOperators, n_rad=None, n_ang=None) -> np.ndarray:
    """``int |phi_n psi_inf| / (1-|R|) dR / (1 + ||phi_n||_H1)`` for each n >= 1.

    ``psi_inf/(1-r) = (1-s)^(k-1) (1+r) / Z``, so the rule's own weight absorbs the
    singular factor; ``|phi_n|`` is only piecewise smooth so a finer rule is used.
    """
    b = ops.basis
    nr, na = _default_quad_sizes(b.dim, b.rad_order, b.ang_order)
    quad = ball_quadrature(b.dim, b.k, n_rad or 4 * nr, n_ang or 4 * na)
    vals, _ = b.evaluate(quad.nodes)
    r = np.sqrt(quad.s)
    integral = (quad.weights * (1.0 + r) / b.norm_const) @ np.abs(vals)
    h1 = np.sqrt(np.clip(-np.diag(ops.L_mat), 0.0, None))
    return (integral / (1.0 + h1))[1:]


_DUMP_FIELDS = ("L_mat", "drift_mat", "drift_src", "stress_vec", "mass_vec")


def export_operators(ops: FpOperators, path) -> None:
    """Write every operator array as text blocks, flattened row-major.

    Layout::

        # fenelimit operator dump v1
        # basis <ref> dim <d> k <k> size <N>
        # array <name> shape <s0>x<s1>...
        <one value per line>
        ...
    """
    b = ops.basis
    with open(path, "w") as fh:
        fh.write("# fenelimit operator dump v1\n")
        fh.write(f"# basis {b.ref} dim {b.dim} k {b.k!r} size {b.size}\n")
        for name in _DUMP_FIELDS:
            arr = np.ascontiguousarray(getattr(ops, name))
            fh.write(f"# array {name} shape {'x'.join(map(str, arr.shape))}\n")
            np.savetxt(fh, arr.reshape(-1), fmt="%.17e")


def load_operator_dump(path) -> dict:
    """Read a file written by :func:`export_operators` into a dict of arrays."""
    out, header = {}, {}
    name, shape, buf = None, None, []

    def flush():
        if name is not None:
            out[name] = np.array(buf, dtype=float).reshape(shape)

    with open(path) as fh:
        for line in fh:
            if line.startswith("# array"):
                flush()
                parts = line.split()
                name, shape, buf = parts[2], tuple(int(x) for x in parts[4].split("x")), []
            elif line.startswith("# basis"):
                parts = line.split()
                header = {"ref": parts[2], "dim": int(parts[4]), "k": float(parts[6]), "size": int(parts[8])}
            elif not line.startswith("#") and line.strip():
                buf.append(float(line))
    flush()
    out["header"] = header
    return out
