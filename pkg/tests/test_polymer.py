import numpy as np
import pytest

from fenelimit import polymer as pf
from fenelimit.core import operators_for
from fenelimit.errors import BasisMismatch, QuadratureOrderTooLow

# oracle: <|R|^2> under (1-|R|^2)^k on the unit ball is (d/2)/(d/2+k+1) (beta-function ratio)
SECOND_MOMENT = {(2, 1): 1 / 3, (2, 2): 1 / 4, (3, 1): 3 / 7, (3, 2): 1 / 3}


@pytest.fixture(scope="module", params=[(2, 1.0), (2, 2.0), (3, 1.0)])
def ops_any(request):
    d, k = request.param
    return operators_for(d, k, 4, 3) if d == 3 else operators_for(d, k, 6, 4)


def test_gram_is_identity(ops_any):
    g = ops_any.basis.gram()
    assert np.max(np.abs(g - np.eye(len(g)))) <= 1e-12


def test_equilibrium_is_normalized(ops_any):
    assert np.sum(ops_any.basis.psi_weights) == pytest.approx(1.0, abs=1e-12)


def test_constant_mode(ops_any):
    v = ops_any.basis.values[:, 0]
    assert np.ptp(v) < 1e-12
    assert ops_any.mass_vec[0] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(ops_any.mass_vec[1:], 0.0, atol=1e-12)


@pytest.mark.parametrize("d,k", sorted(SECOND_MOMENT))
def test_second_moment(d, k):
    b = pf.build_basis(d, float(k), 3, 2)
    got = np.sum(b.psi_weights * b.quad.s)
    assert got == pytest.approx(SECOND_MOMENT[(d, k)], abs=1e-12)


def test_L_symmetric_negative_semidefinite(ops_any):
    L = ops_any.L_mat
    assert np.max(np.abs(L - L.T)) <= 1e-13
    ev = np.linalg.eigvalsh(L)
    assert ev.max() <= 1e-12
    # kernel is exactly the constant mode
    assert np.sum(np.abs(ev) < 1e-10) == 1
    np.testing.assert_allclose(L @ np.eye(len(L))[0], 0.0, atol=1e-13)


def test_mass_rows_vanish(ops_any):
    assert np.max(np.abs(ops_any.L_mat[0])) <= 1e-13
    assert np.max(np.abs(ops_any.drift_mat[:, :, 0, :])) <= 1e-13
    assert np.max(np.abs(ops_any.drift_src[:, :, 0])) <= 1e-13


def test_equilibrium_stress_is_identity(ops_any):
    d = ops_any.dim
    np.testing.assert_allclose(ops_any.stress_vec[:, :, 0], np.eye(d), atol=1e-12)


@pytest.mark.parametrize("k", [1.0, 2.0])
def test_adjointness(k):
    ops = operators_for(2, k, 6, 4)
    assert pf.adjointness_residual(ops) <= 1e-10


def test_adjointness_without_trace_term_leaves_unit_residual(ops2):
    # the constant mode carries the delta_jk part that only the trace term removes
    assert pf.adjointness_residual(ops2, trace_corrected=False) == pytest.approx(1.0, abs=1e-10)


def test_constant_only_basis_residual():
    ops = pf.assemble_operators(pf.build_basis(2, 1.0, 2, 1))
    only = pf.FpOperators(
        ops.basis, ops.L_mat[:1, :1], ops.drift_mat[:, :, :1, :1], ops.drift_src[:, :, :1],
        ops.stress_vec[:, :, :1], ops.mass_vec[:1],
    )
    assert pf.adjointness_residual(only, trace_corrected=False) == pytest.approx(1.0, abs=1e-12)
    assert pf.adjointness_residual(only) <= 1e-12


def _fine_stress(ops, n):
    b = ops.basis
    nr, na = pf._default_quad_sizes(b.dim, b.rad_order, b.ang_order)
    q = pf.ball_quadrature(b.dim, b.k, 4 * nr, 4 * na)
    vals, _ = b.evaluate(q.nodes)
    w = q.weights * 2 * b.k / b.norm_const * vals[:, n]
    return np.einsum("q,qj,qk->jk", w, q.nodes, q.nodes)


def test_angular_mode_stress_traceless_symmetric(ops2):
    n = ops2.basis.labels.index((0, 2, 0))
    tau = _fine_stress(ops2, n)
    assert abs(np.trace(tau)) < 1e-12
    assert np.max(np.abs(tau - tau.T)) < 1e-12
    assert np.max(np.abs(tau)) > 1e-3
    np.testing.assert_allclose(ops2.stress_vec[:, :, n], tau, atol=1e-12)


def test_stress_of_fields(ops2):
    c = np.zeros((ops2.size, 8, 8), complex)
    assert np.all(pf.stress(c, ops2).data == 0)
    c[0] = 1.0
    tau = pf.stress(c, ops2)
    np.testing.assert_allclose(tau.data[:, :, 3, 5], np.eye(2), atol=1e-12)
    with pytest.raises(BasisMismatch):
        pf.stress(c[:-1], ops2)


def test_poincare_gap_positive_and_stable():
    gaps = [pf.poincare_gap(operators_for(2, 1.0, r, 4)) for r in (4, 6, 8)]
    assert min(gaps) > 0
    for a, b in zip(gaps, gaps[1:]):
        assert abs(a - b) / b <= 0.05


def test_negative_semidefinite_quadratic_form(ops2, rng):
    for _ in range(20):
        c = rng.standard_normal(ops2.size)
        c[0] = 0.0
        assert c @ ops2.L_mat @ c < 0


@pytest.mark.parametrize("d,k", [(2, 1.0), (2, 2.0), (3, 1.0), (3, 2.0)])
def test_hardy_ratios_bounded(d, k):
    ops = operators_for(d, k, 4, 3)
    r = pf.hardy_ratios(ops)
    assert np.all(np.isfinite(r))
    assert np.max(r) <= pf.HARDY_CONSTANT


def test_quadrature_exactness_failure():
    q = pf.ball_quadrature(2, 1.0, 2, 4)
    with pytest.raises(QuadratureOrderTooLow):
        pf._check_exactness(q, 10)
    with pytest.raises(QuadratureOrderTooLow):
        pf.build_basis(2, 1.0, 6, 4, n_rad=3)


def test_corotational_drift_is_antisymmetric(ops2):
    dm, ds = ops2.drift_for("corotational")
    np.testing.assert_allclose(dm, -dm.transpose(1, 0, 2, 3), atol=1e-15)
    # the linear forcing vanishes: the stress functional is symmetric
    assert np.max(np.abs(ds)) < 1e-12


def test_three_dimensional_basis():
    ops = operators_for(3, 1.0, 4, 3)
    labels = ops.basis.labels
    # 2l+1 harmonics per degree
    assert sum(1 for (n, l, m) in labels if n == 0 and l == 2) == 5
    assert pf.adjointness_residual(ops) <= 1e-10


def test_operator_dump_round_trip(ops2, tmp_path):
    path = tmp_path / "ops.txt"
    pf.export_operators(ops2, path)
    data = pf.load_operator_dump(path)
    assert data["header"]["ref"] == ops2.basis.ref
    for name in ("L_mat", "drift_mat", "drift_src", "stress_vec", "mass_vec"):
        np.testing.assert_array_equal(data[name], getattr(ops2, name))
