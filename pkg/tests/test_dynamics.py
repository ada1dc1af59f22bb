import numpy as np
import pytest
from scipy.linalg import expm

from fenelimit import core, dynamics, linear
from fenelimit import spectral as sp
from fenelimit.errors import BasisMismatch, DensityNonPositive, NotSolenoidal, SimulationError


def _inner(a, b, d):
    return float(np.sum(np.conj(a) * b).real * (2 * np.pi) ** d)


def _taylor_green(n):
    x = sp.grid_points(2, n)
    v = np.stack([np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])])
    return sp.SpectralField.from_physical(v, 2)


def test_equilibrium_is_stationary(params16, ops2):
    s = core.CoupledState.zeros(params16, ops2.basis.ref, ops2.size)
    ds = dynamics.compressible_rhs(s, ops2, params16)
    assert not np.any(ds.to_vector())


def test_taylor_green_energy_rate(params16, ops2):
    v = _taylor_green(16)
    assert v.norm(0) ** 2 == pytest.approx(2 * np.pi**2, rel=1e-14)
    phi = core.PolymerField(np.zeros((ops2.size, 16, 16), complex), ops2.basis.ref, 2)
    dv, dphi = dynamics.incompressible_rhs(v, phi, ops2, params16)
    rate = _inner(v.data, dv.data, 2)
    assert rate == pytest.approx(-4 * np.pi**2 * params16.mu, abs=1e-10)
    assert np.max(np.abs(sp.div(dv.data, 2))) <= 1e-12


def test_limit_rhs_stays_solenoidal(params16, ops2):
    _, v0, phi0 = core.matched_initial_data(params16, 0.1, 1.0, ops2)
    dv, _ = dynamics.incompressible_rhs(v0, phi0, ops2, params16)
    assert np.max(np.abs(sp.div(dv.data, 2))) <= 1e-12


def test_limit_rhs_rejects_compressible_field(params16, ops2):
    x = sp.grid_points(2, 16)
    v = sp.SpectralField.from_physical(np.stack([np.sin(x[0]), 0 * x[0]]), 2)
    phi = core.PolymerField(np.zeros((ops2.size, 16, 16), complex), ops2.basis.ref, 2)
    with pytest.raises(NotSolenoidal):
        dynamics.incompressible_rhs(v, phi, ops2, params16)
    bad = core.PolymerField(phi.coeffs, "other", 2)
    with pytest.raises(BasisMismatch):
        dynamics.incompressible_rhs(_taylor_green(16), bad, ops2, params16)


def test_polymer_rhs_without_flow_is_relaxation(params16, ops2):
    s = core.make_initial_data(params16, 0.05, ops2)
    s.eta.data[:] = 0
    s.u.data[:] = 0
    ds = dynamics.compressible_rhs(s, ops2, params16)
    want = np.tensordot(ops2.L_mat, s.psi.coeffs, axes=([1], [0]))
    np.testing.assert_allclose(ds.psi.coeffs, want, atol=1e-15)


def test_linearization_residual_is_quadratic(params16, ops2):
    y = core.make_initial_data(params16, 1.0, ops2).to_vector()
    res = []
    amps = [1e-2, 1e-3, 1e-4, 1e-5]
    for a in amps:
        f = dynamics.rhs_vector(a * y, params16, ops2)
        res.append(np.linalg.norm(f - linear.apply_generator(a * y, params16, ops2)))
    slope = np.polyfit(np.log(amps), np.log(res), 1)[0]
    assert slope >= 1.9


def _linear_setup(scheme, dt):
    p = core.validate_params(core.Parameters(grid_n=8, dt=dt, t_final=0.4, scheme=scheme).with_nu(10.0))
    ops = core.operators_for(2, 1.0, 6, 4)
    s = core.make_initial_data(p, 0.1, ops)
    return p, ops, s


def _exact(p, ops, y, t):
    # exact linear flow, mode by mode
    st = dynamics.Stepper(p, ops, scheme=1, linear=True, n=8)
    ym = st._compress(y)
    out = np.stack([expm(t * A) @ ym[:, i] for i, A in enumerate(st.A)], axis=1)
    return st._expand(out, y)


@pytest.mark.parametrize("scheme,local_ratio", [(1, 4.0), (2, 8.0)])
def test_one_step_error_order(scheme, local_ratio):
    # the relaxation spectrum reaches |lambda| ~ 3e3, so the asymptotic
    # regime needs dt |lambda| << 1
    errs = []
    for dt in (1e-5, 5e-6):
        p, ops, s = _linear_setup(scheme, dt)
        st = dynamics.Stepper(p, ops, scheme=scheme, linear=True, n=8)
        y = s.to_vector()
        errs.append(np.linalg.norm(st.advance(y) - _exact(p, ops, y, dt)))
    assert errs[0] / errs[1] == pytest.approx(local_ratio, rel=0.15)


def test_second_order_global_error():
    errs = []
    for dt in (0.02, 0.01):
        p, ops, s = _linear_setup(2, dt)
        tr = dynamics.simulate(p, s, ops, linear=True, stride=1000)
        errs.append(np.linalg.norm(tr.final_state.to_vector() - _exact(p, ops, s.to_vector(), p.t_final)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


@pytest.mark.parametrize("scheme", [1, 2])
def test_linear_energy_never_increases(scheme, ops2):
    p = core.validate_params(core.Parameters(grid_n=16, dt=0.05, t_final=5.0, scheme=scheme))
    s = core.make_initial_data(p, 0.1, ops2)
    tr = dynamics.simulate(p, s, ops2, linear=True, stride=1)
    e = tr["energy_L2"]
    assert np.all(np.diff(e) <= 1e-13)
    assert e[-1] < e[0]


def test_zero_final_time_gives_single_sample(params16, ops2):
    p = params16.replace(t_final=0.0)
    tr = dynamics.simulate(p, core.make_initial_data(p, 0.01, ops2), ops2)
    assert len(tr) == 1 and tr.t[0] == 0.0


def test_zero_data_stays_zero(params16, ops2):
    tr = dynamics.simulate(params16, core.make_initial_data(params16, 0.0, ops2), ops2)
    assert not np.any(tr.final_state.to_vector())
    assert np.all(tr["u_m"] == 0)


def test_nonlinear_run_conserves_means(params16, ops2):
    s0 = core.make_initial_data(params16, 0.05, ops2)
    tr = dynamics.simulate(params16, s0, ops2, stride=1)
    assert np.max(np.abs(tr["mean_eta"])) <= 1e-14
    assert np.max(np.abs(tr["psi_mass"])) <= 1e-14
    assert np.max(tr["mean_M"]) <= 1e-14
    assert tr.t[-1] == pytest.approx(params16.t_final, abs=1e-15)
    assert len(tr) == 11


def test_sampling_stride(params16, ops2):
    p = params16.replace(t_final=0.07)
    tr = dynamics.simulate(p, core.make_initial_data(p, 0.01, ops2), ops2, stride=3)
    np.testing.assert_allclose(tr.t, [0.0, 0.03, 0.06, 0.07], atol=1e-15)


def test_monitors_called(params16, ops2):
    seen = []
    dynamics.simulate(params16, core.make_initial_data(params16, 0.01, ops2), ops2, monitors=[lambda s: seen.append(s.t)])
    assert len(seen) == 3


def test_checkpoint_round_trip(tmp_path, params16, ops2):
    s = core.make_initial_data(params16, 0.02, ops2)
    s.t = 0.37
    path = tmp_path / "state.npz"
    dynamics.save_checkpoint(s, params16, path)
    back, header = dynamics.load_checkpoint(path)
    assert back.t == 0.37 and header["grid_n"] == 16 and header["basis_ref"] == ops2.basis.ref
    assert np.array_equal(back.to_vector(), s.to_vector())
    assert header["params"]["lam"] == params16.lam


def test_field_export(tmp_path, ops2):
    p = core.validate_params(core.Parameters(grid_n=16))
    s = core.make_initial_data(p, 0.02, ops2)
    path = tmp_path / "fields.csv"
    dynamics.export_fields_csv(s, path, max_n=8)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,eta,u1,u2,psi_mass"
    assert len(lines) == 65


def test_density_collapse_reported_with_time(params16, ops2):
    s = core.CoupledState.zeros(params16, ops2.basis.ref, ops2.size)
    x = sp.grid_points(2, 16)
    s.eta = sp.SpectralField.from_physical(-1.2 * np.cos(x[0]), 2)
    with pytest.raises(DensityNonPositive):
        s.check_density()
    with pytest.raises(SimulationError) as info:
        dynamics.simulate(params16, s, ops2)
    assert info.value.t == 0.0


def test_factorization_residual(params16, ops2):
    st = dynamics.Stepper(params16.with_nu(1000.0), ops2)
    assert st.factor_residual <= 1e-12
    with pytest.raises(ValueError):
        dynamics.Stepper(params16, ops2, scheme=3)
