import numpy as np
import pytest

from fenelimit import core, linear
from fenelimit.errors import ZeroMode

# slow/fast roots of z^2 + nu z + 1 from 30-digit arithmetic
ACOUSTIC = {
    10.0: (-0.10102051443364380361, -9.8989794855663561964),
    100.0: (-0.010001000200050014004, -99.989998999799949986),
    1000.0: (-0.001000001000002000005, -999.998999998999998),
    10000.0: (-0.00010000000100000002, -9999.999899999999),
}


def _params(nu, **kw):
    return core.validate_params(core.Parameters(grid_n=16, **kw).with_nu(nu))


@pytest.mark.parametrize("nu", sorted(ACOUSTIC))
def test_acoustic_roots_match_oracle(nu):
    slow, fast = linear.acoustic_roots(nu)
    assert slow.real == pytest.approx(ACOUSTIC[nu][0], rel=1e-14)
    assert fast.real == pytest.approx(ACOUSTIC[nu][1], rel=1e-14)
    assert slow.imag == 0 and fast.imag == 0


def test_acoustic_roots_at_larger_wavevector():
    slow, _ = linear.acoustic_roots(100.0, xi_norm=np.sqrt(2.0))
    assert slow.real == pytest.approx(-0.010000500050006250875, rel=1e-13)


def test_underdamped_acoustic_pair():
    slow, fast = linear.acoustic_roots(1.0)
    assert slow == pytest.approx(np.conj(fast))
    assert slow.real == pytest.approx(-0.5)


@pytest.mark.parametrize("nu", sorted(ACOUSTIC))
def test_decoupled_longitudinal_block_gives_acoustic_roots(ops2, nu):
    p = _params(nu)
    mode = linear.assemble_mode((1, 0), p, ops2, coupling=False)
    ev = linear.eigen_decay(mode)
    slow, fast = ACOUSTIC[nu]
    got = ev.real
    assert np.min(np.abs(got - slow)) <= 1e-9 * abs(slow)
    assert np.min(np.abs(got - fast)) <= 1e-9 * abs(fast)
    assert abs(slow * nu + 1) <= 0.05


def test_transverse_velocity_decouples_without_polymer(ops2):
    p = _params(100.0)
    mode = linear.assemble_mode((0, 1), p, ops2, coupling=False)
    # the u_1 component is purely transverse for xi = (0, 1)
    assert mode.mat[1, 1] == -p.mu
    ev = linear.transverse_eigenvalues((0, 1), p, ops2, coupling=False)
    assert np.any(ev == -p.mu)


def test_transverse_spectrum_coupled_is_stable(ops2):
    p = _params(100.0)
    for xi in [(1, 0), (1, 1), (2, -3)]:
        ev = linear.transverse_eigenvalues(xi, p, ops2)
        assert np.all(ev.real < 0)


def test_spectrum_closed_under_conjugation(ops2):
    p = _params(100.0)
    a = linear.eigen_decay(linear.assemble_mode((2, 1), p, ops2))
    b = linear.eigen_decay(linear.assemble_mode((-2, -1), p, ops2))
    np.testing.assert_allclose(np.sort_complex(a), np.sort_complex(np.conj(b)), atol=1e-10)


def test_zero_mode_rejected(ops2):
    with pytest.raises(ZeroMode):
        linear.assemble_mode((0, 0), _params(10.0), ops2)


def test_mass_mode_is_conserved(ops2):
    p = _params(100.0)
    mode = linear.assemble_mode((1, 2), p, ops2)
    assert not np.any(mode.mat[mode.mass_index])
    full = linear.eigen_decay(mode, include_mass=True)
    assert np.min(np.abs(full)) < 1e-12
    assert full.size == linear.eigen_decay(mode).size + 1


def test_sweep_decoupled_matches_oracle_argmin(ops2):
    xi_set = linear.default_xi_set(2, 2)
    ps = [_params(nu) for nu in (100.0, 1000.0)]
    res = linear.slow_rate_sweep(ps, xi_set, ops2, coupling=False)
    for r, p in zip(res, ps):
        assert abs(r.rate * p.nu - 1) <= 0.05
        # decoupled oracle: min over |xi| of the slow acoustic root and mu|xi|^2
        best = min(
            min(-linear.acoustic_roots(p.nu, np.linalg.norm(xi))[0].real, p.mu * np.dot(xi, xi), 1.0)
            for xi in xi_set
        )
        assert r.rate == pytest.approx(best, rel=1e-8)
        # the slow root shrinks with |xi| toward 1/nu, so the argmin is at max |xi|
        assert np.dot(r.xi, r.xi) == max(np.dot(x, x) for x in xi_set)
    again = linear.slow_rate_sweep(ps, xi_set, ops2, coupling=False)
    assert [r.xi for r in again] == [r.xi for r in res]


def test_slow_rate_insensitive_to_shear_viscosity(ops2):
    base = linear.slow_rate_sweep([_params(1000.0)], [(1, 0)], ops2)[0].rate
    p = core.validate_params(core.Parameters(grid_n=16, mu=2.0, lam=996.0))
    assert p.nu == 1000.0
    other = linear.slow_rate_sweep([p], [(1, 0)], ops2)[0].rate
    assert abs(other / base - 1) < 0.01


def test_slow_fast_dichotomy(ops2):
    p = _params(1000.0)
    ev = linear.eigen_decay(linear.assemble_mode((1, 0), p, ops2))
    rates = np.sort(-ev.real)
    assert rates[0] < 2.0 / p.nu
    assert rates[-1] > 0.5 * p.nu


def test_spectrum_rows_and_csv(tmp_path, ops2):
    ps = [_params(10.0)]
    xi_set = [(1, 0), (0, 1)]
    rows = linear.spectrum_rows(ps, xi_set, ops2)
    per_mode = 1 + 2 + ops2.size - 1
    assert len(rows) == 2 * per_mode
    assert [r[3] for r in rows[:per_mode]] == list(range(per_mode))
    path = tmp_path / "spectrum.csv"
    linear.write_spectrum_csv(rows, path, 2)
    lines = path.read_text().splitlines()
    assert lines[0] == "nu,xi1,xi2,rank,re_lambda,im_lambda"
    assert len(lines) == len(rows) + 1
    first = lines[1].split(",")
    assert float(first[4]) == rows[0][4]


def test_apply_generator_matches_mode_matrix(ops2):
    p = _params(100.0, seed=3)
    s = core.make_initial_data(p, 0.01, ops2)
    y = s.to_vector()
    out = linear.apply_generator(y, p, ops2)
    idx = (slice(None), 2, 15)  # xi = (2, -1)
    mat = linear.assemble_mode((2, -1), p, ops2).mat
    np.testing.assert_allclose(out[idx], mat @ y[idx], atol=1e-15)
