import numpy as np
import pytest

from andersonlab.bumps import RadialBump
from andersonlab.lattice import TorusLattice, free_resolvent_column, free_resolvent_multiplier
from andersonlab.sce import (
    SCEConvergenceError,
    build_kernel,
    build_M,
    elliptic_green,
    kernel_symbol_check,
    neumann_profile,
    neumann_tail_bound,
    newton_constant,
    profile_apply,
    radial_profile_phi,
    rescaled_elliptic_green,
    solve_radial_elliptic_origin,
    solve_theta,
    transport_coefficients,
    transport_from_params,
)
from andersonlab.spectra import DispersionTable


@pytest.fixture(scope="module")
def table2():
    return DispersionTable.build(2)


@pytest.fixture(scope="module")
def setup():
    lat = TorusLattice(2, 64)
    sol = solve_theta(2, 1 + 0.25j, 0.5, lat)
    M = build_M(sol, lat)
    kern = build_kernel(M)
    return lat, sol, M, kern


# --- fixed point ---------------------------------------------------------------------


def test_lambda_zero_is_free_diagonal():
    lat = TorusLattice(2, 64)
    sol = solve_theta(2, 1 + 0.25j, 0.0, lat)
    assert sol.iterations == 1
    assert abs(sol.theta - free_resolvent_column(lat, 1 + 0.25j).at()) <= 1e-12


def test_reference_fixed_point():
    sol = solve_theta(2, 1 + 0.25j, 0.5, 1024)
    assert sol.theta.imag > 0
    assert abs(sol.theta) <= 2
    assert sol.residual <= 1e-12 * max(1, abs(sol.theta))
    assert sol.theta == pytest.approx(-0.19786 + 0.43990j, abs=1e-5)


def test_restart_from_other_point():
    a = solve_theta(2, 1 + 0.25j, 0.5, 256)
    b = solve_theta(2, 1 + 0.25j, 0.5, 256, w0=2j)
    c = solve_theta(2, 1 + 0.25j, 0.5, 256, aitken=True)
    assert abs(a.theta - b.theta) <= 1e-10
    assert abs(a.theta - c.theta) <= 1e-10


def test_rejects_real_axis_and_reports_nonconvergence():
    with pytest.raises(ValueError):
        solve_theta(2, 1.0 + 0j, 0.5, 64)
    with pytest.raises(SCEConvergenceError) as err:
        solve_theta(2, 1 + 0.01j, 0.5, 64, max_iter=3)
    assert err.value.iterations == 3 and err.value.residual > 0


# --- M and the kernel -----------------------------------------------------------------


def test_M00_is_theta(setup):
    _, sol, M, _ = setup
    assert abs(M.kernel.flat[0] - sol.theta) <= 1e-11


def test_M_at_lambda_zero_is_free():
    lat = TorusLattice(2, 16)
    M = build_M(solve_theta(2, 1 + 0.3j, 0.0, lat), lat)
    assert np.max(np.abs(M.symbol - free_resolvent_multiplier(lat, 1 + 0.3j).symbol)) <= 1e-14


def test_M_ward_identity(setup):
    _, sol, M, _ = setup
    lhs = sol.effective_eta * np.sum(np.abs(M.kernel) ** 2)
    assert abs(lhs - M.kernel.flat[0].imag) <= 1e-10


def test_kernel_mass_identity(setup):
    _, sol, _, kern = setup
    g = sol.lam**2 * sol.theta.imag
    assert abs(kern.walk_mass() - g / (g + sol.eta)) <= 1e-10
    assert abs((1 - kern.walk_mass()) - sol.eta / (g + sol.eta)) <= 1e-10


def test_kernel_symmetries(setup):
    _, _, _, kern = setup
    K = kern.values
    assert np.all(K >= 0)
    reflected = np.roll(K[::-1, ::-1], 1, axis=(0, 1))
    assert np.max(np.abs(K - reflected)) <= 1e-13
    assert np.max(np.abs(K - np.roll(K[::-1, :], 1, axis=0))) <= 1e-13
    assert np.max(np.abs(K - K.T)) <= 1e-13


# --- transport coefficients -------------------------------------------------------------


def test_mass_closed_form(setup, table2):
    _, _, _, kern = setup
    c = transport_coefficients(kern, table2)
    assert c.m > 0 and c.vartheta > 0
    assert abs(c.m - c.m_closed) <= 1e-9 * c.m_closed


def test_lattice_too_small_flag(table2, trend):
    assert transport_from_params(2, 1.0, 0.01, 0.1, 16, table2).lattice_too_small
    assert not trend[0].lattice_too_small


@pytest.fixture(scope="module")
def trend(table2):
    # eta = lam^2 keeps lam^2 Im theta / eta of order one, so these gaps need not shrink
    # at accessible lam; see the trend tests below
    return [transport_from_params(2, 1.0, lam**2, lam, 512, table2) for lam in (0.5, 0.35, 0.25)]


def test_mass_trend_towards_prediction(trend):
    gaps = [c.m_gap for c in trend]
    assert gaps[0] > gaps[1] > gaps[2], gaps


def test_diffusion_constant_trend_towards_prediction(trend):
    gaps = [c.vartheta_gap for c in trend]
    assert gaps[0] > gaps[1] > gaps[2], gaps


def test_predictions_are_consistent(trend):
    c = trend[0]
    assert c.m_pred == pytest.approx(1 / c.rho_tilde)
    assert c.vartheta_pred == pytest.approx(np.pi / 8 * c.nu / c.rho_tilde**3)
    assert c.beta_E == pytest.approx(1 / c.vartheta_pred)


# --- symbol expansion --------------------------------------------------------------------


@pytest.fixture(scope="module")
def symbol_setup(table2):
    lam = 0.4
    lat = TorusLattice(2, 256)
    sol = solve_theta(2, complex(1.0, lam**2.1), lam, lat)
    kern = build_kernel(build_M(sol, lat))
    return kern, transport_coefficients(kern, table2), lam


def test_symbol_at_zero_and_odd_moments(symbol_setup):
    kern, coeffs, _ = symbol_setup
    rep = kernel_symbol_check(kern, coeffs)
    assert rep.zero_error <= 1e-12
    assert rep.max_imag <= 1e-12


def test_symbol_quartic_remainder(symbol_setup):
    kern, coeffs, lam = symbol_setup
    rep = kernel_symbol_check(kern, coeffs, xi_max=lam**2)
    assert len(rep.remainders) > 0 and np.isfinite(rep.fitted_C)
    assert rep.max_violation == 0.0
    assert len(rep.doubling_ratios) > 0
    assert np.all(rep.doubling_ratios <= 16 * 1.2)


# --- profile operator ------------------------------------------------------------------


def test_profile_of_constant(setup):
    _, _, _, kern = setup
    out = profile_apply(kern, 1.0).values
    expected = kern.mass() / (1 - kern.walk_mass())
    assert np.max(np.abs(out - expected)) <= 1e-10 * expected


def test_profile_positivity_and_monotonicity(setup):
    lat, _, _, kern = setup
    bump = RadialBump("smooth", 3.0).sample(lat)
    out = profile_apply(kern, bump).values
    assert out.min() > 0
    rng = np.random.default_rng(1)
    a = rng.random(lat.shape)
    b = a + rng.random(lat.shape)
    diff = profile_apply(kern, b).values - profile_apply(kern, a).values
    assert diff.min() >= -1e-12 * np.abs(diff).max()


def test_profile_matches_neumann_sum():
    lam = 0.2
    lat = TorusLattice(2, 64)
    sol = solve_theta(2, complex(1.0, lam**1.5), lam, lat)
    kern = build_kernel(build_M(sol, lat))
    a = RadialBump("smooth", 4.0).sample(lat)
    exact = profile_apply(kern, a).values
    approx = neumann_profile(kern, a, terms=12).values
    rel = np.max(np.abs(exact - approx)) / np.max(np.abs(exact))
    assert rel <= neumann_tail_bound(kern, terms=12)


# --- continuum elliptic problem ------------------------------------------------------------


@pytest.fixture(scope="module")
def coeffs(setup, table2):
    return transport_coefficients(setup[3], table2)


def test_elliptic_zero_source(coeffs):
    assert elliptic_green(coeffs, RadialBump("smooth", 1.0, 0.0)) == 0.0


def test_elliptic_resolution_doubling(coeffs):
    f = RadialBump("smooth", 0.5)
    a = elliptic_green(coeffs, f, n=16)
    b = elliptic_green(coeffs, f, n=32)
    assert abs(a - b) <= 1e-6 * abs(b)


def test_elliptic_matches_real_space_quadrature(coeffs):
    f = RadialBump("smooth", 0.5)
    a, b = coeffs.vartheta / coeffs.lam**4, coeffs.eta * coeffs.m / coeffs.lam**2
    direct = solve_radial_elliptic_origin(a, b, f, 2) / coeffs.lam**2
    assert abs(elliptic_green(coeffs, f) - direct) <= 1e-6 * abs(direct)


def test_elliptic_rescaling(coeffs):
    f0 = RadialBump("smooth", 1.0)
    ell = 7.0
    alpha = coeffs.lam * ell * np.sqrt(coeffs.eta)
    y = np.array([0.0, 0.3, 0.8])
    u = elliptic_green(coeffs, f0.rescaled(ell), ell * y)
    ut = rescaled_elliptic_green(coeffs, f0, alpha, y)
    assert np.max(np.abs(u - coeffs.lam**2 * ell**2 * ut)) <= 1e-10 * np.max(np.abs(u))


def test_phi_small_r_quadratic():
    c = transport_from_params(3, 1.0, 0.09, 0.3, 16)
    rs = (0.01, 0.02, 0.04)
    C = max(radial_profile_phi(c, r) / r**2 for r in rs)
    assert radial_profile_phi(c, 0.01) <= C * 0.01**2
    ratios = [radial_profile_phi(c, 2 * r) / radial_profile_phi(c, r) for r in rs[:2]]
    assert all(3.5 <= q <= 4.5 for q in ratios)


def test_phi_large_r_limit(coeffs):
    # the Green's function integrates to 1/m_pred = pi rho
    assert abs(radial_profile_phi(coeffs, 20.0) - coeffs.rho_tilde) <= 1e-3


def test_phi_monotone(coeffs):
    vals = [radial_profile_phi(coeffs, r) for r in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        radial_profile_phi(coeffs, 0.0)


def test_newton_constant():
    assert newton_constant(2) == pytest.approx(1 / (2 * np.pi))
    assert newton_constant(3) == pytest.approx(1 / (4 * np.pi))
