import numpy as np
import pytest

from andersonlab.bumps import C2_LIPSCHITZ
from andersonlab.disorder import normal_stream, sample_disorder
from andersonlab.lattice import TorusLattice, dispersion
from andersonlab.spectral import (
    dense_eig,
    localization_count_bound_check,
    localization_threshold,
    localized_set,
    plancherel_identity_check,
    projection_comparison,
    propagator_moments,
)


@pytest.fixture(scope="module")
def strong16():
    lat = TorusLattice(2, 16)
    return dense_eig(lat, sample_disorder(lat, 0, 0), 50.0)


@pytest.fixture(scope="module")
def free16():
    return dense_eig(TorusLattice(2, 16), None, 0.0)


# --- eigendecomposition -----------------------------------------------------------------


def test_free_spectrum_is_dispersion():
    lat = TorusLattice(2, 8)
    eig = dense_eig(lat, None, 0.0)
    k = np.array(list(np.ndindex(8, 8)))
    omega = np.sort([dispersion(lat, 2 * np.pi * kk / 8) for kk in k])
    assert np.max(np.abs(np.sort(eig.energies) - omega)) <= 1e-10
    assert eig.residual <= 1e-9 and eig.orthonormality_defect <= 1e-10


def test_strong_coupling_gershgorin():
    lat = TorusLattice(2, 8)
    real = sample_disorder(lat, 3, 0)
    eig = dense_eig(lat, real, 50.0)
    g = np.sort(50.0 * real.values.ravel())
    # every eigenvalue lies in a Gershgorin disc of radius 2d around some lam g_x
    dist = np.min(np.abs(eig.energies[:, None] - g[None, :]), axis=1)
    assert np.all(dist <= 4.0)
    assert eig.residual <= 1e-9 and eig.orthonormality_defect <= 1e-10


def test_trace():
    lat = TorusLattice(2, 8)
    real = sample_disorder(lat, 4, 0)
    eig = dense_eig(lat, real, 0.7)
    assert abs(eig.energies.sum() - 0.7 * real.values.sum()) <= 1e-8


def test_size_cap_and_missing_realization():
    with pytest.raises(ValueError):
        dense_eig(TorusLattice(2, 66), None, 0.0)
    with pytest.raises(ValueError):
        dense_eig(TorusLattice(2, 8), None, 0.5)


# --- localization -------------------------------------------------------------------------


def test_plane_waves_not_localized(free16):
    rep = localized_set(free16, 4.0)
    assert rep.count == 0
    assert np.all((rep.masses >= 0) & (rep.masses <= 1))
    assert np.allclose(rep.masses, rep.masses[0])
    assert 0.15 <= rep.masses[0] <= 0.25


def test_strong_disorder_localized(strong16):
    rep = localized_set(strong16, 4.0)
    assert rep.count / 256 >= 0.9


def test_flags_rederivable(strong16):
    rep = localized_set(strong16, 2.0)
    assert np.array_equal(rep.rederive(), rep.flags)
    assert np.array_equal(rep.flags, rep.masses >= localization_threshold(2.0, 2))


def test_fixed_center_masses(strong16):
    free_rep = localized_set(strong16, 3.0)
    fixed = localized_set(strong16, 3.0, x0=(0, 0))
    assert np.all(fixed.masses <= free_rep.masses + 1e-12)


# --- counting bound ---------------------------------------------------------------------------


def test_count_bound_free(free16):
    rep = localization_count_bound_check(free16, 0.3, 0.5, 4.0, x0=(0, 0))
    assert rep.count == 0 and rep.holds and rep.basic_holds


def test_count_bound_strong(strong16):
    E0 = float(np.median(strong16.energies))
    rep = localization_count_bound_check(strong16, E0, 0.5, 4.0, x0=(0, 0), C=64.0)
    assert rep.delta > 0 and rep.D > 0
    assert rep.holds
    assert rep.basic_holds


# --- Plancherel ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def eig8():
    lat = TorusLattice(2, 8)
    return dense_eig(lat, sample_disorder(lat, 0, 0), 0.5)


def test_plancherel_delta(eig8):
    rep = plancherel_identity_check(eig8, eig8.lattice.delta(), 0.3)
    assert rep.converged
    assert rep.gap <= 1e-6


def test_plancherel_eigenvector(eig8):
    j = 17
    psi = eig8.vectors[:, j]
    x = (1, 2)
    expected = abs(psi[eig8.lattice.index(x)]) ** 2
    a = plancherel_identity_check(eig8, psi, 0.3, x)
    b = plancherel_identity_check(eig8, psi, 0.6, x)
    assert a.lhs == pytest.approx(expected / 0.6, rel=1e-10)
    assert a.rhs == pytest.approx(expected / 0.6, rel=1e-6)
    assert b.lhs / a.lhs == pytest.approx(0.5, rel=1e-10)


def test_plancherel_battery():
    lat = TorusLattice(2, 8)
    worst = 0.0
    for seed in range(5):
        eig = dense_eig(lat, sample_disorder(lat, seed, 0), 0.5)
        g = normal_stream(seed, 99, 2 * lat.site_count)
        psi = g[: lat.site_count] + 1j * g[lat.site_count:]
        for eta in (0.05, 0.2, 1.0):
            worst = max(worst, plancherel_identity_check(eig, psi, eta, (0, 0)).gap)
    assert worst <= 1e-6


# --- propagator ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def free32():
    return dense_eig(TorusLattice(2, 32), None, 0.0)


def test_propagator_short_time(free32):
    assert propagator_moments(free32, 0.0).second_moment <= 1e-20
    assert propagator_moments(free32, 1e-4).second_moment <= 1e-6


def test_propagator_unitarity(free32, eig8):
    for T in (0.0, 0.5, 3.0, 40.0):
        assert abs(propagator_moments(free32, T).total_mass - 1) <= 1e-10
        assert abs(propagator_moments(eig8, T).total_mass - 1) <= 1e-10


def test_propagator_ballistic(free32):
    a = propagator_moments(free32, 2.0).second_moment
    b = propagator_moments(free32, 4.0).second_moment
    assert 3.5 <= b / a <= 4.5


def test_propagator_tail_mass(free32):
    m = propagator_moments(free32, 4.0, radius=3.0)
    assert 0 < m.tail_mass < 1


# --- projection comparison -------------------------------------------------------------------


def test_projection_zero_coupling(free16):
    lat = TorusLattice(2, 16)
    eig0 = dense_eig(lat, sample_disorder(lat, 0, 0), 0.0)
    assert projection_comparison(eig0, free16, 1.0, 0.5).distance <= 1e-12


def test_projection_lipschitz_regime():
    lat = TorusLattice(2, 8)
    lam = 0.5
    real = sample_disorder(lat, 0, 0)
    eig = dense_eig(lat, real, lam)
    free = dense_eig(lat, None, 0.0)
    alpha = 40.0
    rep = projection_comparison(eig, free, 1.0, alpha)
    assert rep.distance <= C2_LIPSCHITZ * lam * np.abs(real.values).max() / alpha


def test_projection_linear_in_lambda():
    lat = TorusLattice(2, 32)
    free = dense_eig(lat, None, 0.0)
    medians = []
    for lam in (0.4, 0.2, 0.1):
        ratios = [projection_comparison(dense_eig(lat, sample_disorder(lat, s, 0), lam), free, 1.0, 0.5).distance / lam for s in range(10)]
        medians.append(np.median(ratios))
    assert max(medians) / min(medians) <= 4.0
