from fractions import Fraction

import numpy as np
import pytest
import sympy

from andersonlab.lattice import TorusLattice, free_resolvent_column
from andersonlab.spectra import (
    CriticalSet,
    DispersionTable,
    crossing_integral,
    density_of_states,
    exponents,
    free_diag,
    phi_d,
    phi_d_exponent_at_kappa,
    sigma_distance,
    velocity_density,
)


@pytest.fixture(scope="module")
def table2():
    return DispersionTable.build(2)


# --- critical set ---------------------------------------------------------------------


@pytest.mark.parametrize("d,E,expected", [(2, 0.0, 0.0), (2, 1.0, 1.0), (3, 5.0, 1.0), (2, 5.0, 0.0), (3, 1.5, 0.5)])
def test_sigma_distance(d, E, expected):
    assert sigma_distance(d, E) == pytest.approx(expected)


def test_critical_set_d2():
    assert CriticalSet(2).finite_points == (-4.0, 0.0, 4.0)
    assert 0.0 in CriticalSet(3)
    assert CriticalSet(3).finite_points == (-6.0, -2.0, 0.0, 2.0, 6.0)


# --- density of states, velocity density -----------------------------------------------------


def test_dos_total_mass(table2):
    assert table2.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert DispersionTable.build(3).total_mass() == pytest.approx(1.0, abs=1e-6)


def test_dos_symmetry_and_positivity(table2):
    E = np.linspace(-3.9, 3.9, 79)
    assert np.all(table2.rho(E) >= 0) and np.all(table2.nu(E) >= 0)
    assert np.max(np.abs(table2.rho(E) - table2.rho(-E))) <= 2 * 1e-3
    assert np.max(np.abs(table2.nu(E) - table2.nu(-E))) <= 2 * 1e-3


def test_dos_lower_bound_inside_band(table2):
    E = np.linspace(-3.5, 3.5, 71)
    assert table2.rho(E).min() > 0.05


def test_dos_log_singularity(table2):
    # logarithmic divergence at E = 0 in d = 2
    assert density_of_states(table2, 0.01) > density_of_states(table2, 0.1)


def test_dos_out_of_band(table2):
    assert density_of_states(table2, 4.5) == 0.0
    assert table2.confidence(4.5) == "out-of-band"
    assert table2.confidence(0.005) == "low"
    assert table2.confidence(1.0) == "ok"


def test_velocity_vanishes_at_band_edge(table2):
    assert velocity_density(table2, 3.99) < 0.05 * velocity_density(table2, 2.0)


def test_resolution_stability():
    a = DispersionTable.build(2, 2048)
    b = DispersionTable.build(2, 4096)
    for f in ("rho", "nu"):
        va, vb = float(getattr(a, f)(2.0)), float(getattr(b, f)(2.0))
        assert abs(va - vb) <= 5e-4 * abs(vb)


def test_dos_oracle_values(table2):
    # rho(E) = (1/(2 pi^2)) K(sqrt(1 - E^2/16)) in d = 2 (complete elliptic K, parameter m = k^2)
    from scipy.special import ellipk

    for E in (1.0, 2.0, 3.0):
        exact = ellipk(1 - E**2 / 16) / (2 * np.pi**2)
        assert table2.rho(E) == pytest.approx(exact, rel=2e-3)


# --- free diagonal -------------------------------------------------------------------------


def test_free_diag_herglotz(table2):
    for z in (1 + 0.5j, -2 + 0.1j, 3.5 + 2j, 0.3 + 0.01j):
        phi = free_diag(2, z, table2)
        assert phi.imag > 0
        # rho even in E: phi(-conj z) = -conj phi(z)
        assert free_diag(2, -z.conjugate(), table2) == pytest.approx(-phi.conjugate(), abs=1e-3)


def test_free_diag_matches_torus(table2):
    z = 1 + 0.5j
    torus = free_resolvent_column(TorusLattice(2, 256), z).at()
    assert abs(free_diag(2, z, table2) - torus) <= 1e-4


def test_free_diag_asymptotics(table2):
    z = 1000j
    assert abs(free_diag(2, z, table2) + 1 / z) <= 1e-4 * abs(1 / z)


def test_free_diag_rejects_real_axis(table2):
    with pytest.raises(ValueError):
        free_diag(2, 1.0 + 0j, table2)


# --- crossing integral ------------------------------------------------------------------------


def test_crossing_integral_monotone_and_bounded():
    etas = (0.5, 0.25, 0.125)
    I = [crossing_integral(2, 1 + 1j * e) for e in etas]
    assert I[0] <= I[1] <= I[2]
    scaled = [i * e for i, e in zip(I, etas)]
    assert max(scaled) / min(scaled) <= 2.0


def test_crossing_integral_resolution():
    a = crossing_integral(2, 1 + 0.25j, N=512)
    b = crossing_integral(2, 1 + 0.25j, N=1024)
    assert abs(a - b) <= 0.005 * abs(b)


def test_crossing_integral_rejects_real_axis():
    with pytest.raises(ValueError):
        crossing_integral(2, 1.0 + 0j)


# --- exponent tables ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "d,kappa,p",
    [(2, Fraction(2, 13), Fraction(6)), (3, Fraction(2, 9), Fraction(14, 3)), (4, Fraction(2, 13), Fraction(6))],
)
def test_exponent_table(d, kappa, p):
    assert exponents(d) == (kappa, p)


def test_kappa_d8():
    assert exponents(8)[0] == Fraction(1, 3)
    assert exponents(13)[0] == Fraction(1, 2)


def test_exponent_positivity():
    for d in range(2, 30):
        kappa, p = exponents(d)
        assert kappa > 0
        assert p > 2
        # p_d = 2d/(d-3) crosses 4 at d = 6
        assert (p > 4) == (d < 6)


def test_exponents_reject_d1():
    with pytest.raises(ValueError):
        exponents(1)


def test_phi_d_values():
    lam = 0.3
    assert phi_d(3, lam, lam**2) == pytest.approx(lam**0.75)
    assert phi_d(7, 0.1, 0.01) == pytest.approx(0.1)


def test_phi_d_at_kappa_symbolic():
    lam = sympy.symbols("lam", positive=True)
    for d in (2, 3, 4, 5, 6, 12, 13, 20):
        e = phi_d_exponent_at_kappa(d)
        kappa, _ = exponents(d)
        a = {3: sympy.Rational(3, 4)}.get(d, sympy.Rational(1, 2) if d <= 6 else 1)
        b = {3: sympy.Rational(27, 8)}.get(d, sympy.Rational(13, 4) if d <= 6 else 2)
        expr = lam**a * (lam**2 / lam ** (2 + sympy.Rational(kappa.numerator, kappa.denominator))) ** b
        assert sympy.simplify(sympy.log(expr) / sympy.log(lam)) == sympy.Rational(e.numerator, e.denominator)
        assert e == 0
    # for 7 <= d <= 11 the exponent is (12 - d)/(3d - 12) > 0, so Phi_d -> 0 there
    for d in range(7, 12):
        assert phi_d_exponent_at_kappa(d) == Fraction(12 - d, 3 * d - 12)
