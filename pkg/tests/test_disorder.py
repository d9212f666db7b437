import numpy as np
import pytest

from andersonlab.disorder import (
    SolveError,
    SolveReport,
    choose_method,
    combes_thomas_check,
    dense_hamiltonian,
    dense_resolvent,
    derivative_check,
    normal_stream,
    one_to_q_norm,
    resolvent_column,
    resolvent_columns,
    restrict_realization,
    sample_disorder,
    torus_doubling_check,
)
from andersonlab.lattice import TorusLattice, free_resolvent_column, lp_norm

Z = 1 + 0.3j


@pytest.fixture(scope="module")
def small():
    return sample_disorder(TorusLattice(2, 16), 7, 0)


# --- disorder ----------------------------------------------------------------------------


def test_sampling_is_deterministic():
    lat = TorusLattice(2, 32)
    a, b = sample_disorder(lat, 11, 3), sample_disorder(lat, 11, 3)
    assert np.array_equal(a.values, b.values)
    c = sample_disorder(lat, 11, 4)
    assert np.mean(a.values != c.values) >= 0.99
    assert np.array_equal(normal_stream(11, 3, lat.site_count), a.values.ravel())


def test_sampling_statistics():
    lat = TorusLattice(2, 64)
    g = sample_disorder(lat, 0, 0).values
    n = lat.site_count
    assert abs(g.mean()) <= 5 / np.sqrt(n)
    assert abs(g.var() - 1) <= 10 / np.sqrt(n)


def test_restriction_window():
    big = sample_disorder(TorusLattice(2, 32), 5, 0)
    small = restrict_realization(big, 16)
    for c in [(0, 0), (-8, 7), (3, -5)]:
        assert small.value(c) == big.value(c)


def test_dense_hamiltonian_is_symmetric(small):
    H = dense_hamiltonian(small, 0.5)
    assert np.array_equal(H, H.T)
    assert np.allclose(np.diag(H), 0.5 * small.values.ravel())


# --- resolvent columns -------------------------------------------------------------------


def test_lambda_zero_is_free():
    real = sample_disorder(TorusLattice(2, 64), 0, 0)
    col = resolvent_column(real, Z, 0.0, (2, -3))
    free = free_resolvent_column(real.lattice, Z, (2, -3)).values
    assert np.max(np.abs(col.values - free)) <= 1e-10


def test_iterative_matches_dense(small):
    it = resolvent_column(small, Z, 0.5, (0, 0), method="iterative")
    de = resolvent_column(small, Z, 0.5, (0, 0), method="dense")
    assert it.method in ("bicgstab", "gmres") and de.method == "dense"
    assert np.max(np.abs(it.values - de.values)) <= 1e-9


def test_column_contracts():
    real = sample_disorder(TorusLattice(2, 64), 1, 0)
    assert choose_method(real.lattice) == "iterative"
    eta = Z.imag
    cols, rep = resolvent_columns(real, Z, 0.5, [(0, 0), (5, 5), (-20, 13)])
    assert isinstance(rep, SolveReport) and not rep.failed
    for c in cols:
        assert c.residual <= 1e-10
        n2 = np.sum(np.abs(c.values) ** 2)
        assert abs(eta * n2 - c.diagonal.imag) <= 1e-8 * n2
    assert rep.as_dict()["columns"] == 3


def test_column_symmetry(small):
    R = dense_resolvent(small, Z, 0.5)
    rng = np.random.default_rng(0)
    for _ in range(10):
        i, j = rng.integers(0, 256, 2)
        assert abs(R[i, j] - R[j, i]) <= 1e-8


def test_norm_sandwich(small):
    u = resolvent_column(small, Z, 0.5).values
    for q in (1.0, 1.5, 2.0, 4.0, 10.0):
        assert lp_norm(u, np.inf) <= lp_norm(u, q) * (1 + 1e-12) <= lp_norm(u, 1) * (1 + 1e-12)


def test_solve_error_on_iteration_cap(monkeypatch):
    import andersonlab.disorder as dis

    real = sample_disorder(TorusLattice(2, 64), 0, 0)
    monkeypatch.setattr(dis, "_iteration_cap", lambda *a: 1)
    with pytest.raises(SolveError) as err:
        resolvent_column(real, 1 + 0.01j, 1.0, method="iterative")
    assert len(err.value.history) >= 1


def test_rejects_real_z(small):
    with pytest.raises(ValueError):
        resolvent_column(small, 1.0, 0.5)


# --- norms -------------------------------------------------------------------------------


def test_two_norm_spectral_bound(small):
    est = one_to_q_norm(small, Z, 0.5, 2.0, budget=256)
    assert est.exact
    assert est.value <= 1 / Z.imag


def test_free_one_to_four_norm():
    real = sample_disorder(TorusLattice(2, 64), 0, 0)
    z = 1 + 0.2j
    est = one_to_q_norm(real, z, 0.0, 4.0, budget=4)
    assert est.lower_bound
    free = lp_norm(free_resolvent_column(real.lattice, z).values, 4.0)
    assert abs(est.value - free) <= 1e-9


def test_one_to_four_norm_bound_single_constant():
    lam = 0.4
    lat = TorusLattice(2, 16)
    ratios = []
    for p in (1.8, 2.0, 2.1):
        eta = lam**p
        vals = [one_to_q_norm(sample_disorder(lat, 0, i), complex(1.0, eta), lam, 4.0, budget=lat.site_count).value for i in range(5)]
        ratios.append(np.median(vals) / (lam**2 / eta + 1))
    assert max(ratios) / min(ratios) <= 4.0


# --- derivative identity -------------------------------------------------------------------


def test_derivative_reference(small):
    rep = derivative_check(small, Z, 0.5, (0, 0), (0, 0), (1, 0), eps=1e-5, method="dense")
    assert rep.relative_error <= 1e-3


def test_derivative_first_order(small):
    a = derivative_check(small, Z, 0.5, (0, 0), (2, 1), (1, 0), eps=1e-3, method="dense")
    b = derivative_check(small, Z, 0.5, (0, 0), (2, 1), (1, 0), eps=1e-4, method="dense")
    ratio = b.relative_error / a.relative_error
    assert 0.05 <= ratio <= 0.2


def test_derivative_vanishes_without_coupling(small):
    rep = derivative_check(small, Z, 0.0, (0, 0), (0, 0), (1, 0), eps=1e-4, method="dense")
    assert rep.analytic == 0 and abs(rep.finite_difference) <= 1e-12


def test_derivative_eps_range(small):
    with pytest.raises(ValueError):
        derivative_check(small, Z, 0.5, (0, 0), (0, 0), (1, 0), eps=1e-2)


# --- Combes-Thomas --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def big():
    return sample_disorder(TorusLattice(2, 128), 0, 0)


def test_combes_thomas_free(big):
    fit = combes_thomas_check(big, 1 + 0.5j, 0.0)
    assert fit.passes(0.5)
    assert abs(fit.rate) >= 0.05 * 0.5


def test_combes_thomas_monotone_in_eta(big):
    a = combes_thomas_check(big, 1 + 0.5j, 0.0)
    b = combes_thomas_check(big, 1 + 1.0j, 0.0)
    assert b.rate < a.rate


def test_combes_thomas_with_disorder(big):
    fit = combes_thomas_check(big, 1 + 0.5j, 0.5)
    assert fit.passes(0.5)


def test_combes_thomas_inconclusive():
    real = sample_disorder(TorusLattice(2, 16), 0, 0)
    assert combes_thomas_check(real, 1 + 0.05j, 0.0).inconclusive


# --- torus doubling -----------------------------------------------------------------------


def test_doubling_free_at_threshold():
    # eta L = 40 at E = 1
    assert torus_doubling_check(0, 1 + 1.0j, 0.0, 40).discrepancy <= 1e-8


def test_doubling_free_large_torus():
    assert torus_doubling_check(0, 1 + 0.5j, 0.0, 128).discrepancy <= 1e-8


def test_doubling_shrinks():
    a = torus_doubling_check(0, 1 + 0.5j, 0.5, 16).discrepancy
    b = torus_doubling_check(0, 1 + 0.5j, 0.5, 32).discrepancy
    assert b < a


def test_doubling_window_enforced():
    with pytest.raises(ValueError):
        torus_doubling_check(0, 1 + 0.5j, 0.0, 16, sources=[(7, 0)])
