"""Exact diagonalisation on small tori and everything built from eigenpairs:
localisation sets, the deterministic counting bound, the Plancherel
time-average identity, propagator moments and spectral-projection
comparisons.  Time averages are done analytically from the eigenexpansion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import integrate

from .bumps import c2_cutoff
from .disorder import DisorderRealization, dense_hamiltonian
from .lattice import LatticeField, TorusLattice

DENSE_EIG_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    lattice: TorusLattice
    lam: float
    seed: int | None
    energies: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)  # columns are eigenvectors, sites in row-major order
    residual: float = 0.0
    orthonormality_defect: float = 0.0

    @property
    def size(self) -> int:
        return len(self.energies)

    def vector(self, j) -> LatticeField:
        return LatticeField(self.lattice, self.vectors[:, j])

    def resolvent_entries(self, z: complex, rows, cols) -> np.ndarray:
        """G(z)_{xy} for flat site indices, G = sum_j psi_j psi_j^* / (E_j - z)."""
        V = self.vectors
        return (V[rows, :] / (self.energies - z)) @ V[cols, :].conj().T


def free_eigenbasis(lattice: TorusLattice):
    """Plane waves e^{-i x.xi}/sqrt(L^d), sorted by omega then lexicographic xi."""
    k = np.array(list(np.ndindex(*lattice.shape)))
    xi = 2 * np.pi * k / lattice.L
    omega = np.sum(2 * np.cos(xi), axis=1)
    order = np.lexsort(tuple(k[:, ::-1].T) + (np.round(omega, 12),))
    coords = np.array(list(np.ndindex(*lattice.shape)))
    phases = np.exp(-1j * coords @ xi[order].T)
    return omega[order], phases / np.sqrt(lattice.site_count)


def _validate(H, E, V):
    resid = float(np.max(np.linalg.norm(H @ V - V * E, axis=0))) if len(E) else 0.0
    gram = V.conj().T @ V
    defect = float(np.max(np.abs(gram - np.eye(len(E)))))
    return resid, defect


def dense_eig(lattice: TorusLattice, realization: DisorderRealization | None, lam: float) -> EigenDecomposition:
    """Full Hermitian eigendecomposition of Delta_L + lam V.

    At lam = 0 the plane-wave basis is returned (lexicographic order within
    degenerate levels) instead of whatever basis LAPACK picks.
    """
    if lattice.site_count > DENSE_EIG_LIMIT:
        raise ValueError(f"dense diagonalisation capped at {DENSE_EIG_LIMIT} sites, got {lattice.site_count}")
    if realization is None:
        if lam != 0:
            raise ValueError("a disorder realization is needed for lam > 0")
        realization = DisorderRealization(lattice, 0, 0, np.zeros(lattice.shape))
    if realization.lattice != lattice:
        raise ValueError("realization lives on a different lattice")
    H = dense_hamiltonian(realization, lam)
    if lam == 0:
        E, V = free_eigenbasis(lattice)
    else:
        E, V = sla.eigh(H)
    resid, defect = _validate(H, E, V)
    return EigenDecomposition(lattice, lam, realization.seed, E, V, resid, defect)


def ball_masses(eig: EigenDecomposition, r: float, x0=None) -> tuple[np.ndarray, np.ndarray]:
    """Per eigenvector ball mass |psi_j|^2_{l2(B_r(x0))}, and its best center.

    With x0 None the mass is maximised over centers by FFT convolution of
    |psi_j|^2 with the ball indicator (torus Euclidean metric).
    """
    lat = eig.lattice
    ball = (lat.torus_distance() <= r).astype(float)
    dens = (np.abs(eig.vectors) ** 2).T.reshape((eig.size,) + lat.shape)
    if x0 is not None:
        mask = (lat.torus_distance(x0) <= r).ravel()
        masses = (np.abs(eig.vectors[mask, :]) ** 2).sum(axis=0)
        return np.clip(masses, 0.0, 1.0), np.full(eig.size, lat.index(lat._position(x0)))
    axes = tuple(range(1, lat.d + 1))
    # ball is symmetric, so correlation equals convolution
    conv = np.fft.ifftn(np.fft.fftn(dens, axes=axes) * np.fft.fftn(ball), axes=axes).real
    flat = conv.reshape(eig.size, -1)
    centers = np.argmax(flat, axis=1)
    masses = flat[np.arange(eig.size), centers]
    return np.clip(masses, 0.0, 1.0), centers


def localization_threshold(r: float, d: int) -> float:
    return 1.0 - r ** (-4.0 * d)


@dataclass(frozen=True)
class LocalizationReport:
    r: float
    d: int
    x0: tuple | None
    energies: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    flags: np.ndarray = field(repr=False)
    window: tuple | None = None

    @property
    def threshold(self) -> float:
        return localization_threshold(self.r, self.d)

    @property
    def count(self) -> int:
        return int(np.sum(self.flags))

    def count_in(self, lo: float, hi: float) -> int:
        inside = (self.energies >= lo) & (self.energies <= hi)
        return int(np.sum(self.flags & inside))

    def spectrum_in(self, lo: float, hi: float) -> int:
        return int(np.sum((self.energies >= lo) & (self.energies <= hi)))

    def rederive(self) -> np.ndarray:
        return self.masses >= self.threshold

    def as_dict(self):
        out = {
            "r": self.r,
            "d": self.d,
            "x0": list(self.x0) if self.x0 is not None else None,
            "threshold": self.threshold,
            "eigenvalues": len(self.energies),
            "localized": self.count,
        }
        if self.window is not None:
            out["window"] = list(self.window)
            out["localized_in_window"] = self.count_in(*self.window)
            out["eigenvalues_in_window"] = self.spectrum_in(*self.window)
        return out


def localized_set(eig: EigenDecomposition, r: float, x0=None, window=None) -> LocalizationReport:
    """Eigenvalues whose ball mass reaches 1 - r^{-4d}."""
    if r < 1:
        raise ValueError("r must be >= 1")
    masses, centers = ball_masses(eig, r, x0)
    flags = masses >= localization_threshold(r, eig.lattice.d)
    return LocalizationReport(
        r, eig.lattice.d, tuple(x0) if x0 is not None else None,
        eig.energies, masses, centers, flags, tuple(window) if window else None,
    )


@dataclass(frozen=True)
class CountBoundReport:
    count: int
    delta: float
    D: float
    bound_factor: float  # (delta eta r^d + r^{-2d} delta^{-1} eta) D
    basic_factor: float  # D eta r^d
    C: float

    @property
    def holds(self) -> bool:
        return self.count <= self.C * self.bound_factor

    @property
    def basic_holds(self) -> bool:
        return self.count <= self.C * self.basic_factor

    @property
    def required_C(self) -> float:
        return self.count / self.bound_factor if self.bound_factor > 0 else (0.0 if self.count == 0 else np.inf)


def localization_count_bound_check(eig: EigenDecomposition, E0: float, eta: float, r: float, x0=None, C: float = 64.0, energy_points: int = 81) -> CountBoundReport:
    """Measure delta and D from the exact resolvent and test the counting bound.

    delta := eta sum_{x in B_r(x0)} |G(E0 + i eta)_{x0 x}|^2 and
    D := sup of |G(E + i eta)_xx| over |x - x0| <= r and E in [E0 - eta, E0 + eta]
    (sampled on ``energy_points`` energies, end points included).
    """
    lat = eig.lattice
    x0 = tuple(lat._position(x0))
    i0 = lat.index(x0)
    ball = np.flatnonzero((lat.torus_distance(x0) <= r).ravel())
    z0 = complex(E0, eta)
    row = eig.resolvent_entries(z0, [i0], ball)[0]
    delta = eta * float(np.sum(np.abs(row) ** 2))
    Vb = eig.vectors[ball, :]
    weights = np.abs(Vb) ** 2
    D = 0.0
    for E in np.linspace(E0 - eta, E0 + eta, energy_points):
        diag = weights @ (1.0 / (eig.energies - complex(E, eta)))
        D = max(D, float(np.max(np.abs(diag))))
    rep = localized_set(eig, r, x0=x0)
    count = rep.count_in(E0 - eta, E0 + eta)
    d = lat.d
    bound = (delta * eta * r**d + r ** (-2 * d) * eta / delta) * D if delta > 0 else np.inf
    return CountBoundReport(count, delta, D, bound, D * eta * r**d, C)


@dataclass(frozen=True)
class PlancherelReport:
    lhs: float
    rhs: float
    gap: float
    converged: bool


def plancherel_identity_check(eig: EigenDecomposition, psi, eta: float, x=None, *, rel_tol: float = 1e-11) -> PlancherelReport:
    """int_0^inf e^{-2 eta t} |e^{-itH} psi(x)|^2 dt  vs  (2 pi)^{-1} int |R(E + i eta) psi(x)|^2 dE.

    Left side in closed form sum_{jk} a_j conj(a_k) / (2 eta + i(E_j - E_k)),
    a_j = <psi_j, psi> psi_j(x).  Right side by adaptive quadrature on
    [-B, B], B = 2d + 6 lam + 10, with both tails mapped to finite intervals
    by E = c +- 1/u and integrated exactly the same way.
    """
    lat = eig.lattice
    vec = psi.values.ravel() if isinstance(psi, LatticeField) else np.asarray(psi).ravel()
    ix = lat.index(lat._position(x))
    E = eig.energies
    a = (eig.vectors.conj().T @ vec) * eig.vectors[ix, :]
    diff = E[:, None] - E[None, :]
    lhs = float(np.real(np.sum(np.outer(a, a.conj()) / (2 * eta + 1j * diff))))

    def amp(e):
        return np.sum(a / (E - e - 1j * eta))

    def integrand(e):
        return abs(amp(e)) ** 2

    B = 2 * lat.d + 6 * eig.lam + 10
    pts = np.sort(E[(E > -B) & (E < B)])
    # split at eigenvalues so every Lorentzian peak sits on a sub-interval edge
    edges = np.concatenate([[-B], np.unique(np.round(pts, 14)), [B]])
    total = 0.0
    ok = True
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        val, err = integrate.quad(integrand, lo, hi, limit=200, epsabs=0.0, epsrel=rel_tol)
        total += val
        ok = ok and err <= 1e-8 * max(abs(val), 1e-300) + 1e-14
    # tails: E = c + s (1/u - 1) maps u in (0, 1] onto [B, inf) (s = +1) or
    # (-inf, -B] (s = -1); |dE| = du/u^2 and the integrand becomes
    # |sum_j a_j / (u (E_j - c + s - i eta) - s)|^2, bounded at u = 0
    for s, c in ((1.0, B), (-1.0, -B)):
        def tail(u, s=s, c=c):
            return abs(np.sum(a / (u * (E - (c - s) - 1j * eta) - s))) ** 2

        val, err = integrate.quad(tail, 0.0, 1.0, limit=200, epsabs=0.0, epsrel=rel_tol)
        total += val
    rhs = total / (2 * np.pi)
    gap = abs(lhs - rhs) / abs(lhs) if lhs else abs(rhs)
    return PlancherelReport(lhs, rhs, float(gap), ok)


@dataclass(frozen=True)
class PropagatorMoments:
    T: float
    second_moment: float
    tail_mass: float
    total_mass: float
    radius: float


def propagator_moments(eig: EigenDecomposition, T: float, x0=None, radius: float = np.inf) -> PropagatorMoments:
    """(1/T) int_0^T sum_x |x - x0|^2 |(e^{-itH})_{x0 x}|^2 dt and the mass at |x - x0| >= radius."""
    lat = eig.lattice
    x0 = lat._position(x0)
    i0 = lat.index(x0)
    E = eig.energies
    V = eig.vectors
    B = V * V[i0, :].conj()[None, :]  # B_{xj} = psi_j(x) conj(psi_j(x0))
    if T <= 0:
        P = np.abs(B.sum(axis=1)) ** 2
    else:
        diff = E[:, None] - E[None, :]
        arg = T * diff
        with np.errstate(invalid="ignore", divide="ignore"):
            F = np.where(np.abs(arg) < 1e-12, 1.0 + 0j, (1.0 - np.exp(-1j * arg)) / (1j * arg))
        P = np.real(np.sum((B @ F) * B.conj(), axis=1))
    dist = lat.torus_distance(x0).ravel()
    return PropagatorMoments(
        T=T,
        second_moment=float(np.sum(dist**2 * P)),
        tail_mass=float(np.sum(P[dist >= radius])),
        total_mass=float(np.sum(P)),
        radius=radius,
    )


def spectral_function(eig: EigenDecomposition, E: float, alpha: float, chi=c2_cutoff) -> np.ndarray:
    """chi((A - E)/alpha) as a dense matrix."""
    vals = chi((eig.energies - E) / alpha)
    return (eig.vectors * vals) @ eig.vectors.conj().T


@dataclass(frozen=True)
class ProjectionComparison:
    distance: float
    lam: float
    alpha: float
    ratio: float  # distance / (lam alpha^{-1/2})


def projection_comparison(eig_H: EigenDecomposition, eig_free: EigenDecomposition, E: float, alpha: float, chi=c2_cutoff) -> ProjectionComparison:
    """|chi((H - E)/alpha) - chi((Delta - E)/alpha)|_{2->2}; chi defaults to the C^2 cutoff."""
    diff = spectral_function(eig_H, E, alpha, chi) - spectral_function(eig_free, E, alpha, chi)
    dist = float(np.linalg.norm(diff, 2))
    lam = eig_H.lam
    ratio = dist / (lam * alpha ** -0.5) if lam > 0 else 0.0
    return ProjectionComparison(dist, lam, alpha, ratio)
