"""Dispersion integrals: density of states, velocity density, the free
diagonal, the crossing integral I4 and the exponent tables.

Densities are normalised so that rho integrates to one (rho is the
push-forward of the normalised Haar measure on the Brillouin torus under
omega).  Note that with this normalisation Im of the free diagonal tends to
pi * rho(E) as eta -> 0; see ``sce`` for how the transport predictions use
that combination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

DEFAULT_RESOLUTION = {2: 2048, 3: 256}
DEFAULT_BIN_WIDTH = 1e-2
_PAD = 3


@dataclass(frozen=True)
class CriticalSet:
    """Band edges, critical values (2d + 4Z) in [-2d, 2d], and the point 0."""

    d: int

    @property
    def band_edge(self) -> float:
        return 2.0 * self.d

    @property
    def finite_points(self) -> tuple[float, ...]:
        crit = {float(2 * self.d - 4 * k) for k in range(self.d + 1)}
        crit.add(0.0)
        return tuple(sorted(crit))

    def distance(self, E: float) -> float:
        if abs(E) >= self.band_edge:
            return 0.0
        return float(min(abs(E - c) for c in self.finite_points))

    def __contains__(self, E) -> bool:
        return self.distance(E) == 0.0


def sigma_distance(d: int, E: float) -> float:
    """dist(E, Sigma_d)."""
    return CriticalSet(d).distance(E)


def _bspline_weights(f):
    """Cubic B-spline weights for node offsets -1, 0, 1, 2 at fraction f."""
    f2 = f * f
    f3 = f2 * f
    return (
        (1.0 - f) ** 3 / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    )


@dataclass(frozen=True)
class DispersionTable:
    """Binned push-forward of the dual-grid measure under omega.

    Every grid point xi is spread onto the energy nodes with cubic B-spline
    weights (a smooth histogram), once with weight 1 (rho) and once with
    weight |grad omega|^2 (nu, via the coarea formula).  Point queries
    linearly interpolate the node values.  The B-spline assignment makes the
    result insensitive to where grid energies fall relative to bin edges.
    """

    d: int
    N: int
    bin_width: float
    nodes: np.ndarray = field(repr=False)
    rho_nodes: np.ndarray = field(repr=False)
    nu_nodes: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, d: int, N: int | None = None, bin_width: float = DEFAULT_BIN_WIDTH):
        return _cached_table(int(d), int(N or DEFAULT_RESOLUTION.get(d, 64)), float(bin_width))

    @property
    def bin_count(self) -> int:
        return len(self.nodes)

    def rho(self, E) -> np.ndarray:
        return self._interp(self.rho_nodes, E)

    def nu(self, E) -> np.ndarray:
        return self._interp(self.nu_nodes, E)

    def _interp(self, values, E):
        E = np.asarray(E, dtype=float)
        out = np.interp(E, self.nodes, values, left=0.0, right=0.0)
        return np.where(np.abs(E) >= 2 * self.d, 0.0, out)

    def confidence(self, E: float) -> str:
        if abs(E) >= 2 * self.d:
            return "out-of-band"
        if sigma_distance(self.d, E) <= 2 * self.bin_width:
            return "low"
        return "ok"

    def total_mass(self) -> float:
        return float(np.sum(self.rho_nodes) * self.bin_width)


def _build_table(d: int, N: int, bw: float) -> DispersionTable:
    if d < 1:
        raise ValueError("d must be >= 1")
    if N < 2 or N % 2:
        raise ValueError("grid resolution N must be an even integer >= 2")
    n_inner = int(round(4 * d / bw))
    if not np.isclose(n_inner * bw, 4 * d):
        raise ValueError("bin width must divide the band width 4d")
    nodes = -2.0 * d + (np.arange(n_inner + 1 + 2 * _PAD) - _PAD) * bw
    rho_acc = np.zeros(len(nodes))
    nu_acc = np.zeros(len(nodes))

    xi = 2.0 * np.pi * np.arange(N) / N
    cos1 = 2.0 * np.cos(xi)
    grad1 = 4.0 * np.sin(xi) ** 2
    if d == 1:
        rest_w = np.zeros(1)
        rest_g = np.zeros(1)
    else:
        # omega and |grad omega|^2 over the trailing d-1 axes
        rest_w = np.zeros((1,) * (d - 1))
        rest_g = np.zeros((1,) * (d - 1))
        for axis in range(d - 1):
            shape = [1] * (d - 1)
            shape[axis] = N
            rest_w = rest_w + cos1.reshape(shape)
            rest_g = rest_g + grad1.reshape(shape)
        rest_w = rest_w.ravel()
        rest_g = rest_g.ravel()

    # chunk over the first axis; reduction order is fixed
    for k in range(N if d > 1 else 1):
        if d > 1:
            w = cos1[k] + rest_w
            g = grad1[k] + rest_g
        else:
            w, g = cos1, grad1
        pos = (w - nodes[0]) / bw
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        for off, wt in zip((-1, 0, 1, 2), _bspline_weights(frac)):
            idx = base + off
            rho_acc += np.bincount(idx, weights=wt, minlength=len(nodes))
            nu_acc += np.bincount(idx, weights=wt * g, minlength=len(nodes))

    count = float(N) ** d
    return DispersionTable(
        d=d,
        N=N,
        bin_width=bw,
        nodes=nodes,
        rho_nodes=rho_acc / (count * bw),
        nu_nodes=nu_acc / (count * bw),
    )


@lru_cache(maxsize=16)
def _cached_table(d, N, bw):
    return _build_table(d, N, bw)


def density_of_states(table: DispersionTable, E: float) -> float:
    """rho(E); 0 for |E| >= 2d (see ``table.confidence`` for the flag)."""
    return float(table.rho(E))


def velocity_density(table: DispersionTable, E: float) -> float:
    """nu(E) = (2 pi)^{-d} int_{omega=E} |grad omega| dH^{d-1}."""
    return float(table.nu(E))


def _linear_density_transform(nodes, values, z):
    """int p(s)/(s - z) ds for p piecewise linear on the nodes, exactly."""
    a, b = nodes[:-1], nodes[1:]
    pa, pb = values[:-1], values[1:]
    slope = (pb - pa) / (b - a)
    # log((b - z)/(a - z)) = log1p((b - a)/(a - z)); no branch crossing for Im z > 0
    logs = np.log1p((b - a) / (a - z))
    return complex(np.sum((pa + slope * (z - a)) * logs + slope * (b - a)))


def free_diag(d: int, z: complex, table: DispersionTable | None = None) -> complex:
    """phi(z) = int rho(s)/(s - z) ds over the binned density."""
    z = complex(z)
    if not z.imag > 0:
        raise ValueError(f"need Im z > 0, got z={z}")
    if table is None:
        table = DispersionTable.build(d)
    if table.d != d:
        raise ValueError("table dimension does not match d")
    return _linear_density_transform(table.nodes, table.rho_nodes, z)


def crossing_integral(d: int, z: complex, N: int = 512) -> float:
    """I4(z) = sum_x v(x)^4, v the inverse DFT of 1/|omega - z| on an N^d grid."""
    z = complex(z)
    if not z.imag > 0:
        raise ValueError(f"need Im z > 0, got z={z}")
    xi = 2.0 * np.pi * np.arange(N) / N
    cos1 = 2.0 * np.cos(xi)
    w = np.zeros((1,) * d)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = N
        w = w + cos1.reshape(shape)
    symbol = 1.0 / np.abs(w - z)
    v = np.fft.fftn(symbol).real / symbol.size
    return float(np.sum(v**4))


def exponents(d: int) -> tuple[Fraction, Fraction]:
    """(kappa_d, p_d) as exact fractions."""
    if int(d) != d or d < 2:
        raise ValueError(f"exponent tables need an integer d >= 2, got {d}")
    d = int(d)
    if d in (2, 4, 5, 6):
        kappa = Fraction(2, 13)
    elif d == 3:
        kappa = Fraction(2, 9)
    elif d <= 12:
        kappa = Fraction(2 * d - 12, 3 * d - 12)
    else:
        kappa = Fraction(1, 2)
    if d in (2, 4):
        p = Fraction(6)
    elif d == 3:
        p = Fraction(14, 3)
    else:
        p = Fraction(2 * d, d - 3)
    return kappa, p


def _phi_powers(d: int) -> tuple[Fraction, Fraction]:
    """(a, b) with Phi_d = lam^a (lam^2/eta)^b."""
    if d in (2, 4, 5, 6):
        return Fraction(1, 2), Fraction(13, 4)
    if d == 3:
        return Fraction(3, 4), Fraction(27, 8)
    if d >= 7:
        return Fraction(1), Fraction(2)
    raise ValueError(f"Phi_d is defined for d >= 2, got {d}")


def phi_d(d: int, lam: float, eta: float) -> float:
    """Error scale Phi_d(z) of the diffusive-profile estimate."""
    if not (lam > 0 and eta > 0):
        raise ValueError("need lambda > 0 and eta > 0")
    a, b = _phi_powers(int(d))
    return float(lam ** float(a) * (lam**2 / eta) ** float(b))


def phi_d_exponent_at_kappa(d: int) -> Fraction:
    """Exponent e with Phi_d(lam, lam^{2 + kappa_d}) = lam^e, exactly."""
    kappa, _ = exponents(d)
    a, b = _phi_powers(int(d))
    return a - b * kappa
