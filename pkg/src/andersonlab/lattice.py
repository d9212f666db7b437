"""Torus geometry, lattice fields and FFT-diagonalised operators on Z^d_L.

Fourier convention: f_hat(xi) = sum_x exp(i x.xi) f(x), with the inverse
carrying a factor 1/L^d.  In numpy terms the forward transform is
``L**d * ifftn`` and the inverse is ``fftn / L**d``; a Fourier multiplier
therefore acts as ``fftn(symbol * ifftn(f))``.

Sites are stored in FFT order along every axis, so array index k on an axis
corresponds to the canonical coordinate k for k < L/2 and k - L otherwise,
i.e. coordinates live in [-L/2, L/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class TorusLattice:
    """The discrete torus Z^d / L Z^d."""

    d: int
    L: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension d must be an integer >= 1, got {self.d}")
        if int(self.L) != self.L or self.L < 2 or self.L % 2:
            raise ValueError(f"side length L must be an even integer >= 2, got {self.L}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def site_count(self) -> int:
        return self.L**self.d

    def index(self, coord) -> int:
        """Linear index of a coordinate (taken mod L)."""
        coord = np.asarray(coord, dtype=int) % self.L
        if coord.shape != (self.d,):
            raise ValueError(f"expected a {self.d}-component coordinate")
        return int(np.ravel_multi_index(tuple(coord), self.shape))

    def coord(self, i: int) -> tuple[int, ...]:
        """Canonical coordinate in [-L/2, L/2)^d of linear index i."""
        raw = np.unravel_index(int(i), self.shape)
        half = self.L // 2
        return tuple(int(k) if k < half else int(k) - self.L for k in raw)

    def neighbors(self, i: int) -> list[int]:
        c = np.array(self.coord(i))
        out = []
        for axis in range(self.d):
            for step in (1, -1):
                nb = c.copy()
                nb[axis] += step
                out.append(self.index(nb))
        return out

    @cached_property
    def axis_coords(self) -> np.ndarray:
        """Canonical coordinate of each array position along one axis."""
        return np.fft.fftfreq(self.L, 1.0 / self.L).astype(int)

    @cached_property
    def axis_frequencies(self) -> np.ndarray:
        """Dual-grid values 2 pi k / L in [0, 2 pi) along one axis."""
        return 2.0 * np.pi * np.arange(self.L) / self.L

    def coordinate_grids(self) -> list[np.ndarray]:
        """Broadcastable canonical coordinates, one array per axis."""
        return _axis_grids(self.axis_coords, self.d)

    def frequency_grids(self) -> list[np.ndarray]:
        return _axis_grids(self.axis_frequencies, self.d)

    @cached_property
    def radius_squared(self) -> np.ndarray:
        """|x|^2 of the minimal-norm representative of every site."""
        return sum(c.astype(float) ** 2 for c in self.coordinate_grids()) * np.ones(self.shape)

    @cached_property
    def sup_norm(self) -> np.ndarray:
        grids = [np.abs(c) for c in self.coordinate_grids()]
        return np.maximum.reduce(np.broadcast_arrays(*grids))

    @cached_property
    def omega(self) -> np.ndarray:
        """Dispersion sum_j 2 cos(xi_j) on the dual grid."""
        cos = 2.0 * np.cos(self.axis_frequencies)
        return sum(_axis_grids(cos, self.d)) * np.ones(self.shape)

    @cached_property
    def xi_squared(self) -> np.ndarray:
        """|xi|^2 with every component reduced to (-pi, pi]."""
        k = np.fft.fftfreq(self.L, 1.0 / self.L)
        xi = 2.0 * np.pi * k / self.L
        return sum(g**2 for g in _axis_grids(xi, self.d)) * np.ones(self.shape)

    def delta(self, x=None) -> "LatticeField":
        values = np.zeros(self.shape, dtype=complex)
        values[self._position(x)] = 1.0
        return LatticeField(self, values)

    def _position(self, x) -> tuple[int, ...]:
        if x is None:
            return (0,) * self.d
        if np.isscalar(x):
            return np.unravel_index(int(x), self.shape)
        return tuple(int(c) % self.L for c in x)

    def torus_distance(self, x0=None) -> np.ndarray:
        """Euclidean torus distance of every site from x0."""
        x0 = self._position(x0)
        grids = []
        for axis, c in enumerate(self.coordinate_grids()):
            diff = (c - x0[axis]) % self.L
            diff = np.where(diff >= self.L // 2, diff - self.L, diff)
            grids.append(diff.astype(float) ** 2)
        return np.sqrt(sum(grids) * np.ones(self.shape))


def _axis_grids(values: np.ndarray, d: int) -> list[np.ndarray]:
    grids = []
    for axis in range(d):
        shape = [1] * d
        shape[axis] = len(values)
        grids.append(np.reshape(values, shape))
    return grids


@dataclass(frozen=True)
class LatticeField:
    """A complex value per site of a torus."""

    lattice: TorusLattice
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.size != self.lattice.site_count:
            raise ValueError(
                f"field has {values.size} values, lattice has {self.lattice.site_count} sites"
            )
        object.__setattr__(self, "values", values.reshape(self.lattice.shape))

    def norm(self, p: float = 2.0) -> float:
        return lp_norm(self.values, p)

    def at(self, x=None) -> complex:
        return complex(self.values[self.lattice._position(x)])

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def lp_norm(values: np.ndarray, p: float) -> float:
    a = np.abs(np.asarray(values)).ravel()
    if np.isinf(p):
        return float(a.max())
    if p < 1:
        raise ValueError("l^p norms need p >= 1")
    scale = a.max()
    if scale == 0.0:
        return 0.0
    return float(scale * np.sum((a / scale) ** p) ** (1.0 / p))


def forward_dft(values: np.ndarray) -> np.ndarray:
    """f_hat(xi) = sum_x exp(i x.xi) f(x) on the dual grid."""
    return np.fft.ifftn(values) * values.size


def inverse_dft(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values) / values.size


@dataclass(frozen=True)
class FourierMultiplier:
    """Translation-invariant operator diagonal in the plane-wave basis."""

    lattice: TorusLattice
    symbol: np.ndarray = field(repr=False)

    def __post_init__(self):
        symbol = np.asarray(self.symbol)
        if symbol.size != self.lattice.site_count:
            raise ValueError("symbol size does not match the dual grid")
        object.__setattr__(self, "symbol", symbol.reshape(self.lattice.shape))

    def apply(self, f) -> LatticeField:
        values = f.values if isinstance(f, LatticeField) else np.reshape(f, self.lattice.shape)
        return LatticeField(self.lattice, np.fft.fftn(self.symbol * np.fft.ifftn(values)))

    @cached_property
    def kernel(self) -> np.ndarray:
        """Convolution kernel k(y) = <y|A|0>; then <y|A|x> = k(y - x)."""
        return inverse_dft(self.symbol)

    def column(self, x=None) -> LatticeField:
        shift = self.lattice._position(x)
        return LatticeField(self.lattice, np.roll(self.kernel, shift, axis=tuple(range(self.lattice.d))))

    def entry(self, y, x=None) -> complex:
        y = self.lattice._position(y)
        x = self.lattice._position(x)
        return complex(self.kernel[tuple((a - b) % self.lattice.L for a, b in zip(y, x))])

    @property
    def diagonal(self) -> complex:
        return complex(np.mean(self.symbol))


@dataclass(frozen=True)
class SpectralParam:
    """Spectral parameter z = E + i eta together with the coupling lambda."""

    E: float
    eta: float
    lam: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be strictly positive, got {self.eta}")
        if self.lam < 0:
            raise ValueError(f"coupling lambda must be non-negative, got {self.lam}")

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)


def dispersion(lattice: TorusLattice, xi) -> float:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (lattice.d,):
        raise ValueError(f"expected a {lattice.d}-component dual vector")
    return float(np.sum(2.0 * np.cos(xi)))


def apply_laplacian(f: LatticeField) -> LatticeField:
    """Nearest-neighbour sum (Delta f)(x) = sum_{|y-x|=1} f(y) by stencil."""
    v = f.values
    out = np.zeros_like(v)
    for axis in range(v.ndim):
        out += np.roll(v, 1, axis) + np.roll(v, -1, axis)
    return LatticeField(f.lattice, out)


def laplacian_multiplier(lattice: TorusLattice) -> FourierMultiplier:
    return FourierMultiplier(lattice, lattice.omega)


def free_resolvent_multiplier(lattice: TorusLattice, z: complex) -> FourierMultiplier:
    if not np.imag(z) > 0:
        raise ValueError(f"need Im z > 0, got z={z}")
    return FourierMultiplier(lattice, 1.0 / (lattice.omega - z))


def free_resolvent_column(lattice: TorusLattice, param, x=None) -> LatticeField:
    """(Delta_L - z)^{-1} delta_x by inverse DFT of exp(i x.xi)/(omega - z).

    ``param`` may be a SpectralParam (its coupling is ignored) or a complex z.
    """
    z = param.z if isinstance(param, SpectralParam) else complex(param)
    return free_resolvent_multiplier(lattice, z).column(x)
