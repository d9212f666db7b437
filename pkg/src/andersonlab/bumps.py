"""Concrete radial test functions and cutoffs.

``smooth_bump``  exp(1 - 1/(1 - s^2)) on s < 1, else 0.  C-infinity, value 1
                 at the origin, supported in the closed unit ball.
``c2_cutoff``    1 on s <= 1, 1 - S(s - 1) on 1 < s < 2, 0 for s >= 2, where
                 S(t) = 10 t^3 - 15 t^4 + 6 t^5 is the quintic smoothstep.
                 C^2, non-increasing, Lipschitz constant 15/8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C2_LIPSCHITZ = 15.0 / 8.0


def smooth_bump(s):
    s = np.abs(np.asarray(s, dtype=float))
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def smoothstep5(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def c2_cutoff(s):
    s = np.abs(np.asarray(s, dtype=float))
    return 1.0 - smoothstep5(s - 1.0)


_PROFILES = {"smooth": (smooth_bump, 1.0), "c2": (c2_cutoff, 2.0)}


@dataclass(frozen=True)
class RadialBump:
    """f(x) = amplitude * profile(|x| / scale)."""

    kind: str = "smooth"
    scale: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in _PROFILES:
            raise ValueError(f"unknown bump kind {self.kind!r}; choose from {sorted(_PROFILES)}")
        if not self.scale > 0:
            raise ValueError("bump scale must be positive")

    @property
    def support_radius(self) -> float:
        return _PROFILES[self.kind][1] * self.scale

    def __call__(self, r):
        profile = _PROFILES[self.kind][0]
        return self.amplitude * profile(np.asarray(r, dtype=float) / self.scale)

    def rescaled(self, factor: float) -> "RadialBump":
        """x -> f(x / factor)."""
        return RadialBump(self.kind, self.scale * factor, self.amplitude)

    def sample(self, lattice, center=None) -> np.ndarray:
        """Values f(x - center) at every site, torus metric."""
        return self(lattice.torus_distance(center))


@dataclass(frozen=True)
class RadialCombination:
    """Finite linear combination sum_i w_i f_i of radial bumps."""

    terms: tuple

    @property
    def support_radius(self) -> float:
        return max(b.support_radius for _, b in self.terms)

    def __call__(self, r):
        return sum(w * b(r) for w, b in self.terms)

    def rescaled(self, factor: float) -> "RadialCombination":
        return RadialCombination(tuple((w, b.rescaled(factor)) for w, b in self.terms))

    def sample(self, lattice, center=None) -> np.ndarray:
        return self(lattice.torus_distance(center))


def radial_moment(f, d: int, power: float = 0.0, log: bool = False) -> float:
    """int_{R^d} f(|y|) |y|^power dy, or with -log|y| in place of |y|^power."""
    from math import gamma, pi

    from scipy import integrate

    area = 2.0 * pi ** (d / 2) / gamma(d / 2)

    def integrand(s):
        weight = -np.log(s) if log else s**power
        return area * float(f(s)) * weight * s ** (d - 1)

    R = f.support_radius
    val, _ = integrate.quad(integrand, 0.0, R, limit=400, epsabs=1e-14, epsrel=1e-11)
    return float(val)
