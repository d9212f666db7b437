"""Renormalised (self-consistent) theory: theta(z), M(z), the diffusion kernel
K~(x) = |M_0x|^2, the mass m and diffusion constant vartheta, the profile
operator G = (Id - lam^2 K~)^{-1} K~ and its continuum elliptic limit.

Normalisation of the limiting predictions.  With rho the probability density
of omega (``spectra``), the free diagonal satisfies Im phi(E + i0) = pi rho(E),
and so does Im theta as lam, eta -> 0.  The mass and diffusion constant
converge to 1/rho~ and (pi/4d) rho~^{-3} nu with rho~ := pi rho, the boundary
value of Im phi.  ``TransportCoefficients`` stores both rho and rho~ and builds
every prediction (m, vartheta, beta_E, phi(r)) from rho~.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np
from scipy import integrate, special

from .bumps import RadialBump
from .lattice import (
    FourierMultiplier,
    LatticeField,
    SpectralParam,
    TorusLattice,
    forward_dft,
    inverse_dft,
)
from .spectra import DispersionTable, sigma_distance

DEFAULT_GRID = {1: 4096, 2: 1024, 3: 128}


class SCEConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SCESolution:
    params: SpectralParam
    d: int
    grid: int
    theta: complex
    iterations: int
    residual: float
    lattice: TorusLattice | None = None

    @property
    def lam(self) -> float:
        return self.params.lam

    @property
    def eta(self) -> float:
        return self.params.eta

    @property
    def z(self) -> complex:
        return self.params.z

    @property
    def effective_eta(self) -> float:
        """Im(z + lam^2 theta)."""
        return self.eta + self.lam**2 * self.theta.imag


def _reduced_grid(d: int, N: int):
    """omega and normalised weights on the symmetry-reduced product grid.

    Per axis k = 0..N/2 carries weight 1, 2, ..., 2, 1 (cos is even), so the
    weighted mean equals the mean over the full N^d dual grid.
    """
    k = np.arange(N // 2 + 1)
    c = 2.0 * np.cos(2.0 * np.pi * k / N)
    w = np.full(len(k), 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    omega = np.zeros(1)
    weight = np.ones(1)
    for _ in range(d):
        omega = (omega[:, None] + c[None, :]).ravel()
        weight = (weight[:, None] * w[None, :]).ravel()
    return omega, weight / N**d


_GRID_CACHE: dict = {}


def _grid(d, N):
    key = (d, N)
    if key not in _GRID_CACHE:
        if len(_GRID_CACHE) > 8:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = _reduced_grid(d, N)
    return _GRID_CACHE[key]


def sce_map(d: int, z: complex, lam: float, w: complex, grid: int) -> complex:
    """Phi_z(w) = mean over the dual grid of 1/(omega - z - lam^2 w)."""
    omega, weight = _grid(d, grid)
    return complex(np.sum(weight / (omega - (z + lam**2 * w))))


def solve_theta(
    d: int,
    z: complex,
    lam: float,
    grid=None,
    *,
    max_iter: int = 10_000,
    tol: float = 1e-13,
    w0: complex = 1j,
    aitken: bool = False,
) -> SCESolution:
    """Fixed point theta = (Delta - (z + lam^2 theta))^{-1}_00.

    ``grid`` is a TorusLattice (its dual grid is used) or an integer
    resolution N; the default is a dimension-dependent N.
    """
    lattice = None
    if isinstance(grid, TorusLattice):
        lattice, N = grid, grid.L
        if grid.d != d:
            raise ValueError("lattice dimension does not match d")
    else:
        N = int(grid or DEFAULT_GRID.get(d, 32))
    if N % 2:
        raise ValueError("grid resolution must be even")
    z = complex(z)
    params = SpectralParam(z.real, z.imag, lam)

    w = complex(w0)
    if lam == 0:
        w = sce_map(d, z, lam, w, N)
        return SCESolution(params, d, N, w, 1, 0.0, lattice)

    history = []
    residual = np.inf
    for it in range(1, max_iter + 1):
        new = sce_map(d, z, lam, w, N)
        residual = abs(new - w)
        w = new
        if residual <= tol * max(1.0, abs(w)):
            break
        history.append(w)
        if aitken and len(history) >= 3 and it % 3 == 0:
            x0, x1, x2 = history[-3:]
            denom = x2 - 2 * x1 + x0
            if abs(denom) > 1e-300:
                acc = x2 - (x2 - x1) ** 2 / denom
                if acc.imag > 0:
                    w = acc
    else:
        raise SCEConvergenceError("self-consistent iteration did not converge", residual, max_iter)
    residual = abs(sce_map(d, z, lam, w, N) - w)
    return SCESolution(params, d, N, w, it, residual, lattice)


@dataclass(frozen=True, eq=False)
class RenormalizedMultiplier(FourierMultiplier):
    """M(z) = (Delta_L - (z + lam^2 theta))^{-1}, remembering its solution."""

    solution: SCESolution | None = None


def build_M(solution: SCESolution, lattice: TorusLattice | None = None) -> RenormalizedMultiplier:
    lattice = lattice or solution.lattice
    if lattice is None:
        lattice = TorusLattice(solution.d, solution.grid)
    shift = solution.z + solution.lam**2 * solution.theta
    return RenormalizedMultiplier(lattice, 1.0 / (lattice.omega - shift), solution)


@dataclass(frozen=True, eq=False)
class DiffusionKernel:
    lattice: TorusLattice
    values: np.ndarray = field(repr=False)
    symbol: np.ndarray = field(repr=False)
    solution: SCESolution

    @property
    def lam(self):
        return self.solution.lam

    def mass(self) -> float:
        return float(np.sum(self.values))

    def walk_mass(self) -> float:
        """lam^2 sum K~."""
        return self.lam**2 * self.mass()

    def predicted_walk_mass(self) -> float:
        s = self.solution
        g = s.lam**2 * s.theta.imag
        return g / (g + s.eta)


def build_kernel(M: RenormalizedMultiplier, solution: SCESolution | None = None) -> DiffusionKernel:
    solution = solution or getattr(M, "solution", None)
    if solution is None:
        raise ValueError("build_kernel needs the SCESolution behind M")
    values = np.abs(M.kernel) ** 2
    symbol = forward_dft(values)
    return DiffusionKernel(M.lattice, values, symbol, solution)


def sphere_area(d: int) -> float:
    """|S^{d-1}|."""
    return 2.0 * pi ** (d / 2) / gamma(d / 2)


def newton_constant(d: int) -> float:
    """c_d with -Delta (c_d |y|^{2-d}) = delta_0 (d >= 3), or -Delta(-c_2 log|y|) = delta_0."""
    if d == 2:
        return 1.0 / (2.0 * pi)
    if d < 2:
        raise ValueError("need d >= 2")
    return 1.0 / ((d - 2) * sphere_area(d))


@dataclass(frozen=True)
class TransportCoefficients:
    d: int
    lam: float
    E: float
    eta: float
    theta: complex
    m: float
    m_closed: float
    vartheta: float
    rho: float
    rho_tilde: float
    nu: float
    m_pred: float
    vartheta_pred: float
    beta_E: float
    tail_fraction: float
    lattice_too_small: bool
    provenance: dict = field(default_factory=dict)

    @property
    def m_gap(self) -> float:
        return abs(self.m - self.m_pred)

    @property
    def vartheta_gap(self) -> float:
        return abs(self.vartheta - self.vartheta_pred)

    @property
    def diffusive_length(self) -> float:
        return 1.0 / (self.lam * np.sqrt(self.eta))


def limiting_coefficients(d: int, E: float, table: DispersionTable | None = None):
    """(rho, rho~, nu, 1/rho~, (pi/4d) rho~^-3 nu, beta_E)."""
    table = table or DispersionTable.build(d)
    rho = float(table.rho(E))
    nu = float(table.nu(E))
    rho_t = pi * rho
    if rho_t <= 0 or nu <= 0:
        return rho, rho_t, nu, np.inf, np.inf, 0.0
    return rho, rho_t, nu, 1.0 / rho_t, pi / (4 * d) * nu / rho_t**3, 4 * d / pi * rho_t**3 / nu


def transport_coefficients(kernel: DiffusionKernel, table: DispersionTable | None = None) -> TransportCoefficients:
    s = kernel.solution
    lat = kernel.lattice
    lam, eta = s.lam, s.eta
    total = kernel.mass()
    m = lam**2 / eta * (1.0 - lam**2 * total)
    m_closed = lam**2 / (lam**2 * s.theta.imag + eta)
    x1 = lat.coordinate_grids()[0].astype(float)
    second = np.broadcast_to(x1**2, lat.shape) * kernel.values
    vartheta = lam**6 / 2.0 * float(np.sum(second))
    shell = lat.sup_norm >= lat.L // 2 - 1
    moment = float(np.sum(second))
    tail = float(np.sum(second[shell]) / moment) if moment > 0 else 0.0
    rho, rho_t, nu, m_pred, th_pred, beta = limiting_coefficients(s.d, s.params.E, table)
    return TransportCoefficients(
        d=s.d,
        lam=lam,
        E=s.params.E,
        eta=eta,
        theta=s.theta,
        m=m,
        m_closed=m_closed,
        vartheta=vartheta,
        rho=rho,
        rho_tilde=rho_t,
        nu=nu,
        m_pred=m_pred,
        vartheta_pred=th_pred,
        beta_E=beta,
        tail_fraction=tail,
        lattice_too_small=tail >= 1e-6,
        provenance={
            "L": lat.L,
            "sce_grid": s.grid,
            "dos_N": table.N if table else None,
            "dist_sigma": sigma_distance(s.d, s.params.E),
        },
    )


def transport_from_params(d, E, eta, lam, L, table=None):
    """Solve, build M and K~ on the L-torus and return the coefficients."""
    lat = TorusLattice(d, L)
    sol = solve_theta(d, complex(E, eta), lam, lat)
    kern = build_kernel(build_M(sol, lat))
    return transport_coefficients(kern, table)


@dataclass(frozen=True)
class SymbolReport:
    zero_error: float
    max_imag: float
    fitted_C: float
    max_violation: float
    xi_norms: np.ndarray = field(repr=False)
    remainders: np.ndarray = field(repr=False)
    doubling_ratios: np.ndarray = field(repr=False)


def kernel_symbol_check(
    kernel: DiffusionKernel,
    coefficients: TransportCoefficients,
    xi_max: float | None = None,
    C: float | None = None,
) -> SymbolReport:
    """Compare lam^2 K^(xi) with (1 - lam^-2 eta m) - vartheta lam^-4 |xi|^2.

    The fit region is the lowest 1/8 of the dual grid (|k_j| <= L/16),
    further cut to |xi| <= xi_max when given.  ``fitted_C`` is the smallest C
    with |remainder| <= C lam^-8 |xi|^4 on the region; ``max_violation`` is
    the largest excess of |remainder| over ``C`` lam^-8 |xi|^4 for a supplied
    reference constant (zero when C is omitted, since then C = fitted_C).
    """
    lat = kernel.lattice
    lam, eta = kernel.lam, kernel.solution.eta
    m, th = coefficients.m, coefficients.vartheta
    sym = lam**2 * kernel.symbol
    xi2 = lat.xi_squared
    model = (1.0 - eta * m / lam**2) - th / lam**4 * xi2
    rem = (sym.real - model)
    zero_error = abs(rem.flat[0])
    k = lat.coordinate_grids()
    low = np.ones(lat.shape, dtype=bool)
    for c in k:
        low = low & (np.abs(c) <= lat.L // 16)
    if xi_max is not None:
        low = low & (xi2 <= xi_max**2)
    low.flat[0] = False
    xin = np.sqrt(xi2[low])
    r = np.abs(rem[low])
    scale = xin**4 / lam**8
    ratios = r / scale
    fitted = float(ratios.max()) if ratios.size else 0.0
    C_ref = fitted if C is None else C
    # quartic scaling along the first axis: |r(2k)| / |r(k)|
    axis = rem[(slice(None),) + (0,) * (lat.d - 1)]
    kmax = lat.L // 16
    if xi_max is not None:
        kmax = min(kmax, int(xi_max * lat.L / (2 * pi)))
    doubling = np.array(
        [abs(axis[2 * j]) / abs(axis[j]) for j in range(1, kmax // 2 + 1) if abs(axis[j]) > 0]
    )
    return SymbolReport(
        zero_error=float(zero_error),
        max_imag=float(np.max(np.abs(sym.imag))) / lam**2,
        fitted_C=fitted,
        max_violation=float(max(0.0, np.max(r - C_ref * scale))) if ratios.size else 0.0,
        xi_norms=xin,
        remainders=r,
        doubling_ratios=doubling,
    )


def _field_values(kernel, a):
    if isinstance(a, LatticeField):
        return a.values
    return np.broadcast_to(np.asarray(a), kernel.lattice.shape)


def profile_apply(kernel: DiffusionKernel, a) -> LatticeField:
    """G a = (Id - lam^2 K~)^{-1} K~ a by pointwise division in Fourier space."""
    values = _field_values(kernel, a)
    ks = kernel.symbol
    denom = 1.0 - kernel.lam**2 * ks
    if np.min(np.abs(denom)) < 1e-14:
        raise FloatingPointError("1 - lam^2 K^ vanishes; the kernel is corrupted")
    out = inverse_dft(ks * forward_dft(values) / denom)
    if np.isrealobj(values):
        out = out.real
    return LatticeField(kernel.lattice, out)


def neumann_profile(kernel: DiffusionKernel, a, terms: int = 12) -> LatticeField:
    """sum_{k < terms} lam^{2k} K~^{k+1} a, by repeated convolution."""
    values = _field_values(kernel, a)
    conv = FourierMultiplier(kernel.lattice, kernel.symbol)
    term = conv.apply(values).values
    total = term.copy()
    for _ in range(terms - 1):
        term = kernel.lam**2 * conv.apply(term).values
        total = total + term
    if np.isrealobj(values):
        total = total.real
    return LatticeField(kernel.lattice, total)


def neumann_tail_bound(kernel: DiffusionKernel, terms: int = 12) -> float:
    """q^{terms+1}/(1-q), q = lam^2 sum K~: bounds lam^2 |G a - S_terms a|_inf / |a|_inf."""
    q = kernel.walk_mass()
    return q ** (terms + 1) / (1.0 - q)


# --- continuum elliptic problems -------------------------------------------------


def _jtilde(nu, t):
    """J_nu(t) / t^nu, continuous at t = 0."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < 1e-8
    out[small] = 1.0 / (2.0**nu * gamma(nu + 1.0))
    ts = t[~small]
    out[~small] = special.jv(nu, ts) / ts**nu
    return out


def _gauss_panels(edges, n):
    x, w = np.polynomial.legendre.leggauss(n)
    a = np.asarray(edges[:-1])[:, None]
    b = np.asarray(edges[1:])[:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def radial_fourier(f: RadialBump, k, d: int, n: int = 16, kr_max: float = 300.0) -> np.ndarray:
    """f^(k) = int_{R^d} e^{-i k.x} f(|x|) dx for a radial bump."""
    R = f.support_radius
    panels = max(8, int(np.ceil(kr_max / (2 * pi))))
    r, wr = _gauss_panels(np.linspace(0.0, R, panels + 1), n)
    nu = d / 2.0 - 1.0
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kernel = _jtilde(nu, np.outer(k, r))
    return (2 * pi) ** (d / 2) * kernel @ (wr * f(r) * r ** (d - 1))


def solve_radial_elliptic(
    a: float, b: float, f: RadialBump, x, d: int, n: int = 16, kr_max: float = 300.0
) -> np.ndarray:
    """u(|x|) for (-a Delta + b) u = f on R^d, by radial Fourier quadrature.

    Composite Gauss-Legendre in k on geometrically graded panels between
    1e-3 min(mu, 1/R) and kr_max / R (mu = sqrt(b/a)); ``n`` nodes per panel.
    """
    R = f.support_radius
    scale = 1.0 / R
    mu = np.sqrt(b / a) if b > 0 else scale
    k_lo = 1e-3 * min(mu, scale)
    k_hi = kr_max / R
    edges = np.concatenate([[0.0], np.geomspace(k_lo, k_hi, 64)])
    k, wk = _gauss_panels(edges, n)
    fhat = radial_fourier(f, k, d, n=n, kr_max=kr_max)
    uhat = fhat / (a * k**2 + b)
    nu = d / 2.0 - 1.0
    x = np.atleast_1d(np.abs(np.asarray(x, dtype=float)))
    area = sphere_area(d)
    # (2 pi)^{-d} |S^{d-1}| 2^nu Gamma(nu+1) = (2 pi)^{-d/2} for the normalised J~
    kern = _jtilde(nu, np.outer(x, k)) * (2.0**nu * gamma(nu + 1.0))
    return (2 * pi) ** (-d) * area * kern @ (wk * uhat * k ** (d - 1))


def green_function(a: float, b: float, s, d: int):
    """Green's function of (-a Delta + b) on R^d at radius s > 0."""
    s = np.asarray(s, dtype=float)
    mu = np.sqrt(b / a)
    nu = d / 2.0 - 1.0
    return (1.0 / a) * (2 * pi) ** (-d / 2) * (mu / s) ** nu * special.kv(nu, mu * s)


def solve_radial_elliptic_origin(a: float, b: float, f: RadialBump, d: int) -> float:
    """u(0) by real-space radial quadrature against the Bessel-K Green's function."""
    R = f.support_radius
    area = sphere_area(d)

    def integrand(s):
        return area * green_function(a, b, s, d) * float(f(s)) * s ** (d - 1)

    val, _ = integrate.quad(integrand, 0.0, R, limit=400, epsabs=0.0, epsrel=1e-12)
    return float(val)


def _elliptic_coefficients(c: TransportCoefficients):
    return c.vartheta / c.lam**4, c.eta * c.m / c.lam**2


def elliptic_green(coefficients: TransportCoefficients, f: RadialBump, x=0.0, n: int = 16) -> np.ndarray | float:
    """u(x) for (-lam^-4 vartheta Delta + lam^-2 eta m) u = lam^-2 f on R^d."""
    if f.amplitude == 0:
        return 0.0 * np.atleast_1d(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
    a, b = _elliptic_coefficients(coefficients)
    u = solve_radial_elliptic(a, b, f, x, coefficients.d, n=n) / coefficients.lam**2
    return u if np.ndim(x) else float(u[0])


def rescaled_elliptic_green(coefficients: TransportCoefficients, f0: RadialBump, alpha: float, y=0.0, n: int = 16):
    """u~(y) for (-vartheta Delta + alpha^2 m) u~ = f0 on R^d."""
    u = solve_radial_elliptic(coefficients.vartheta, alpha**2 * coefficients.m, f0, y, coefficients.d, n=n)
    return u if np.ndim(y) else float(u[0])


def radial_profile_phi(coefficients: TransportCoefficients, r: float, chi: RadialBump | None = None) -> float:
    """phi(r) = int chi(x/r) G(x) dx, G the Green's function of
    (-(pi/4d) rho~^-3 nu Delta + rho~^-1)."""
    if not r > 0:
        raise ValueError("r must be positive")
    chi = chi or RadialBump("c2", 1.0)
    d = coefficients.d
    a, b = coefficients.vartheta_pred, coefficients.m_pred
    area = sphere_area(d)
    cut = chi.rescaled(r)

    def integrand(s):
        return area * float(cut(s)) * green_function(a, b, s, d) * s ** (d - 1)

    edges = [0.0, chi.scale * r, cut.support_radius]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            val, _ = integrate.quad(integrand, lo, hi, limit=400, epsabs=0.0, epsrel=1e-11)
            total += val
    return float(total)
