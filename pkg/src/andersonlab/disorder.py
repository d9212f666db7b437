"""Seeded Gaussian disorder and resolvent columns of H_L = Delta_L + lam V.

Potential generation: for base seed s and realization index i the site
values are ``Generator(Philox(SeedSequence([s, i]))).standard_normal(L**d)``
laid out in row-major site order.  The stream depends only on (s, i), never
on the worker that draws it.

Column solves use BiCGSTAB preconditioned by the renormalised free resolvent
(Delta_L - z - lam^2 theta)^{-1}, applied by FFT, with GMRES as a fallback
and dense LU for small tori.  Every accepted column passes a true-residual
check and the Ward identity eta |u|^2 = Im u(x).
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, bicgstab, gmres

from .lattice import LatticeField, SpectralParam, TorusLattice, apply_laplacian, lp_norm

RESIDUAL_TOL = 1e-10
WARD_TOL = 1e-8
DENSE_LIMIT = 4096  # dense LU strictly below this many sites
MATVEC_CAP = 100_000


class SolveError(RuntimeError):
    """A column solve missed its residual or Ward contract."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    lattice: TorusLattice
    seed: int
    index: int
    values: np.ndarray = field(repr=False)

    def with_site(self, site, value) -> "DisorderRealization":
        """Copy with one site value replaced (used for finite differences)."""
        v = self.values.copy()
        v[self.lattice._position(site)] = value
        return replace(self, values=v)

    def value(self, site) -> float:
        return float(self.values[self.lattice._position(site)])


def normal_stream(seed: int, index: int, count: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
    return gen.standard_normal(count)


def sample_disorder(lattice: TorusLattice, seed: int, index: int = 0) -> DisorderRealization:
    g = normal_stream(seed, index, lattice.site_count).reshape(lattice.shape)
    g.setflags(write=False)
    return DisorderRealization(lattice, int(seed), int(index), g)


def restrict_realization(big: DisorderRealization, L: int) -> DisorderRealization:
    """Potential on the L-torus agreeing with ``big`` on [-L/2, L/2)^d."""
    lat = TorusLattice(big.lattice.d, L)
    idx = np.ix_(*([lat.axis_coords % big.lattice.L] * lat.d))
    return DisorderRealization(lat, big.seed, big.index, np.array(big.values[idx]))


def _zeta(z):
    return z.z if isinstance(z, SpectralParam) else complex(z)


def hamiltonian_apply(realization: DisorderRealization, lam: float, u: np.ndarray) -> np.ndarray:
    field_ = LatticeField(realization.lattice, u)
    return apply_laplacian(field_).values + lam * realization.values * field_.values


def dense_hamiltonian(realization: DisorderRealization, lam: float) -> np.ndarray:
    lat = realization.lattice
    n = lat.site_count
    H = np.zeros((n, n))
    idx = np.arange(n).reshape(lat.shape)
    for axis in range(lat.d):
        for step in (1, -1):
            nb = np.roll(idx, step, axis).ravel()
            np.add.at(H, (idx.ravel(), nb), 1.0)
    H[np.diag_indices(n)] += lam * realization.values.ravel()
    return H


@dataclass(frozen=True)
class ResolventColumn:
    source: tuple
    z: complex
    lam: float
    values: np.ndarray = field(repr=False)
    iterations: int
    residual: float
    ward_error: float
    method: str
    matvecs: int = 0

    @property
    def diagonal(self) -> complex:
        return complex(self.values[self.source])

    def entry(self, y) -> complex:
        return complex(self.values[tuple(y)])

    def norm(self, q: float) -> float:
        return lp_norm(self.values, q)


@dataclass
class SolveReport:
    columns: int = 0
    worst_residual: float = 0.0
    worst_ward: float = 0.0
    total_matvecs: int = 0
    methods: dict = field(default_factory=dict)
    failed: bool = False
    tolerance: float = RESIDUAL_TOL

    def add(self, col: ResolventColumn):
        self.columns += 1
        self.worst_residual = max(self.worst_residual, col.residual)
        self.worst_ward = max(self.worst_ward, col.ward_error)
        self.total_matvecs += col.matvecs
        self.methods[col.method] = self.methods.get(col.method, 0) + 1
        self.failed = self.failed or col.residual > self.tolerance or col.ward_error > WARD_TOL

    def as_dict(self):
        return {
            "columns": self.columns,
            "worst_residual": self.worst_residual,
            "worst_ward_error": self.worst_ward,
            "total_matvecs": self.total_matvecs,
            "methods": dict(sorted(self.methods.items())),
            "failed": self.failed,
            "tolerance": self.tolerance,
        }


def _ward_error(u, src, eta):
    n2 = float(np.vdot(u, u).real)
    if n2 == 0:
        return 0.0
    return abs(eta * n2 - u[src].imag) / n2


@lru_cache(maxsize=32)
def _preconditioner_theta(d, L, z, lam):
    from .sce import solve_theta

    return solve_theta(d, z, lam, TorusLattice(d, L)).theta


def _check_column(realization, lam, z, src, u, method, iters, matvecs, history=()):
    lat = realization.lattice
    rhs = np.zeros(lat.shape, dtype=complex)
    rhs[src] = 1.0
    res = float(np.linalg.norm(hamiltonian_apply(realization, lam, u) - z * u - rhs))
    ward = _ward_error(u, src, z.imag)
    col = ResolventColumn(src, z, lam, u, iters, res, ward, method, matvecs)
    if res > RESIDUAL_TOL or ward > WARD_TOL:
        raise SolveError(
            f"{method} solve at x={src} missed its contract: residual {res:.2e}, ward {ward:.2e}",
            history,
        )
    return col


def _iteration_cap(realization, lam, z):
    d = realization.lattice.d
    gmax = float(np.max(np.abs(realization.values))) if lam else 0.0
    cond = (2 * d + lam * gmax + abs(z.real)) / z.imag
    return int(min(MATVEC_CAP, max(50, 20 * np.sqrt(cond))))


def _iterative_column(realization, lam, z, src, theta=None):
    lat = realization.lattice
    shape, n = lat.shape, lat.site_count
    if theta is None:
        theta = _preconditioner_theta(lat.d, lat.L, z, lam) if lam > 0 else 0.0
    sym = 1.0 / (lat.omega - (z + lam**2 * theta))
    counter = {"mv": 0}

    def matvec(v):
        counter["mv"] += 1
        u = np.reshape(v, shape)
        return (hamiltonian_apply(realization, lam, u) - z * u).ravel()

    def precond(v):
        return np.fft.fftn(sym * np.fft.ifftn(np.reshape(v, shape))).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=complex)
    P = LinearOperator((n, n), matvec=precond, dtype=complex)
    b = np.zeros(n, dtype=complex)
    b[np.ravel_multi_index(src, shape)] = 1.0
    cap = _iteration_cap(realization, lam, z)
    history = []

    # BiCGSTAB uses two products per iteration
    x, info = bicgstab(A, b, x0=precond(b), rtol=1e-12, atol=0.0, maxiter=cap // 2, M=P)
    u = x.reshape(shape)
    history.append(("bicgstab", info, counter["mv"]))
    try:
        return _check_column(realization, lam, z, src, u, "bicgstab", counter["mv"] // 2, counter["mv"], history)
    except SolveError:
        pass
    start = counter["mv"]
    x, info = gmres(A, b, x0=x, rtol=1e-12, atol=0.0, restart=200, maxiter=max(1, cap // 200), M=P)
    history.append(("gmres", info, counter["mv"] - start))
    return _check_column(realization, lam, z, src, x.reshape(shape), "gmres", counter["mv"] - start, counter["mv"], history)


class _DenseSolver:
    def __init__(self, realization, lam, z):
        H = dense_hamiltonian(realization, lam).astype(complex)
        H[np.diag_indices_from(H)] -= z
        self.lu = sla.lu_factor(H, check_finite=False)

    def column(self, idx, n):
        b = np.zeros(n, dtype=complex)
        b[idx] = 1.0
        return sla.lu_solve(self.lu, b, check_finite=False)


def choose_method(lattice: TorusLattice, method: str = "auto") -> str:
    if method not in ("auto", "dense", "iterative"):
        raise ValueError(f"unknown solve method {method!r}")
    if method == "auto":
        return "dense" if lattice.site_count < DENSE_LIMIT else "iterative"
    return method


def resolvent_columns(realization: DisorderRealization, z, lam: float, sources, method="auto", theta=None):
    """Solve (H_L - z) u = delta_x for each source x; returns (columns, report)."""
    z = _zeta(z)
    if not z.imag > 0:
        raise ValueError(f"need Im z > 0, got z={z}")
    lat = realization.lattice
    positions = [tuple(lat._position(x)) for x in sources]
    method = choose_method(lat, method)
    report = SolveReport()
    cols = []
    if method == "dense":
        solver = _DenseSolver(realization, lam, z)
        for src in positions:
            u = solver.column(np.ravel_multi_index(src, lat.shape), lat.site_count).reshape(lat.shape)
            col = _check_column(realization, lam, z, src, u, "dense", 1, 0)
            report.add(col)
            cols.append(col)
    else:
        for src in positions:
            col = _iterative_column(realization, lam, z, src, theta)
            report.add(col)
            cols.append(col)
    return cols, report


def resolvent_column(realization: DisorderRealization, z, lam: float, x=None, method="auto", theta=None) -> ResolventColumn:
    cols, _ = resolvent_columns(realization, z, lam, [x], method, theta)
    return cols[0]


def dense_resolvent(realization: DisorderRealization, z, lam: float) -> np.ndarray:
    """Full (H_L - z)^{-1} as a site x site matrix."""
    z = _zeta(z)
    H = dense_hamiltonian(realization, lam).astype(complex)
    H[np.diag_indices_from(H)] -= z
    return sla.inv(H, check_finite=False)


@dataclass(frozen=True)
class NormEstimate:
    q: float
    value: float
    columns: int
    exact: bool
    argmax: tuple

    @property
    def lower_bound(self) -> bool:
        return not self.exact


def one_to_q_norm(realization: DisorderRealization, z, lam: float, q: float, budget: int = 256, method="auto") -> NormEstimate:
    """|R|_{1->q} = max_x |R delta_x|_q; exact if budget covers every site."""
    if q < 1:
        raise ValueError("q must be >= 1")
    lat = realization.lattice
    n = lat.site_count
    z = _zeta(z)
    if budget >= n:
        if n <= 16384 and choose_method(lat, method) == "dense":
            R = dense_resolvent(realization, z, lam)
            ward = np.abs(z.imag * np.sum(np.abs(R) ** 2, axis=0) - np.diag(R).imag)
            if np.max(ward / np.sum(np.abs(R) ** 2, axis=0)) > WARD_TOL:
                raise SolveError("dense inverse failed the Ward identity")
            norms = np.array([lp_norm(R[:, j], q) for j in range(n)])
            j = int(np.argmax(norms))
            return NormEstimate(q, float(norms[j]), n, True, lat.coord(j))
        sources = range(n)
        exact = True
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([realization.seed, realization.index, 1])))
        sources = sorted(rng.choice(n, size=budget, replace=False).tolist())
        exact = False
    cols, _ = resolvent_columns(realization, z, lam, [lat.coord(i) for i in sources], method)
    norms = [c.norm(q) for c in cols]
    j = int(np.argmax(norms))
    return NormEstimate(q, float(norms[j]), len(cols), exact, cols[j].source)


@dataclass(frozen=True)
class DerivativeReport:
    finite_difference: complex
    analytic: complex
    relative_error: float
    eps: float


def derivative_check(realization, z, lam, x, y, w, eps=1e-5, method="auto") -> DerivativeReport:
    """Finite difference in g_w against dR_xy/dg_w = -lam R_xw R_wy."""
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    lat = realization.lattice
    x, y, w = (tuple(lat._position(p)) for p in (x, y, w))
    z = _zeta(z)
    base = resolvent_columns(realization, z, lam, [x, w], method)[0]
    col_x, col_w = base
    bumped = realization.with_site(w, realization.value(w) + eps)
    col_x2 = resolvent_column(bumped, z, lam, x, method)
    fd = (col_x2.entry(y) - col_x.entry(y)) / eps
    # R is complex symmetric, so R_xw = R_wx = col_x[w]
    analytic = -lam * col_x.entry(w) * col_w.entry(y)
    if analytic == 0:
        rel = abs(fd)
    else:
        rel = abs(fd - analytic) / abs(analytic)
    return DerivativeReport(fd, analytic, float(rel), eps)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    k_range: tuple
    inconclusive: bool
    c_over_eta: float

    def passes(self, eta: float, c: float = 0.05) -> bool:
        return (not self.inconclusive) and self.rate <= -c * eta


def combes_thomas_check(realization, z, lam, x=None, C: float = 1.0, method="auto") -> DecayFit:
    """Slope of log|R_{x, x + k e_1}| over C/eta < k < L/4."""
    z = _zeta(z)
    lat = realization.lattice
    col = resolvent_column(realization, z, lam, x, method)
    src = col.source
    k_lo = int(np.floor(C / z.imag)) + 1
    k_hi = lat.L // 4
    ks = np.arange(k_lo, k_hi)
    if len(ks) < 3:
        return DecayFit(float("nan"), (k_lo, k_hi), True, C / z.imag)
    vals = []
    for k in ks:
        pos = list(src)
        pos[0] = (pos[0] + k) % lat.L
        vals.append(abs(col.values[tuple(pos)]))
    vals = np.array(vals)
    if np.any(vals <= 0):
        return DecayFit(float("nan"), (k_lo, k_hi), True, C / z.imag)
    slope = np.polyfit(ks, np.log(vals), 1)[0]
    return DecayFit(float(slope), (k_lo, k_hi), False, C / z.imag)


@dataclass(frozen=True)
class DoublingReport:
    L: int
    discrepancy: float
    entries: int


def torus_doubling_check(seed, z, lam, L, d=2, index=0, sources=None, method="auto") -> DoublingReport:
    """Max |R^{(L)}_xy - R^{(2L)}_xy| over x in ``sources`` and |y|_inf <= L/4.

    The 2L potential is drawn first and the L potential is its restriction to
    the window [-L/2, L/2)^d.  Sources default to the origin and the corners
    (+-L/4, ..., +-L/4) of the comparison window.
    """
    z = _zeta(z)
    big = sample_disorder(TorusLattice(d, 2 * L), seed, index)
    small = restrict_realization(big, L)
    if sources is None:
        corners = itertools.product((-(L // 4), L // 4), repeat=d)
        sources = [(0,) * d] + [tuple(c) for c in corners]
    for s in sources:
        if max(abs(c) for c in s) > L // 4:
            raise ValueError("sources must lie in the window |x|_inf <= L/4")
    cs, _ = resolvent_columns(small, z, lam, sources, method)
    cb, _ = resolvent_columns(big, z, lam, sources, method)
    window = np.arange(-(L // 4), L // 4 + 1)
    worst = 0.0
    count = 0
    for a, b in zip(cs, cb):
        va = a.values[np.ix_(*([window % L] * d))]
        vb = b.values[np.ix_(*([window % (2 * L)] * d))]
        worst = max(worst, float(np.max(np.abs(va - vb))))
        count += va.size
    return DoublingReport(L, worst, count)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ANDERSONLAB_THREADS", "1")))
    except ValueError:
        return 1
