"""Disorder Monte Carlo: realization sweeps and comparisons of disorder
averages with the renormalised theory.

Each realization i uses the potential ``sample_disorder(lattice, seed, i)``
and solves only the columns R delta_x for the configured source sites; by
complex symmetry these give both R_{x.} and R_{.x}.  Realizations run in a
thread pool, results are collected in index order, so every mean is a pure
function of (spec, seed) whatever the worker count.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .bumps import RadialBump, radial_moment
from .disorder import default_workers, resolvent_columns, sample_disorder
from .lattice import TorusLattice
from .sce import (
    TransportCoefficients,
    build_kernel,
    build_M,
    elliptic_green,
    newton_constant,
    profile_apply,
    radial_profile_phi,
    rescaled_elliptic_green,
    solve_theta,
    transport_coefficients,
)

DEFAULT_TARGETS = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0))


@dataclass(frozen=True)
class EnsembleSpec:
    d: int
    L: int
    E: float
    eta: float
    lam: float
    realizations: int
    seed: int = 0
    source: tuple = ()
    targets: tuple = ()
    profile: RadialBump | None = None
    q_norms: tuple = (4.0,)
    fixed_index: bool = False
    method: str = "auto"
    retain_columns: bool = False

    def __post_init__(self):
        if self.realizations < 2:
            raise ValueError("an ensemble needs at least 2 realizations")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.d < 1 or self.L < 2 or self.L % 2:
            raise ValueError("need d >= 1 and an even L >= 2")
        if not self.source:
            object.__setattr__(self, "source", (0,) * self.d)
        if not self.targets:
            tg = tuple(tuple(t) + (0,) * (self.d - len(t)) for t in DEFAULT_TARGETS)
            object.__setattr__(self, "targets", tg)

    @property
    def lattice(self) -> TorusLattice:
        return TorusLattice(self.d, self.L)

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["source"] = list(self.source)
        out["targets"] = [list(t) for t in self.targets]
        out["q_norms"] = list(self.q_norms)
        if self.profile is not None:
            out["profile"] = {"kind": self.profile.kind, "scale": self.profile.scale, "amplitude": self.profile.amplitude}
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ObservableStats:
    mean: complex | float
    variance: float
    stderr: float
    quantiles: dict


@dataclass
class EnsembleStats:
    spec: EnsembleSpec
    values: dict = field(repr=False)
    completed: int = 0
    manifest: dict = field(default_factory=dict)
    columns: list | None = field(default=None, repr=False)

    def names(self):
        return sorted(self.values)

    def mean(self, name):
        v = self.values[name]
        m = np.mean(v)
        return complex(m) if np.iscomplexobj(v) else float(m)

    def variance(self, name) -> float:
        """Unbiased sample variance, E|X - mean|^2 for complex observables."""
        v = self.values[name]
        return float(np.sum(np.abs(v - np.mean(v)) ** 2) / (len(v) - 1))

    def stderr(self, name) -> float:
        return float(np.sqrt(self.variance(name) / len(self.values[name])))

    def quantiles(self, name, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        v = self.values[name]
        v = np.abs(v) if np.iscomplexobj(v) else v
        return {float(q): float(np.quantile(v, q)) for q in qs}

    def summary(self, name) -> ObservableStats:
        return ObservableStats(self.mean(name), self.variance(name), self.stderr(name), self.quantiles(name))

    def table(self):
        """Rows (name, re mean, im mean, variance, stderr, median) in name order."""
        rows = []
        for name in self.names():
            m = complex(self.mean(name))
            rows.append((name, m.real, m.imag, self.variance(name), self.stderr(name), self.quantiles(name)[0.5]))
        return rows


def _target_key(t) -> str:
    return "R[" + ",".join(str(c) for c in t) + "]"


def _realization_observables(spec: EnsembleSpec, index: int, weights):
    lat = spec.lattice
    real = sample_disorder(lat, spec.seed, 0 if spec.fixed_index else index)
    cols, report = resolvent_columns(real, spec.z, spec.lam, [spec.source], spec.method)
    col = cols[0]
    u = col.values
    src = np.array(col.source)
    out = {"R00": col.diagonal, "ward_error": col.ward_error, "residual": col.residual}
    for t in spec.targets:
        out[_target_key(t)] = complex(u[tuple((src + np.array(t)) % spec.L)])
    for q in spec.q_norms:
        out[f"norm{q:g}"] = col.norm(q)
    out["eta_l2"] = spec.eta * float(np.vdot(u, u).real)
    dens = np.abs(u) ** 2
    for name, w in weights.items():
        out[name] = float(np.sum(w * dens))
    return out, (u if spec.retain_columns else None)


def run_ensemble(spec: EnsembleSpec, weights: dict | None = None, workers: int | None = None) -> EnsembleStats:
    """Run all realizations; ``weights`` maps observable names to site fields
    w(y) evaluated as sum_y w(y) |R_{x y}|^2 (x the source)."""
    weights = dict(weights or {})
    if spec.profile is not None and "profile" not in weights:
        weights["profile"] = spec.profile.sample(spec.lattice, spec.source)
    workers = workers or default_workers()
    idx = range(spec.realizations)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: _realization_observables(spec, i, weights), idx))
    else:
        results = [_realization_observables(spec, i, weights) for i in idx]
    names = results[0][0].keys()
    values = {}
    for name in names:
        arr = np.array([r[0][name] for r in results])
        values[name] = arr
    manifest = {
        "config_hash": spec.config_hash(),
        "seed": spec.seed,
        "realizations": spec.realizations,
        "version": __version__,
        "spec": spec.to_dict(),
    }
    cols = [r[1] for r in results] if spec.retain_columns else None
    return EnsembleStats(spec, values, len(results), manifest, cols)


@dataclass(frozen=True)
class LocalLawReport:
    lam: float
    eta: float
    theta: complex
    mean_R00: complex
    theta_gap: float
    entry_gap: float
    fluctuation: float
    stderr_R00: float
    entries: dict


def local_law_report(spec: EnsembleSpec, solution=None, stats: EnsembleStats | None = None) -> LocalLawReport:
    """|mean R_xy - M_xy| over the target entries and the median over
    realizations of max_y |R_xy - mean R_xy|."""
    lat = spec.lattice
    if solution is None:
        solution = solve_theta(spec.d, spec.z, spec.lam, lat)
    M = build_M(solution, lat)
    stats = stats or run_ensemble(spec)
    entry_gap = 0.0
    entries = {}
    dev = np.zeros(stats.completed)
    for t in spec.targets:
        key = _target_key(t)
        mean = stats.mean(key)
        theory = M.entry(t, (0,) * spec.d)
        entries[key] = (mean, theory)
        entry_gap = max(entry_gap, abs(mean - theory))
        dev = np.maximum(dev, np.abs(stats.values[key] - mean))
    mean00 = stats.mean("R00")
    return LocalLawReport(
        spec.lam,
        spec.eta,
        solution.theta,
        mean00,
        abs(mean00 - solution.theta),
        entry_gap,
        float(np.median(dev)),
        stats.stderr("R00"),
        entries,
    )


@dataclass(frozen=True)
class ProfileReport:
    lam: float
    eta: float
    alpha: float
    scale: float
    observable: float  # (i) ensemble mean of sum_y a(y) |R_0y|^2
    stderr: float
    lattice_prediction: float  # (ii) (G a)(0)
    continuum_prediction: float  # (iii) u(0)
    ward_gap: float  # max over realizations |eta |R delta_0|^2 - Im R_00| / eta |R delta_0|^2

    @property
    def gap_i_ii(self) -> float:
        """|(i) - (ii)| eta."""
        return abs(self.observable - self.lattice_prediction) * self.eta

    @property
    def gap_ii_iii(self) -> float:
        return abs(self.lattice_prediction - self.continuum_prediction) * self.eta

    @property
    def gap_i_iii(self) -> float:
        return abs(self.observable - self.continuum_prediction) * self.eta

    @property
    def relative_gap_i_ii(self) -> float:
        return abs(self.observable - self.lattice_prediction) / abs(self.observable)

    @property
    def relative_gap_ii_iii(self) -> float:
        return abs(self.lattice_prediction - self.continuum_prediction) / abs(self.lattice_prediction)


def profile_bump(spec: EnsembleSpec, alpha: float, kind: str = "smooth") -> RadialBump:
    """Test function at scale alpha lam^{-1} eta^{-1/2}."""
    return RadialBump(kind, alpha / (spec.lam * np.sqrt(spec.eta)))


def theory_for(spec: EnsembleSpec, table=None):
    lat = spec.lattice
    sol = solve_theta(spec.d, spec.z, spec.lam, lat)
    kern = build_kernel(build_M(sol, lat))
    return sol, kern, transport_coefficients(kern, table)


def profile_predictions(kernel, coefficients: TransportCoefficients, bump: RadialBump) -> tuple[float, float]:
    """((G a)(0), u(0)) for a the bump sampled around the origin."""
    lat = kernel.lattice
    a = bump.sample(lat)
    g = float(np.real(profile_apply(kernel, a).at(0)))
    u = float(elliptic_green(coefficients, bump, 0.0))
    return g, u


def profile_report(spec: EnsembleSpec, kernel, coefficients: TransportCoefficients, alpha: float, stats: EnsembleStats | None = None) -> ProfileReport:
    bump = profile_bump(spec, alpha)
    if bump.support_radius > spec.L / 4:
        raise ValueError(f"bump support {bump.support_radius:.2f} exceeds L/4 = {spec.L / 4}")
    a = bump.sample(spec.lattice, spec.source)
    stats = stats or run_ensemble(spec, {"profile": a})
    obs = stats.values["profile"]
    ward = np.abs(stats.values["eta_l2"] - stats.values["R00"].imag) / stats.values["eta_l2"]
    g, u = profile_predictions(kernel, coefficients, bump)
    return ProfileReport(
        spec.lam,
        spec.eta,
        alpha,
        bump.scale,
        float(np.mean(obs)),
        stats.stderr("profile"),
        g,
        u,
        float(np.max(ward)),
    )


@dataclass(frozen=True)
class ScalingReport:
    lam: float
    eta: float
    ell: float
    observable: float
    stderr: float
    limit: float
    finite_candidate: float

    @property
    def gap(self) -> float:
        return abs(self.observable - self.limit)

    @property
    def finite_gap(self) -> float:
        return abs(self.observable - self.finite_candidate)


def scaling_limit(coefficients: TransportCoefficients, f0) -> float:
    """c_d beta_E int f0(y) |y|^{2-d} dy (d >= 3) or with -log|y| (d = 2, mean-zero f0)."""
    d = coefficients.d
    if d == 2:
        if abs(radial_moment(f0, 2)) > 1e-9 * radial_moment(_abs(f0), 2):
            raise ValueError("in d = 2 the test function must have zero integral (divergence form)")
        integral = radial_moment(f0, 2, log=True)
    else:
        integral = radial_moment(f0, d, power=2.0 - d)
    return newton_constant(d) * coefficients.beta_E * integral


class _abs:
    def __init__(self, f):
        self.f = f
        self.support_radius = f.support_radius

    def __call__(self, r):
        return np.abs(self.f(r))


def scaling_report(spec: EnsembleSpec, f0, kappa: float, kappa_prime: float, coefficients: TransportCoefficients | None = None, stats=None) -> ScalingReport:
    """lam^-2 ell^-2 sum_x f0(x/ell) |R_0x|^2 with ell = lam^{-2 - kappa'/2}.

    ``spec.eta`` should equal lam^{2 + kappa}; it is checked.  The finite-lam
    candidate is u~(0) for (-vartheta Delta + alpha^2 m) u~ = f0 with
    alpha^2 = lam^2 ell^2 eta.
    """
    if not np.isclose(spec.eta, spec.lam ** (2 + kappa), rtol=1e-9):
        raise ValueError("spec.eta must equal lam^(2 + kappa)")
    if not kappa_prime < kappa:
        raise ValueError("need kappa' < kappa")
    lam = spec.lam
    ell = lam ** (-2 - kappa_prime / 2)
    if ell > spec.L / 8:
        raise ValueError(f"scale ell = {ell:.2f} exceeds L/8 = {spec.L / 8} (wraparound)")
    if coefficients is None:
        coefficients = theory_for(spec)[2]
    w = f0.rescaled(ell).sample(spec.lattice, spec.source) / (lam**2 * ell**2)
    stats = stats or run_ensemble(spec, {"scaling": w})
    alpha = lam * ell * np.sqrt(spec.eta)
    finite = rescaled_elliptic_green(coefficients, f0, alpha, 0.0) if f0.support_radius > 0 else 0.0
    return ScalingReport(
        lam,
        spec.eta,
        ell,
        stats.mean("scaling"),
        stats.stderr("scaling"),
        scaling_limit(coefficients, f0),
        float(finite),
    )


@dataclass(frozen=True)
class RadialCutoffReport:
    r: float
    observable: float
    stderr: float
    phi: float
    phi_d: float

    @property
    def gap(self):
        return abs(self.observable - self.phi)


def radial_cutoff_report(spec: EnsembleSpec, r: float, coefficients: TransportCoefficients | None = None, chi: RadialBump | None = None, stats=None) -> RadialCutoffReport:
    """eta sum_x chi(x / (r lam^-1 eta^-1/2)) |R_0x|^2 against phi(r)."""
    from .spectra import phi_d

    chi = chi or RadialBump("c2", 1.0)
    coefficients = coefficients or theory_for(spec)[2]
    scale = r / (spec.lam * np.sqrt(spec.eta))
    if chi.rescaled(scale).support_radius > spec.L / 2:
        raise ValueError("cutoff support exceeds the torus")
    w = spec.eta * chi.rescaled(scale).sample(spec.lattice, spec.source)
    stats = stats or run_ensemble(spec, {"cutoff": w})
    return RadialCutoffReport(
        r,
        stats.mean("cutoff"),
        stats.stderr("cutoff"),
        radial_profile_phi(coefficients, r, chi),
        phi_d(spec.d, spec.lam, spec.eta),
    )


@dataclass(frozen=True)
class FluctuationReport:
    lam: float
    std_R00: float
    median_norm4: float
    ratio: float


def fluctuation_report(spec: EnsembleSpec, stats: EnsembleStats | None = None) -> FluctuationReport:
    """std of R_00 over realizations against lam (median |R delta_0|_4)^2.

    The column norm |R delta_0|_4 is a lower bound for |R|_{1->4}."""
    if 4.0 not in spec.q_norms:
        raise ValueError("spec.q_norms must include 4")
    stats = stats or run_ensemble(spec)
    std = float(np.sqrt(stats.variance("R00")))
    med = float(np.median(stats.values["norm4"]))
    scale = spec.lam * med**2
    ratio = std / scale if scale > 0 else 0.0
    return FluctuationReport(spec.lam, std, med, ratio)
