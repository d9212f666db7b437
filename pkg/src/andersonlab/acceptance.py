"""The acceptance battery: eleven numbered criteria, each a self-contained
computation returning a pass/fail verdict with the measured numbers.

Where the underlying estimates carry unknown constants the criterion is a
trend check over a short sweep (strict monotonicity plus a loose ceiling);
exact identities are checked at fixed tolerances.  All random inputs derive
from ``seed`` (default 0) through the counter-based disorder streams.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .disorder import (
    dense_hamiltonian,
    derivative_check,
    normal_stream,
    one_to_q_norm,
    resolvent_columns,
    sample_disorder,
)
from .ensemble import EnsembleSpec, local_law_report, profile_bump, profile_predictions, profile_report, run_ensemble, theory_for
from .lattice import TorusLattice, free_resolvent_column
from .sce import build_kernel, build_M, neumann_profile, neumann_tail_bound, profile_apply, solve_theta, transport_coefficients, transport_from_params
from .spectra import crossing_integral
from .spectral import (
    dense_eig,
    localization_count_bound_check,
    localized_set,
    plancherel_identity_check,
    propagator_moments,
)

QUICK = (1, 2, 3, 4, 9, 10, 11)

TITLES = {
    1: "exact identities",
    2: "oracle equivalence",
    3: "derivative check",
    4: "Plancherel identity",
    5: "transport-coefficient trends",
    6: "local-law trend",
    7: "diffusive-profile comparison",
    8: "a priori norm bound",
    9: "crossing integral",
    10: "localization dichotomy",
    11: "reproducibility",
}

BUDGET = {1: 60, 2: 120, 3: 60, 4: 120, 5: 300, 6: 1200, 7: 1800, 8: 600, 9: 120, 10: 300, 11: 300}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = 0.0

    @property
    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} [{verdict}] {self.title} ({self.seconds:.1f} s)"

    def as_dict(self):
        return {
            "number": self.number,
            "title": self.title,
            "passed": self.passed,
            "seconds": self.seconds,
            "budget": self.budget,
            "details": _jsonable(self.details),
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def strictly_decreasing(values) -> bool:
    return all(a > b for a, b in zip(values[:-1], values[1:]))


# --- 1 --------------------------------------------------------------------------


def criterion_1(seed=0):
    checks = {}
    # Ward identity on iterative and dense solves
    worst = 0.0
    for L, method in ((32, "iterative"), (16, "dense")):
        lat = TorusLattice(2, L)
        real = sample_disorder(lat, seed, 0)
        for z in (1 + 0.3j, -2.5 + 0.05j):
            _, rep = resolvent_columns(real, z, 0.5, [(0, 0), (3, -5)], method)
            worst = max(worst, rep.worst_ward)
    checks["ward"] = (worst, worst <= 1e-8)
    # kernel mass, closed-form m, constant-field profile
    km = cm = cf = 0.0
    for d, L, E, eta, lam in ((2, 64, 1.0, 0.25, 0.5), (2, 64, -2.0, 0.1, 0.7), (3, 16, 1.0, 0.3, 0.6)):
        lat = TorusLattice(d, L)
        sol = solve_theta(d, complex(E, eta), lam, lat)
        kern = build_kernel(build_M(sol, lat))
        q = kern.walk_mass()
        km = max(km, abs(q - kern.predicted_walk_mass()))
        co = transport_coefficients(kern)
        cm = max(cm, abs(co.m - co.m_closed) / abs(co.m_closed))
        exact = kern.mass() / (1.0 - q)
        got = profile_apply(kern, np.ones(lat.shape)).values
        cf = max(cf, float(np.max(np.abs(got - exact))) / exact)
    checks["kernel_mass"] = (km, km <= 1e-10)
    checks["m_closed_form"] = (cm, cm <= 1e-9)
    checks["constant_profile"] = (cf, cf <= 1e-12)
    # propagator total mass
    lat = TorusLattice(2, 8)
    eig = dense_eig(lat, sample_disorder(lat, seed, 0), 0.8)
    pm = max(abs(propagator_moments(eig, T, (1, 2)).total_mass - 1.0) for T in (0.0, 0.7, 5.0, 80.0))
    checks["propagator_mass"] = (pm, pm <= 1e-10)
    return all(ok for _, ok in checks.values()), checks


# --- 2 --------------------------------------------------------------------------


def criterion_2(seed=0):
    checks = {}
    lat = TorusLattice(2, 16)
    real = sample_disorder(lat, seed, 0)
    z, lam = 1 + 0.3j, 0.5
    sources = [(0, 0), (5, -3), (-8, 7)]
    it, _ = resolvent_columns(real, z, lam, sources, "iterative")
    dn, _ = resolvent_columns(real, z, lam, sources, "dense")
    gap = max(float(np.max(np.abs(a.values - b.values))) for a, b in zip(it, dn))
    checks["iterative_vs_dense"] = (gap, gap <= 1e-9)
    small = TorusLattice(2, 4)
    laplacian = dense_hamiltonian(sample_disorder(small, seed, 0), 0.0)
    worst = 0.0
    for zz in (1 + 0.3j, -3.7 + 0.01j, 0.2j):
        G = np.linalg.inv(laplacian - zz * np.eye(small.site_count))
        for j in range(small.site_count):
            col = free_resolvent_column(small, zz, small.coord(j)).values.ravel()
            worst = max(worst, float(np.max(np.abs(col - G[:, j]))))
    checks["free_fft_vs_dense"] = (worst, worst <= 1e-12)
    lat = TorusLattice(2, 64)
    sol = solve_theta(2, 1 + 0.25j, 0.5, lat)
    kern = build_kernel(build_M(sol, lat))
    a = np.exp(-lat.radius_squared / 20.0)
    diff = kern.lam**2 * float(np.max(np.abs(profile_apply(kern, a).values - neumann_profile(kern, a).values)))
    bound = neumann_tail_bound(kern) * float(np.max(np.abs(a)))
    checks["neumann_vs_fourier"] = ({"difference": diff, "tail_bound": bound}, diff <= bound)
    return all(ok for _, ok in checks.values()), checks


# --- 3 --------------------------------------------------------------------------


def criterion_3(seed=0):
    lat = TorusLattice(2, 16)
    real = sample_disorder(lat, seed, 0)
    args = (real, 1 + 0.3j, 0.5, (0, 0), (2, 1), (1, 1))
    errs = {eps: derivative_check(*args, eps=eps).relative_error for eps in (1e-5, 5e-6)}
    ratio = errs[5e-6] / errs[1e-5]
    details = {"error_1e-5": errs[1e-5], "error_5e-6": errs[5e-6], "ratio": ratio}
    return errs[1e-5] <= 1e-3 and 0.4 <= ratio <= 0.6, details


# --- 4 --------------------------------------------------------------------------


def criterion_4(seed=0):
    lat = TorusLattice(2, 8)
    worst = 0.0
    for s in range(seed, seed + 5):
        eig = dense_eig(lat, sample_disorder(lat, s, 0), 0.5)
        psi = normal_stream(s, 10**6, lat.site_count) + 1j * normal_stream(s, 10**6 + 1, lat.site_count)
        psi /= np.linalg.norm(psi)
        for eta in (0.05, 0.2, 1.0):
            rep = plancherel_identity_check(eig, psi, eta, (0, 0))
            worst = max(worst, rep.gap)
    return worst <= 1e-6, {"worst_relative_gap": worst}


# --- 5 --------------------------------------------------------------------------


def criterion_5(seed=0, L=512):
    lams = (0.5, 0.35, 0.25)
    rows = [transport_from_params(2, 1.0, lam**2, lam, L) for lam in lams]
    m_gaps = [c.m_gap for c in rows]
    v_gaps = [c.vartheta_gap for c in rows]
    details = {
        "lam": lams,
        "m": [c.m for c in rows],
        "m_pred": [c.m_pred for c in rows],
        "m_gap": m_gaps,
        "vartheta": [c.vartheta for c in rows],
        "vartheta_pred": [c.vartheta_pred for c in rows],
        "vartheta_gap": v_gaps,
    }
    return strictly_decreasing(m_gaps) and strictly_decreasing(v_gaps), details


# --- 6 --------------------------------------------------------------------------


def criterion_6(seed=0, N=100):
    lams = (0.8, 0.6, 0.4)
    reps = [local_law_report(EnsembleSpec(2, 64, 1.0, lam**2, lam, N, seed=seed)) for lam in lams]
    gaps = [r.theta_gap for r in reps]
    flucs = [r.fluctuation for r in reps]
    details = {"lam": lams, "theta_gap": gaps, "stderr_R00": [r.stderr_R00 for r in reps], "fluctuation": flucs}
    return strictly_decreasing(gaps) and strictly_decreasing(flucs), details


# --- 7 --------------------------------------------------------------------------


def criterion_7(seed=0, N=50):
    out = {}
    theory = {}
    for lam in (0.4, 0.3):
        spec = EnsembleSpec(2, 128, 1.0, lam**2.05, lam, N, seed=seed)
        theory[lam] = (spec,) + theory_for(spec)
        rep = profile_report(spec, theory[lam][2], theory[lam][3], 0.3)
        out[lam] = rep
    rel = out[0.4].relative_gap_i_ii
    part1 = rel <= 0.25 and out[0.3].gap_i_ii < out[0.4].gap_i_ii
    spec, _, kern, co = theory[0.4]
    alphas = (0.3, 0.6, 1.2)
    gaps = []
    for alpha in alphas:
        g, u = profile_predictions(kern, co, profile_bump(spec, alpha))
        gaps.append(abs(g - u) / abs(g))
    part2 = strictly_decreasing(gaps)
    details = {
        "observable": {lam: r.observable for lam, r in out.items()},
        "stderr": {lam: r.stderr for lam, r in out.items()},
        "lattice_prediction": {lam: r.lattice_prediction for lam, r in out.items()},
        "relative_gap_lam0.4": rel,
        "normalized_gap": {lam: r.gap_i_ii for lam, r in out.items()},
        "part1": part1,
        "alpha": alphas,
        "lattice_vs_continuum_relative_gap": gaps,
        "part2": part2,
    }
    return part1 and part2, details


# --- 8 --------------------------------------------------------------------------


def criterion_8(seed=0, N=20, L=32, spread=4.0):
    lam = 0.4
    lat = TorusLattice(2, L)
    ratios, medians = [], []
    powers = (1.8, 2.0, 2.1)
    for p in powers:
        eta = lam**p
        vals = [one_to_q_norm(sample_disorder(lat, seed, i), complex(1.0, eta), lam, 4, budget=lat.site_count).value for i in range(N)]
        med = float(np.median(vals))
        medians.append(med)
        ratios.append(med / (lam**2 / eta + 1.0))
    C = max(ratios)
    details = {"eta_power": powers, "median_norm": medians, "ratio": ratios, "fitted_C": C, "spread": C / min(ratios)}
    return C / min(ratios) <= spread, details


# --- 9 --------------------------------------------------------------------------


def criterion_9(seed=0):
    etas = (0.5, 0.25, 0.125)
    I = [crossing_integral(2, complex(1.0, eta)) for eta in etas]
    scaled = [i * e for i, e in zip(I, etas)]
    monotone = all(a < b for a, b in zip(I[:-1], I[1:]))
    bounded = max(scaled) / min(scaled) <= 2.0
    return monotone and bounded, {"eta": etas, "I4": I, "I4_eta": scaled}


# --- 10 -------------------------------------------------------------------------


def criterion_10(seed=0):
    lat = TorusLattice(2, 16)
    r, eta = 4.0, 0.5
    fractions = {}
    worst_C = 0.0
    all_hold = True
    for lam in (0.0, 2.0, 50.0):
        real = sample_disorder(lat, seed, 0)
        eig = dense_eig(lat, real if lam else None, lam)
        fractions[lam] = localized_set(eig, r).count / lat.site_count
        for x0 in ((0, 0), (5, 3), (-4, 7)):
            for E0 in (float(np.median(eig.energies)), lam * real.value(x0) if lam else 1.0):
                rep = localization_count_bound_check(eig, E0, eta, r, x0, C=64.0)
                all_hold = all_hold and rep.holds
                worst_C = max(worst_C, rep.required_C)
    ok = fractions[0.0] == 0.0 and fractions[50.0] >= 0.9 and all_hold
    return ok, {"localized_fraction": fractions, "count_bound_holds": all_hold, "largest_required_C": worst_C}


# --- 11 -------------------------------------------------------------------------


def criterion_11(seed=0):
    from .cli import main

    spec = EnsembleSpec(2, 16, 1.0, 0.3, 0.5, 6, seed=seed)
    one = run_ensemble(spec, workers=1)
    three = run_ensemble(spec, workers=3)
    threads = all(np.array_equal(one.values[k], three.values[k]) for k in one.values)
    identical = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "run.cfg"
        cfg.write_text(
            "[run]\nsubcommand = ensemble\nseed = %d\n[physics]\nd = 2\nL = 16\nE = 1.0\neta = 0.3\nlam = 0.5\n"
            "[numerics]\nrealizations = 4\n[output]\nsvg = true\n" % seed
        )
        runs = [
            ("ensemble", ["ensemble", "--config", str(cfg)]),
            ("spectra", ["spectra", "--d", "2", "--points", "41"]),
            ("sce", ["sce", "--d", "2", "--E", "1.0", "--eta", "0.25", "--lam", "0.5", "--L", "32"]),
        ]
        for name, argv in runs:
            a, b, c = tmp / f"{name}_a", tmp / f"{name}_b", tmp / f"{name}_c"
            codes = [main(argv + ["--output", str(a)]), main(argv + ["--output", str(b)])]
            codes.append(main(["rerun", "--manifest", str(a / "manifest.json"), "--output", str(c)]))
            files = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
            same = all(codes[i] == 0 for i in range(3)) and all(
                (a / f).read_bytes() == (b / f).read_bytes() == (c / f).read_bytes() for f in files
            )
            identical[name] = same
    return threads and all(identical.values()), {"thread_independent": threads, "byte_identical": identical}


CRITERIA = {n: globals()[f"criterion_{n}"] for n in TITLES}


def run_criterion(n: int, seed: int = 0) -> CriterionResult:
    t = time.perf_counter()
    passed, details = CRITERIA[n](seed=seed)
    dt = time.perf_counter() - t
    if dt > BUDGET[n]:
        details = dict(details, over_budget=True)
        passed = False
    return CriterionResult(n, TITLES[n], bool(passed), details, dt, BUDGET[n])


def run_acceptance(numbers=None, quick: bool = False, seed: int = 0, echo=print) -> list[CriterionResult]:
    numbers = numbers or (QUICK if quick else tuple(TITLES))
    results = []
    for n in numbers:
        res = run_criterion(n, seed)
        if echo:
            echo(res.line)
        results.append(res)
    return results
