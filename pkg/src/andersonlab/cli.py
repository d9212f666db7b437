"""Command-line driver.

    andersonlab spectra  --d 2 [--points 401]
    andersonlab sce      --d 2 --E 1 --eta 0.25 --lam 0.5 [--L 64]
    andersonlab profile-theory --d 2 --E 1 --eta 0.15 --lam 0.4 [--L 128 --alpha 0.3]
    andersonlab resolve  --d 2 --L 64 --E 1 --eta 0.16 --lambda 0.4 [--columns 4 --q 4]
    andersonlab eig      --d 2 --L 16 --lam 5 [--r 4]
    andersonlab ensemble --config run.cfg
    andersonlab accept   [--quick] [--only 1 2 ...]
    andersonlab rerun    --manifest out/manifest.json

Every run writes its tables (CSV, '{:.16e}'), a JSON summary, SVG figures
where a plot applies, and manifest.json into --output.  Exit codes: 0 ok,
1 runtime failure, 2 usage error.  ANDERSONLAB_THREADS sets the default
worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import Manifest, RunConfig
from .disorder import SolveError, default_workers

FLOAT = "{:.16e}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return FLOAT.format(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": float(v.real), "im": float(v.imag)}
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


class Outputs:
    """Collects the files written by one run, honouring the format flags."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.dir = Path(config.output)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def csv(self, name, header, rows):
        if self.config.csv:
            write_csv(self.dir / name, header, rows)
            self.files.append(name)

    def json(self, name, obj):
        if self.config.json:
            write_json(self.dir / name, obj)
            self.files.append(name)

    def svg(self, name, table, kind, title=None):
        if self.config.svg:
            from .plotting import emit_plot

            emit_plot(table, kind, self.dir / name, log=self.config.log_scale, title=title)
            self.files.append(name)


# --- pipelines ------------------------------------------------------------------


def run_spectra(cfg: RunConfig, out: Outputs):
    from .spectra import CriticalSet, DispersionTable, crossing_integral

    table = DispersionTable.build(cfg.d)
    edge = 2.0 * cfg.d
    E = np.linspace(-edge, edge, cfg.points)
    rho, nu = table.rho(E), table.nu(E)
    conf = [table.confidence(e) for e in E]
    out.csv("spectra.csv", ["E", "rho", "nu", "confidence"], zip(E, rho, nu, conf))
    etas = (0.5, 0.25, 0.125)
    I4 = [crossing_integral(cfg.d, complex(cfg.E, eta), N=512 if cfg.d == 2 else 64) for eta in etas]
    out.csv("crossing.csv", ["eta", "I4"], zip(etas, I4))
    out.json(
        "spectra.json",
        {"d": cfg.d, "total_mass": table.total_mass(), "critical_points": CriticalSet(cfg.d).finite_points, "crossing_E": cfg.E},
    )
    out.svg("spectra.svg", {"E": E, "rho": rho, "nu": nu}, "dos", title=f"d = {cfg.d}")


def _sce_solution(cfg: RunConfig):
    from .lattice import TorusLattice
    from .sce import build_kernel, build_M, solve_theta, transport_coefficients

    lat = TorusLattice(cfg.d, cfg.L)
    sol = solve_theta(cfg.d, complex(cfg.E, cfg.eta), cfg.lam, lat)
    kern = build_kernel(build_M(sol, lat))
    return sol, kern, transport_coefficients(kern)


def run_sce(cfg: RunConfig, out: Outputs):
    sol, kern, co = _sce_solution(cfg)
    out.csv(
        "sce.csv",
        ["lam", "eta", "theta_re", "theta_im", "m", "vartheta", "rho", "nu", "beta_E", "residual"],
        [[cfg.lam, cfg.eta, sol.theta.real, sol.theta.imag, co.m, co.vartheta, co.rho, co.nu, co.beta_E, sol.residual]],
    )
    axis = np.arange(cfg.L // 2)
    K = kern.values[(axis,) + (0,) * (cfg.d - 1)]
    out.csv("kernel.csv", ["x", "K"], zip(axis, K))
    names = ["m", "m_closed", "vartheta", "rho", "rho_tilde", "nu", "m_pred", "vartheta_pred", "beta_E", "tail_fraction"]
    out.json(
        "sce.json",
        {
            "theta": sol.theta,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "walk_mass": kern.walk_mass(),
            "coefficients": {n: getattr(co, n) for n in names},
            "lattice_too_small": co.lattice_too_small,
        },
    )


def run_profile_theory(cfg: RunConfig, out: Outputs):
    from .bumps import RadialBump
    from .sce import elliptic_green, profile_apply, radial_profile_phi

    sol, kern, co = _sce_solution(cfg)
    bump = RadialBump("smooth", cfg.alpha / (cfg.lam * np.sqrt(cfg.eta)))
    if bump.support_radius > cfg.L / 4:
        raise ValueError(f"bump support {bump.support_radius:.2f} exceeds L/4 = {cfg.L / 4}")
    G = profile_apply(kern, bump.sample(kern.lattice)).values.real
    x = np.arange(cfg.L // 4 + 1)
    lattice_vals = G[(x,) + (0,) * (cfg.d - 1)]
    cont = elliptic_green(co, bump, x.astype(float))
    out.csv("profile.csv", ["x", "lattice", "continuum"], zip(x, lattice_vals, cont))
    radii = np.geomspace(0.01, 20.0, 25)
    phi = [radial_profile_phi(co, r) for r in radii]
    out.csv("phi.csv", ["r", "phi"], zip(radii, phi))
    out.json(
        "profile.json",
        {
            "bump_scale": bump.scale,
            "lattice_at_0": lattice_vals[0],
            "continuum_at_0": cont[0],
            "relative_gap_at_0": abs(lattice_vals[0] - cont[0]) / abs(lattice_vals[0]),
            "rho_tilde": co.rho_tilde,
        },
    )
    out.svg("profile.svg", {"x": x, "observed": lattice_vals, "theory": cont}, "profile", title="lattice vs continuum")


def _column_sources(lat, cfg: RunConfig):
    """The configured source (default origin) followed by distinct seeded random sites."""
    first = lat.index(lat._position(cfg.source or None))
    if cfg.columns == 1:
        return [first]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, cfg.index, 2])))
    rest = [int(i) for i in rng.permutation(lat.site_count) if i != first][: cfg.columns - 1]
    return [first] + rest


def run_resolve(cfg: RunConfig, out: Outputs):
    from .disorder import resolvent_columns, sample_disorder
    from .lattice import TorusLattice

    lat = TorusLattice(cfg.d, cfg.L)
    if cfg.columns > lat.site_count:
        raise ValueError(f"columns must be <= L^d = {lat.site_count}")
    real = sample_disorder(lat, cfg.seed, cfg.index)
    sources = [lat.coord(i) for i in _column_sources(lat, cfg)]
    cols, report = resolvent_columns(real, complex(cfg.E, cfg.eta), cfg.lam, sources, cfg.method)
    rows = [
        (" ".join(map(str, lat.coord(lat.index(c.source)))), c.diagonal.real, c.diagonal.imag, c.ward_error, c.residual, c.iterations, c.norm(cfg.q))
        for c in cols
    ]
    out.csv("resolve.csv", ["x", "re_R_xx", "im_R_xx", "ward_err", "residual", "iters", f"norm_q{cfg.q:g}"], rows)
    summary = report.as_dict()
    summary["one_to_q_lower_bound"] = max(r[-1] for r in rows)
    summary["q"] = cfg.q
    out.json("resolve.json", summary)


def run_eig(cfg: RunConfig, out: Outputs):
    from .disorder import sample_disorder
    from .lattice import TorusLattice
    from .spectral import dense_eig, localized_set

    lat = TorusLattice(cfg.d, cfg.L)
    real = sample_disorder(lat, cfg.seed, cfg.index) if cfg.lam else None
    eig = dense_eig(lat, real, cfg.lam)
    rep = localized_set(eig, cfg.r, cfg.source or None)
    out.csv(
        "eig.csv",
        ["j", "energy", "ball_mass", "localized"],
        zip(range(eig.size), eig.energies, rep.masses, rep.flags),
    )
    summary = rep.as_dict()
    summary.update(residual=eig.residual, orthonormality_defect=eig.orthonormality_defect, fraction=rep.count / eig.size)
    out.json("eig.json", summary)


def run_ensemble_cmd(cfg: RunConfig, out: Outputs):
    from .ensemble import EnsembleSpec, local_law_report, run_ensemble
    from .sce import build_kernel, build_M, profile_apply, solve_theta

    spec = EnsembleSpec(cfg.d, cfg.L, cfg.E, cfg.eta, cfg.lam, cfg.realizations, seed=cfg.seed, source=cfg.source, method=cfg.method)
    lat = spec.lattice
    src = np.array(spec.source)
    ks = np.arange(cfg.L // 4 + 1)
    weights = {}
    for k in ks:
        w = np.zeros(lat.shape)
        w[tuple((src + np.eye(cfg.d, dtype=int)[0] * k) % cfg.L)] = 1.0
        weights[f"abs2[{k}]"] = w
    stats = run_ensemble(spec, weights, workers=cfg.workers)
    sol = solve_theta(cfg.d, spec.z, cfg.lam, lat)
    law = local_law_report(spec, sol, stats)
    kern = build_kernel(build_M(sol, lat))
    G = profile_apply(kern, lat.delta().values.real).values.real
    theory = G[(ks,) + (0,) * (cfg.d - 1)]
    observed = np.array([stats.mean(f"abs2[{k}]") for k in ks])
    se = np.array([stats.stderr(f"abs2[{k}]") for k in ks])
    out.csv("ensemble.csv", ["observable", "mean_re", "mean_im", "variance", "stderr", "median"], stats.table())
    names = stats.names()
    rows = []
    for i in range(stats.completed):
        row = [i]
        for n in names:
            v = stats.values[n][i]
            row += [v.real, v.imag] if np.iscomplexobj(stats.values[n]) else [v]
        rows.append(row)
    header = ["realization"]
    for n in names:
        header += [n + ".re", n + ".im"] if np.iscomplexobj(stats.values[n]) else [n]
    out.csv("realizations.csv", header, rows)
    out.csv("profile.csv", ["x", "observed", "stderr", "theory"], zip(ks, observed, se, theory))
    out.json(
        "ensemble.json",
        {
            "config_hash": stats.manifest["config_hash"],
            "theta": law.theta,
            "mean_R00": law.mean_R00,
            "theta_gap": law.theta_gap,
            "entry_gap": law.entry_gap,
            "fluctuation": law.fluctuation,
            "stderr_R00": law.stderr_R00,
        },
    )
    out.svg(
        "profile.svg",
        {"x": ks, "observed": observed, "theory": theory, "stderr": se},
        "profile",
        title="mean |R_0x|^2 along an axis",
    )


def run_accept(cfg: RunConfig, out: Outputs, quick=False, only=None):
    from .acceptance import run_acceptance

    results = run_acceptance(only, quick=quick, seed=cfg.seed)
    out.json("accept.json", [r.as_dict() for r in results])
    failed = [r.number for r in results if not r.passed]
    if failed:
        print(f"failed criteria: {failed}", file=sys.stderr)
        return 1
    return 0


PIPELINES = {
    "spectra": run_spectra,
    "sce": run_sce,
    "profile-theory": run_profile_theory,
    "resolve": run_resolve,
    "eig": run_eig,
    "ensemble": run_ensemble_cmd,
}


def execute(cfg: RunConfig, **extra) -> int:
    out = Outputs(cfg)
    manifest = Manifest.start(cfg)
    if cfg.subcommand == "accept":
        code = run_accept(cfg, out, **extra)
    else:
        PIPELINES[cfg.subcommand](cfg, out)
        code = 0
    manifest.finish(out.files).save(out.dir / "manifest.json")
    return code


# --- argument parsing -------------------------------------------------------------


def _physics(p, required=(), defaults=None):
    defaults = defaults or {}
    spec = {"d": int, "L": int, "E": float, "eta": float, "lam": float}
    for name, typ in spec.items():
        flags = (f"--{name}", "--lambda") if name == "lam" else (f"--{name}",)
        if name in required:
            p.add_argument(*flags, dest=name, type=typ, required=True)
        elif name in defaults:
            p.add_argument(*flags, dest=name, type=typ, default=defaults[name])


def _site(text):
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common(p):
    p.add_argument("--output", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--log-scale", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="andersonlab", description="Weak-disorder Anderson model laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("spectra", help="density of states and velocity density")
    _physics(p, required=("d",))
    p.add_argument("--points", type=int, default=401)
    _common(p)

    p = sub.add_parser("sce", help="self-consistent solution and transport coefficients")
    _physics(p, required=("d", "E", "eta", "lam"), defaults={"L": 64})
    _common(p)

    p = sub.add_parser("profile-theory", help="lattice vs continuum diffusive profile")
    _physics(p, required=("d", "E", "eta", "lam"), defaults={"L": 128})
    p.add_argument("--alpha", type=float, default=0.3)
    _common(p)

    p = sub.add_parser("resolve", help="one resolvent column for one disorder sample")
    _physics(p, required=("d", "L", "E", "eta", "lam"))
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--columns", type=int, default=1)
    p.add_argument("--q", type=float, default=4.0)
    p.add_argument("--source", type=_site, default=())
    p.add_argument("--method", choices=("auto", "dense", "iterative"), default="auto")
    _common(p)

    p = sub.add_parser("eig", help="dense eigendecomposition and localized set")
    _physics(p, required=("d", "L", "lam"))
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--r", type=float, default=4.0)
    _common(p)

    p = sub.add_parser("ensemble", help="disorder-averaged observables from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("accept", help="run the acceptance battery")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--only", type=int, nargs="+", choices=range(1, 12), metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="accept-out")

    p = sub.add_parser("rerun", help="regenerate a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", default=None)
    return parser


def config_from_args(args) -> tuple[RunConfig, dict]:
    extra = {}
    if args.subcommand == "rerun":
        cfg = Manifest.load(args.manifest).config()
        if args.output:
            cfg = replace(cfg, output=args.output)
        return cfg, extra
    if args.subcommand == "ensemble":
        cfg = RunConfig.load(args.config)
        cfg = replace(cfg, subcommand="ensemble")
        if args.output:
            cfg = replace(cfg, output=args.output)
        cfg = replace(cfg, workers=args.workers or default_workers())
        return cfg, extra
    if args.subcommand == "accept":
        extra = {"quick": args.quick, "only": tuple(args.only) if args.only else None}
    kw = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    if "log_scale" in vars(args):
        kw["log_scale"] = args.log_scale
    kw.setdefault("workers", default_workers())
    return RunConfig(**kw), extra


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, extra = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"andersonlab: error: {exc}", file=sys.stderr)
        return 2
    try:
        return execute(cfg, **extra)
    except (SolveError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"andersonlab: {cfg.subcommand} failed: {exc}", file=sys.stderr)
        history = getattr(exc, "history", None)
        if history:
            print(f"residual history (last 5): {list(history)[-5:]}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
