"""Run configuration (flat INI with sections) and reproducibility manifests."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields

from . import __version__

SUBCOMMANDS = ("spectra", "sce", "profile-theory", "resolve", "eig", "ensemble", "accept")

# section -> field names; every RunConfig field lives in exactly one section
_SECTIONS = {
    "run": ("subcommand", "seed", "output", "workers"),
    "physics": ("d", "L", "E", "eta", "lam"),
    "numerics": ("realizations", "index", "columns", "q", "method", "grid", "points", "alpha", "r", "kappa", "kappa_prime", "source"),
    "output": ("csv", "json", "svg", "log_scale"),
}


@dataclass
class RunConfig:
    subcommand: str = "ensemble"
    d: int = 2
    L: int = 64
    E: float = 1.0
    eta: float = 0.16
    lam: float = 0.4
    realizations: int = 10
    index: int = 0  # realization index for single-sample subcommands
    columns: int = 1  # resolvent columns per sample
    q: float = 4.0
    seed: int = 0
    output: str = "out"
    workers: int = 1
    method: str = "auto"
    grid: int = 0  # 0: module default
    points: int = 401  # energy samples for the spectra table
    alpha: float = 0.3
    r: float = 1.0
    kappa: float = 0.1
    kappa_prime: float = 0.05
    source: tuple = field(default_factory=tuple)
    csv: bool = True
    json: bool = True
    svg: bool = True
    log_scale: bool = False

    def __post_init__(self):
        self.source = tuple(int(c) for c in self.source)
        self.validate()

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if self.L < 2 or self.L % 2:
            raise ValueError(f"L must be an even integer >= 2, got {self.L}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.realizations < 1:
            raise ValueError(f"N (realizations) must be >= 1, got {self.realizations}")
        if self.columns < 1:
            raise ValueError(f"columns must be >= 1, got {self.columns}")
        if self.points < 2:
            raise ValueError(f"points must be >= 2, got {self.points}")
        if self.source and len(self.source) != self.d:
            raise ValueError(f"source needs {self.d} coordinates, got {len(self.source)}")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        values = asdict(self)
        for section, names in _SECTIONS.items():
            cp[section] = {n: _encode(values[n]) for n in names}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for section in cp.sections():
            for key, raw in cp[section].items():
                if key not in types:
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
                kwargs[key] = _decode(raw, getattr(cls, key, None) if key != "source" else ())
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ini())

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("output", "workers")}
        blob = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(c) for c in v)
    return str(v)


def _decode(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(c) for c in raw.split(",") if c.strip())
    return raw


def module_versions() -> dict:
    names = ("lattice", "spectra", "sce", "disorder", "spectral", "ensemble", "cli")
    return {n: __version__ for n in names}


@dataclass
class Manifest:
    config_hash: str
    seed: int
    parameters: dict
    started: float
    finished: float = 0.0
    versions: dict = field(default_factory=module_versions)
    outputs: list = field(default_factory=list)

    @classmethod
    def start(cls, config: RunConfig) -> "Manifest":
        # stored in JSON-normal form so save/load round-trips exactly
        params = json.loads(json.dumps(asdict(config), default=list))
        return cls(config.config_hash(), config.seed, params, time.time())

    def finish(self, outputs=()):
        self.finished = time.time()
        self.outputs = sorted(outputs)
        return self

    def config(self) -> RunConfig:
        params = dict(self.parameters)
        params["source"] = tuple(params.get("source", ()))
        return RunConfig(**params)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=list)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        return cls(**json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path) as fh:
            return cls.from_json(fh.read())
