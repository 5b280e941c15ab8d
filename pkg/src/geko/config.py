"""Experiment configuration: dataclasses, JSON loading, env overrides, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "GEKO_"
METHODS = ("geko", "kic", "direct", "havok")


@dataclass
class SystemConfig:
    name: str = "vdp"
    mu: float = 1.2
    Ts: float = 0.1
    substeps: int = 10
    x_box: list = field(default_factory=lambda: [[-3.0, -3.0], [3.0, 3.0]])
    u_box: list = field(default_factory=lambda: [[-1.0], [1.0]])


@dataclass
class DataConfig:
    count: int | None = None  # None: samples_per_feature x feature dimension
    samples_per_feature: int = 4
    sampler: str = "uniform"
    chain_length: int = 50


@dataclass
class ObservablesConfig:
    kind: str = "imq"
    n_z: int = 100
    n_v: int = 10
    sigma_x: float = 1.0
    sigma_u: float = 0.54
    beta: float = 1.0
    center_method: str = "uniform"
    kic_centers: int = 500
    kic_sigma: float = 1.0
    x_order: int = 5
    u_order: int = 1
    havok_rank: float | None = None


@dataclass
class FitConfig:
    method: str = "geko"
    gamma: float = 1e-6
    decoder: str = "direct"
    kic_mode: str = "lifted"


@dataclass
class EvalConfig:
    x0: list = field(default_factory=lambda: [1.0, 0.0])
    amplitude: float = 0.3
    frequency: float = 0.2
    horizon: int = 50


@dataclass
class LemmaConfig:
    N: int = 1
    length: int | None = None  # None: enough columns for full row rank, doubled
    gamma: float | None = None  # None: use fit.gamma
    raw_output: bool = False


@dataclass
class BenchConfig:
    sweep: list = field(
        default_factory=lambda: [
            ["geko", 50, 10],
            ["geko", 100, 10],
            ["geko", 200, 10],
            ["kic", 500, 0],
        ]
    )
    workers: int = 1
    large_threshold: int = 5000


@dataclass
class ExperimentConfig:
    seed: int = 3
    out: str = "out"
    system: SystemConfig = field(default_factory=SystemConfig)
    data: DataConfig = field(default_factory=DataConfig)
    observables: ObservablesConfig = field(default_factory=ObservablesConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    lemma: LemmaConfig = field(default_factory=LemmaConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    # derived seeds keep the data and the two center sets independent
    @property
    def data_seed(self) -> int:
        return self.seed

    @property
    def state_center_seed(self) -> int:
        return self.seed + 100

    @property
    def input_center_seed(self) -> int:
        return self.seed + 200

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "")

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def header(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed}

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.fit.method not in METHODS:
            raise ConfigError(f"fit.method must be one of {METHODS}, got {self.fit.method!r}")
        if self.observables.kind not in ("imq", "identity"):
            raise ConfigError(f"observables.kind must be imq or identity, got {self.observables.kind!r}")
        if self.system.name != "vdp":
            raise ConfigError(f"unknown system {self.system.name!r}")
        xb, ub = self.system.x_box, self.system.u_box
        if len(xb) != 2 or len(xb[0]) != len(xb[1]) or len(ub) != 2 or len(ub[0]) != len(ub[1]):
            raise ConfigError("boxes must be [[lower...], [upper...]]")
        if len(self.eval.x0) != len(xb[0]):
            raise ConfigError(f"eval.x0 has {len(self.eval.x0)} entries, the state box {len(xb[0])}")
        if self.system.Ts <= 0 or self.system.substeps < 1:
            raise ConfigError("system.Ts must be positive and substeps >= 1")
        if self.eval.horizon < 0:
            raise ConfigError("eval.horizon must be >= 0")
        for name in ("n_z", "n_v", "kic_centers"):
            if getattr(self.observables, name) < 1:
                raise ConfigError(f"observables.{name} must be >= 1")
        if self.fit.gamma < 0:
            raise ConfigError("fit.gamma must be >= 0")
        if self.lemma.N < 1:
            raise ConfigError("lemma.N must be >= 1")
        for row in self.bench.sweep:
            if len(row) != 3 or row[0] not in METHODS:
                raise ConfigError(f"bad sweep entry {row!r}; expected [method, n_z, n_v]")
        return self


def _build(cls, d: dict, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(prefix + k for k in unknown))}")
    kwargs = {}
    for key, value in d.items():
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _leaf_paths(d: dict, prefix=()):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _leaf_paths(v, prefix + (k,))
        else:
            yield prefix + (k,)


def apply_env(raw: dict, environ=None) -> dict:
    """Override leaves from ``GEKO_<PATH>`` variables (dots become underscores).

    Values are parsed as JSON when possible, else taken as strings.
    """
    environ = os.environ if environ is None else environ
    base = ExperimentConfig.from_dict(raw).to_dict()
    for path in _leaf_paths(base):
        var = ENV_PREFIX + "_".join(path).upper()
        if var not in environ:
            continue
        text = environ[var]
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        for k in path[:-1]:
            node = node.setdefault(k, {})
        node[path[-1]] = value
    return raw


def preset_names() -> list:
    return sorted(p.name for p in resources.files("geko.presets").iterdir() if p.name.endswith(".cfg"))


def _read_source(source) -> tuple[str, str]:
    path = Path(source)
    if path.exists():
        return path.read_text(encoding="utf-8"), str(path)
    name = str(source) if str(source).endswith(".cfg") else f"{source}.cfg"
    res = resources.files("geko.presets") / name
    if res.is_file():
        return res.read_text(encoding="utf-8"), f"preset {name}"
    raise ConfigError(f"config {source!r} not found (presets: {', '.join(preset_names())})")


def load_config(source=None, environ=None, seed: int | None = None) -> ExperimentConfig:
    """Load a config file or bundled preset, apply env overrides, validate.

    ``source=None`` gives the defaults (which equal the ``vdp_paper`` preset).
    """
    raw = {}
    if source is not None:
        text, where = _read_source(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}:{exc.lineno}: {exc.msg}") from None
    raw = apply_env(raw, environ)
    cfg = ExperimentConfig.from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
