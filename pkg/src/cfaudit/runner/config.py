"""Experiment configuration: named profiles, YAML overlays, strict key checking."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..citest import CitConfig
from ..generative import GenConfig
from ..scm import VARIANTS
from ..zoo import FAMILIES


class ConfigError(ValueError):
    pass


@dataclass
class ScmConfig:
    k: int = 8
    n: int = 3
    sigma: float = 0.01
    prior: float = 0.3


@dataclass
class EcaConfig:
    n_units: int = 500
    n_noise: int = 32
    tau: float = 0.05


DESK_FAMILIES = ("logistic", "tree-depth5", "forest50", "mlp-16-8-4")


@dataclass
class ExperimentConfig:
    variants: list = field(default_factory=lambda: ["linear", "quadratic", "sin"])
    scm: ScmConfig = field(default_factory=ScmConfig)
    n_train: int = 4000
    n_test: int = 500
    families: list = field(default_factory=lambda: list(DESK_FAMILIES))
    zoo_seeds: list = field(default_factory=lambda: list(range(10)))
    generative: GenConfig = field(default_factory=GenConfig)
    cit: CitConfig = field(default_factory=CitConfig)
    eca: EcaConfig = field(default_factory=EcaConfig)
    alpha: float = 0.05
    seed: int = 0
    out: str = "runs/desk"
    workers: int = 1

    def __post_init__(self):
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown dataset variants {bad}; choose from {list(VARIANTS)}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ConfigError(f"unknown classifier families {bad}")
        if len(set(self.variants)) != len(self.variants) or len(set(self.families)) != len(self.families):
            raise ConfigError("variants and families must not repeat")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigError("n_train must be >= 2 and n_test >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.sync_seeds()

    def sync_seeds(self):
        # one master seed drives the generator and the test's Monte Carlo streams
        self.generative.seed = self.seed
        self.cit.seed = self.seed
        self.cit.alpha = self.alpha

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generative"].pop("seed")
        d["cit"].pop("seed")
        d["cit"].pop("alpha")
        return d

    @property
    def hash(self) -> str:
        """Fingerprint of everything that affects results (not the output folder or worker count)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def dataset_hash(self, variant: str) -> str:
        """Fingerprint of the settings that affect one dataset's rows."""
        d = self.to_dict()
        for key in ("out", "workers", "variants", "families", "zoo_seeds"):
            d.pop(key)
        d["variant"] = variant
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


PROFILES = {
    "desk": {},
    "paper": {
        "variants": list(VARIANTS),
        "scm": {"k": 32},
        "n_train": 10000,
        "n_test": 1000,
        "families": list(FAMILIES),
        "out": "runs/paper",
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _check_keys(d: dict, kind, where: str):
    allowed = {f.name for f in fields(kind)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def from_dict(d: dict) -> ExperimentConfig:
    """Build a config from plain data; any unrecognized key is an error."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    d = dict(d)
    _check_keys(d, ExperimentConfig, "top-level")
    kw = {}
    for name, kind in (("scm", ScmConfig), ("eca", EcaConfig)):
        sub = d.pop(name, None) or {}
        _check_keys(sub, kind, name)
        kw[name] = kind(**sub)
    gen = d.pop("generative", None) or {}
    if "seed" in gen:
        raise ConfigError("generative.seed is derived from the master seed; set `seed` instead")
    try:
        kw["generative"] = GenConfig.from_dict(gen)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cit = d.pop("cit", None) or {}
    if "seed" in cit or "alpha" in cit:
        raise ConfigError("cit.seed and cit.alpha come from the top-level `seed` and `alpha`")
    _check_keys(cit, CitConfig, "cit")
    try:
        kw["cit"] = CitConfig(**cit)
        return ExperimentConfig(**kw, **d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def profile_dict(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return copy.deepcopy(PROFILES[name])


def load_config(path=None, profile: str = "desk", overrides: dict | None = None) -> ExperimentConfig:
    """Profile defaults, then the YAML file at ``path``, then ``overrides``."""
    d = profile_dict(profile)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
        d = _merge(d, user)
    d = _merge(d, {k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(d)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
