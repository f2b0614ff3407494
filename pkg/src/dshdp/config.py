"""Run configuration: a YAML document mapped onto :class:`RunConfig`."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import HyperPriors, ParameterError, Variant

SAMPLERS = ("direct", "weaklimit")
DEFAULT_L = {"poisson": 200, "ar": 40}


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    train: str | None = None
    test: str | None = None
    init_labels: str | None = None
    truth_labels: str | None = None
    output: str = "run"


@dataclass
class GridSpec:
    phi: int = 100
    eta: int = 100  # also the concentration axis of the sticky grid


@dataclass
class RunConfig:
    variant: str = "ds"
    sampler: str = "direct"
    L: int | None = None
    emission: dict = field(default_factory=lambda: {"family": "multinomial"})
    iterations: int = 1000
    burn_in: int = 500
    thin: int = 10
    chains: int = 1
    seed: int = 0
    priors: HyperPriors = field(default_factory=HyperPriors)
    grid: GridSpec = field(default_factory=GridSpec)
    paths: Paths = field(default_factory=Paths)
    standardize: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.priors, dict):
            self.priors = HyperPriors(**self.priors)
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)
        if isinstance(self.paths, dict):
            self.paths = Paths(**self.paths)
        self.emission = dict(self.emission)
        if self.sampler == "weaklimit" and self.L is None:
            self.L = DEFAULT_L.get(self.emission.get("family"), 20)
        self.validate()

    @property
    def family(self):
        return self.emission.get("family")

    def validate(self):
        try:
            Variant.parse(self.variant)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.sampler == "direct" and self.L is not None:
            raise ConfigError("L is only meaningful for the weak-limit sampler")
        if self.sampler == "weaklimit" and int(self.L) < 1:
            raise ConfigError("L must be at least 1")
        if self.family not in ("multinomial", "gaussian", "poisson", "ar"):
            raise ConfigError(f"unknown emission family {self.family!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.chains < 1:
            raise ConfigError("chains must be at least 1")
        if self.grid.phi < 2 or self.grid.eta < 2:
            raise ConfigError("grids must be at least 2x2")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be nonnegative")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)

    def resolve_paths(self, base):
        """Relative data paths become relative to ``base`` (the config file's folder)."""
        base = Path(base)
        p = dataclasses.replace(self.paths)
        for name in ("train", "test", "init_labels", "truth_labels", "output"):
            v = getattr(p, name)
            if v is not None and not Path(v).is_absolute():
                setattr(p, name, str(base / v))
        out = dataclasses.replace(self)
        out.paths = p
        return out


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return RunConfig.from_dict(data).resolve_paths(path.parent)


def save_config(config: RunConfig, path):
    Path(path).write_text(config.to_yaml())
