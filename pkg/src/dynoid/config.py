"""Experiment configuration: one JSON document, overridable from the CLI."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datagen import DroneDataConfig, TankDataConfig
from .errors import ConfigurationError, FormatError
from .reduction import AutoencoderConfig
from .regressor import TrainConfig
from .systems import DroneParams, LqWeights, PidGains, TankParams

SYSTEMS = ("tank", "drone2d")
SEED_ENV = "DYNOID_SEED"


@dataclass
class ExperimentConfig:
    """Everything one experiment needs.

    The nested dicts hold keyword overrides for the corresponding library
    dataclasses; unknown keys are rejected when the objects are built.
    """

    system: str = "tank"
    seed: int = 0
    window_sizes: list[int] = field(default_factory=lambda: [5, 10, 15, 20, 25, 30])
    plant: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    autoencoder: dict = field(default_factory=dict)
    rates: list[float] = field(default_factory=lambda: [0.15, 0.30, 0.45, 0.60, 0.75, 0.90])
    horizon: int = 100
    diagnostics: dict = field(default_factory=dict)
    out: str = "out"

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigurationError(f"unknown system {self.system!r}; valid: {', '.join(SYSTEMS)}")
        if not self.window_sizes or any(int(w) < 1 for w in self.window_sizes):
            raise ConfigurationError("window sizes must be >= 1")
        self.window_sizes = [int(w) for w in self.window_sizes]
        if any(not 0.0 <= float(r) < 1.0 for r in self.rates):
            raise ConfigurationError("compression rates must lie in [0, 1)")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")

    # -- builders ---------------------------------------------------------

    def data_config(self) -> TankDataConfig | DroneDataConfig:
        if self.system == "tank":
            kw = _tuples(self.data)
            return _build(TankDataConfig, kw, params=_build(TankParams, self.plant),
                          pid=_build(PidGains, self.controller))
        ctrl = dict(self.controller)
        kw = _tuples(self.data)
        if "horizon" in ctrl:
            kw["horizon"] = int(ctrl.pop("horizon"))
        return _build(DroneDataConfig, kw, params=_build(DroneParams, self.plant),
                      weights=_build(LqWeights, ctrl))

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, _tuples(self.training))

    def autoencoder_config(self) -> AutoencoderConfig:
        return _build(AutoencoderConfig, _tuples(self.autoencoder))

    # -- io -----------------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(**data)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path


def _tuples(d: dict) -> dict:
    # JSON has no tuples; dataclass defaults use them
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _build(cls, kw: dict, **extra):
    try:
        return cls(**kw, **extra)
    except TypeError as exc:
        raise ConfigurationError(f"bad {cls.__name__} settings: {exc}") from None


def load_config(path=None, overrides: dict | None = None, env=None) -> ExperimentConfig:
    """Read a JSON config (or defaults), apply overrides, then ``DYNOID_SEED``."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(exc.msg, path=path, line=exc.lineno) from None
        if not isinstance(data, dict):
            raise FormatError("config must be a JSON object", path=path)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return ExperimentConfig.from_dict(data)


__all__ = ["ExperimentConfig", "SYSTEMS", "SEED_ENV", "load_config"]
