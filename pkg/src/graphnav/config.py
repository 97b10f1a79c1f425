"""Run configuration: one dataclass per subsystem, merged into RunConfig.

Config files are flat INI-style ``key = value`` under section headers;
every key is also exposed as a ``--section-key`` CLI flag, and CLI
values override the file.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .encoders import EncoderConfig
from .gridsim import DetectorConfig
from .mixer import MixerConfig
from .policy import PolicyConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


@dataclass
class WorldConfig:
    width: int = 12
    height: int = 12
    n_rooms: int = 3
    n_objects: int = 12


@dataclass
class EvalConfig:
    episodes_per_tier: int = 100
    max_steps: int = 200
    mode: str = "guarded"      # or "stochastic" / "greedy"


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/out"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    mixer: MixerConfig = field(default_factory=MixerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = ("encoder", "world", "detector", "mixer", "policy", "train", "eval")

    def finalize(self) -> "RunConfig":
        """Propagate shared dimensions and validate everything."""
        self.mixer.dim_image = self.encoder.dim_image
        self.mixer.dim_object = self.encoder.dim_object
        self.policy.dim_image = self.encoder.dim_image
        self.policy.dim_object = self.encoder.dim_object
        self.train.seed = self.seed
        self.encoder.validate()
        self.mixer.validate()
        self.policy.validate()
        self.train.validate()
        if self.eval.mode not in ("stochastic", "greedy", "guarded"):
            raise ConfigError(f"unknown eval mode {self.eval.mode!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(raw: str, target_type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    return target_type(raw)


def _apply_key(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    if section == "run":
        sub = cfg
    elif section in RunConfig.SECTIONS:
        sub = getattr(cfg, section)
    else:
        raise ConfigError(f"unknown config section [{section}]")
    matching = {f.name: f for f in fields(sub)}
    if key not in matching:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    target_type = type(getattr(sub, key))
    try:
        setattr(sub, key, _coerce(raw, target_type))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


def load_config(path: str | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus CLI overrides.

    Overrides are flat ``section.key -> raw string`` entries; the
    top-level keys (seed, out) live in section ``run``.
    """
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply_key(cfg, section, key, raw)
    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override must look like section.key: {dotted!r}")
        section, key = dotted.split(".", 1)
        _apply_key(cfg, section, key, raw)
    return cfg.finalize()
