"""Experiment configuration: a JSON document of named sections.

Every key has a documented default (the dataclass fields below); unknown
keys anywhere are rejected so typos fail loudly. ``default_config()`` is the
full desk-scale setup; ``Config.from_dict`` accepts any subset.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class DataSection:
    n_frames: int = 32  # generator window N_f and training clip length
    speech_dim: int = 8
    fps: int = 25
    train_identities: list = field(default_factory=lambda: [0, 800])
    test_identities: list = field(default_factory=lambda: [800, 1000])
    stage1_clips_per_identity: int = 2
    stage2_clips_per_identity: int = 8


@dataclass
class Stage1Section:
    hidden: list = field(default_factory=lambda: [512, 256, 128])
    motion_hidden: list = field(default_factory=lambda: [256, 128])
    latent_dim: int = 64
    head_scale: float = 0.1
    lr: float = 1e-3
    lr_final: float = 1e-5  # cosine-annealed over the run
    grad_clip: float = 1.0
    appearance_decay: float = 1.0
    batch: int = 64
    steps: int = 12000


@dataclass
class Stage2Section:
    depth: int = 4
    width: int = 128
    heads: int = 4
    time_dim: int = 64
    mlp_ratio: int = 2
    lr: float = 1e-4
    dropout: float = 0.1
    grad_clip: float = 1.0
    batch: int = 32
    steps: int = 6000


@dataclass
class InferenceSection:
    guidance_scale: float = 2.0
    sigma_default: float = 0.15
    steps: int = 200
    mean_mode: str = "hint"


@dataclass
class BenchSection:
    steps_list: list = field(default_factory=lambda: [50, 100, 200, 500, 1000])
    trials: int = 5
    quality_samples: int = 200  # capped at the number of held-out identities
    quality_steps: list = field(default_factory=lambda: [50, 100, 200])  # rows that get the MMD column
    sweep_sigmas: list = field(default_factory=lambda: [0.3, 0.6, 0.9])
    sweep_seeds: int = 32


@dataclass
class Config:
    seed: int = 0
    workers: int = 1
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    data: DataSection = field(default_factory=DataSection)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    inference: InferenceSection = field(default_factory=InferenceSection)
    bench: BenchSection = field(default_factory=BenchSection)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return _build(cls, d, "")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "Config":
        if self.schedule.T < 1 or not 0 < self.schedule.beta_start <= self.schedule.beta_end < 1:
            raise ConfigError("schedule: need T >= 1 and 0 < beta_start <= beta_end < 1")
        for key in ("train_identities", "test_identities"):
            lo_hi = getattr(self.data, key)
            if len(lo_hi) != 2 or not 0 <= lo_hi[0] < lo_hi[1]:
                raise ConfigError(f"data.{key} must be [lo, hi) with 0 <= lo < hi")
        if not 0 <= self.stage2.dropout <= 1:
            raise ConfigError("stage2.dropout must lie in [0, 1]")
        if self.inference.guidance_scale < 0:
            raise ConfigError("inference.guidance_scale must be >= 0")
        if not 0 <= self.inference.sigma_default <= 1:
            raise ConfigError("inference.sigma_default must lie in [0, 1]")
        if not 1 <= self.inference.steps <= self.schedule.T:
            raise ConfigError(f"inference.steps must lie in [1, {self.schedule.T}]")
        return self


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key '{where}{unknown[0]}'")
    kwargs = {}
    for name, value in d.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}{name}.")
        else:
            kwargs[name] = _coerce(value, default, f"{where}{name}")
    return cls(**kwargs)


def _coerce(value, default, key: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"config key '{key}' expects {type(default).__name__}, got {value!r}")
    return value


def default_config() -> Config:
    return Config()


def load_config(path) -> Config:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return Config.from_dict(data).validate()


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
