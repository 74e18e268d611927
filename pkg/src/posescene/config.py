"""Dataclass configuration for every stage, plus the namespaced key=value
file format used by the CLI (write-defaults / load round-trips exactly)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class PriorConfig:
    latent_dim: int = 32
    hidden: int = 256
    beta_kl: float = 0.005
    lambda_rot: float = 1.0
    lr: float = 2e-3
    batch: int = 64
    steps: int = 8000
    log_std_min: float = -10.0
    log_std_max: float = 5.0


@dataclass
class PoseDiffConfig:
    mode: str = "latent"  # latent | 6d
    latent_dim: int = 32
    timesteps: int = 1000
    schedule: str = "cosine"  # cosine | linear
    layers: int = 4
    d_model: int = 128
    heads: int = 4
    time_dim: int = 64
    p_drop: float = 0.1
    guidance: float = 3.0
    clamp_latent: float = 6.0
    clamp_6d: float = 3.0
    sample_steps: int = 0  # 0 = full T
    lr: float = 1e-3
    batch: int = 64
    steps: int = 3000


@dataclass
class AlignerConfig:
    width: int = 128
    out_dim: int = 64
    temperature: float = 0.07
    lr: float = 1e-3
    batch: int = 32
    steps: int = 800


@dataclass
class CompositorConfig:
    latent_channels: int = 4
    image_size: int = 64
    latent_size: int = 16
    ae_base: int = 16
    den_base: int = 32
    ctx_dim: int = 64
    heads: int = 2
    timesteps: int = 200
    schedule: str = "cosine"
    f_max: float = 8.0
    infer_w: float = 0.0
    sample_steps: int = 0
    ae_lr: float = 2e-3
    ae_batch: int = 8
    ae_steps: int = 700
    lr: float = 1e-3
    batch: int = 8
    steps: int = 900
    scenes: int = 512


@dataclass
class RetargetConfig:
    w_pos: float = 1.0
    w_rot: float = 0.5
    tol: float = 1e-6
    max_iters: int = 1000


@dataclass
class RenderConfig:
    size: int = 64
    scale: float = 0.034  # world meters per pixel
    thickness: float = 2.0  # bone capsule radius, pixels
    joint_radius: float = 2.5  # pixels


@dataclass
class DatagenConfig:
    n: int = 8000
    seed: int = 0
    fractions: str = "0.8,0.1,0.1"


@dataclass
class ScoringConfig:
    ridge: float = 1e-6
    rerank_n: int = 5


@dataclass
class PipelineConfig:
    prior: PriorConfig = field(default_factory=PriorConfig)
    posediff: PoseDiffConfig = field(default_factory=PoseDiffConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    compositor: CompositorConfig = field(default_factory=CompositorConfig)
    retarget: RetargetConfig = field(default_factory=RetargetConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)


def _coerce(raw: str, target_type):
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return target_type(raw)


def to_keys(cfg: PipelineConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for section_field in dataclasses.fields(cfg):
        section = getattr(cfg, section_field.name)
        for f in dataclasses.fields(section):
            out[f"{section_field.name}.{f.name}"] = str(getattr(section, f.name))
    return out


def apply_key(cfg: PipelineConfig, key: str, raw: str) -> None:
    if "." not in key:
        raise ConfigError(f"config key {key!r} must be namespaced as section.name")
    section_name, field_name = key.split(".", 1)
    if not hasattr(cfg, section_name):
        raise ConfigError(f"unknown config section {section_name!r}")
    section = getattr(cfg, section_name)
    if not any(f.name == field_name for f in dataclasses.fields(section)):
        raise ConfigError(f"unknown config key {key!r}")
    try:
        setattr(section, field_name, _coerce(raw, type(getattr(section, field_name))))
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {e}") from None


def write_config(path, cfg: PipelineConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# posescene configuration, key = value per line\n")
        for key, value in to_keys(cfg).items():
            fh.write(f"{key} = {value}\n")


def load_config(path) -> PipelineConfig:
    cfg = PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            apply_key(cfg, key, raw)
    return cfg
