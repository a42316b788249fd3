"""Structured text run configuration.

Files are INI-style: ``[section]`` headers over ``key = value`` lines, with
``#`` comments. Every key has a typed default below; unknown keys are
rejected. Command-line overrides use dotted keys (``train.steps=100``).
Every run writes its fully resolved configuration next to its outputs so a
run is reproducible from that file alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .backbone import BackboneConfig
from .episodes import WorldConfig
from .experts import ActionExpertConfig, DepthExpertConfig, VideoExpertConfig
from .model import ModelConfig


class ConfigError(ValueError):
    """Unknown key, malformed line, or untypeable value."""


@dataclass
class TrainSettings:
    steps: int = 5000
    batch_size: int = 16
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    seed: int = 0
    heads: str = "depth,video,action"
    lambda_d: float = 0.1
    lambda_v: float = 1.0
    lambda_a: float = 1.0
    stop_gradient_queries: bool = False
    checkpoint_every: int = 1000

    def head_set(self) -> frozenset[str]:
        names = frozenset(h.strip() for h in self.heads.split(",") if h.strip())
        unknown = names - {"depth", "video", "action"}
        if unknown:
            raise ConfigError(f"unknown heads {sorted(unknown)}")
        if not names:
            raise ConfigError("at least one head must be enabled")
        return names


@dataclass
class ModelSettings:
    d_model: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    mlp_ratio: float = 2.0
    patch: int = 8
    n_depth_queries: int = 64
    n_video_queries: int = 64
    n_action_queries: int = 8
    expert_heads: int = 4
    depth_d_model: int = 64
    depth_blocks: int = 2
    video_d_model: int = 64
    video_blocks: int = 2
    video_down: int = 8
    video_c_lat: int = 24
    video_horizon: int = 4
    action_d_model: int = 48
    action_blocks: int = 2


@dataclass
class SamplerSettings:
    depth_steps: int = 32
    video_steps: int = 32
    action_steps: int = 16
    method: str = "euler"


@dataclass
class MetricsSettings:
    eval_episodes: int = 64
    pdms_w_ttc: float = 5.0
    pdms_w_ep: float = 5.0
    pdms_w_comfort: float = 2.0
    ttc_threshold: float = 1.0
    accel_limit: float = 4.0
    jerk_limit: float = 8.0


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def sections(self) -> dict[str, object]:
        return {"world": self.world, "model": self.model, "train": self.train,
                "sampler": self.sampler, "metrics": self.metrics}


_SECTION_TYPES = {"world": WorldConfig, "model": ModelSettings, "train": TrainSettings,
                  "sampler": SamplerSettings, "metrics": MetricsSettings}


def _parse_value(raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _field_types(section: str) -> dict[str, type]:
    return {f.name: f.type if isinstance(f.type, type) else _ANNOT[f.type]
            for f in fields(_SECTION_TYPES[section])}


_ANNOT = {"int": int, "float": float, "str": str, "bool": bool}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SECTION_TYPES:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        _apply(cfg, section, key, raw, where=f"line {lineno}")
    return cfg


def _apply(cfg: RunConfig, section: str, key: str, raw: str, where: str) -> None:
    types = _field_types(section)
    if key not in types:
        raise ConfigError(f"{where}: unknown key {section}.{key}")
    value = _parse_value(raw, types[key])
    setattr(cfg.sections()[section], key, value)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply dotted-key overrides like ``train.steps=200``."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not dotted.key=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override {item!r} is missing a section prefix")
        section, key = dotted.strip().split(".", 1)
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        _apply(cfg, section, key.strip(), raw, where=f"override {item!r}")
    return cfg


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read(), cfg)
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


def to_text(cfg: RunConfig) -> str:
    """Fully resolved configuration, stable ordering."""
    lines = []
    for section, obj in cfg.sections().items():
        lines.append(f"[{section}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {getattr(obj, f.name)}")
        lines.append("")
    return "\n".join(lines)


def paper_scale_preset() -> RunConfig:
    """The production-scale settings quoted alongside the toy defaults:
    144 x 256 frames, 9-frame video horizon, 100k steps at batch 32, lr 1e-5.

    Far beyond desk-scale budgets; provided for completeness.
    """
    cfg = RunConfig()
    cfg.world.frame_height = 144
    cfg.world.frame_width = 256
    cfg.model.video_horizon = 9
    cfg.world.views = 3
    cfg.train.steps = 100_000
    cfg.train.batch_size = 32
    cfg.train.lr = 1e-5
    return cfg


def build_model_config(cfg: RunConfig) -> ModelConfig:
    """Wire world geometry and model settings into the concrete module configs."""
    w, m = cfg.world, cfg.model
    backbone = BackboneConfig(
        d_model=m.d_model, n_blocks=m.n_blocks, n_heads=m.n_heads,
        mlp_ratio=m.mlp_ratio, patch=m.patch,
        n_depth_queries=m.n_depth_queries, n_video_queries=m.n_video_queries,
        n_action_queries=m.n_action_queries, views=w.views,
        frame_height=w.frame_height, frame_width=w.frame_width, context=w.context,
    )
    depth = DepthExpertConfig(
        height=w.frame_height, width=w.frame_width, patch=m.patch,
        d_model=m.depth_d_model, n_blocks=m.depth_blocks, n_heads=m.expert_heads,
        d_max=w.d_max,
    )
    video = VideoExpertConfig(
        height=w.frame_height, width=w.frame_width, down=m.video_down,
        c_lat=m.video_c_lat, horizon=m.video_horizon, d_model=m.video_d_model,
        n_blocks=m.video_blocks, n_heads=m.expert_heads,
    )
    action = ActionExpertConfig(
        horizon=w.horizon, dt=w.dt, d_model=m.action_d_model,
        n_blocks=m.action_blocks, n_heads=m.expert_heads,
    )
    return ModelConfig(backbone=backbone, depth=depth, video=video, action=action,
                       depth_steps=cfg.sampler.depth_steps,
                       video_steps=cfg.sampler.video_steps,
                       action_steps=cfg.sampler.action_steps)
