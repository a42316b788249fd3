"""World-action model: backbone plus the three experts behind one facade.

Generation entry points count denoiser evaluations so operating modes are
verifiable: planning-only trajectory generation must leave the depth and
video counters untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .backbone import Backbone, BackboneConfig, WorldEmbeddings
from .episodes import EpisodeRecord
from .experts import (
    ActionExpert,
    ActionExpertConfig,
    DepthExpert,
    DepthExpertConfig,
    DepthNormParams,
    VideoExpert,
    VideoExpertConfig,
)
from .flowmatch import SamplerConfig
from .tensor import ContractError, ParamStore
from .trajectory import Trajectory


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    depth: DepthExpertConfig = field(default_factory=DepthExpertConfig)
    video: VideoExpertConfig = field(default_factory=VideoExpertConfig)
    action: ActionExpertConfig = field(default_factory=ActionExpertConfig)
    depth_steps: int = 32
    video_steps: int = 32
    action_steps: int = 16

    def __post_init__(self):
        bb = self.backbone
        for expert_cfg in (self.depth, self.video):
            if (expert_cfg.height, expert_cfg.width) != (bb.frame_height, bb.frame_width):
                raise ContractError("expert frame dims must match backbone frame dims")


class WorldActionModel:
    """Owns the parameter store and exposes the three generation modes."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.store = ParamStore(seed=seed)
        d_model = cfg.backbone.d_model
        self.backbone = Backbone(self.store, cfg.backbone)
        self.depth_expert = DepthExpert(self.store, cfg.depth, d_cond=d_model)
        self.video_expert = VideoExpert(self.store, cfg.video, d_cond=d_model)
        self.action_expert = ActionExpert(self.store, cfg.action, d_cond=d_model)
        self.depth_norm: DepthNormParams | None = None

    # -- operating modes ---------------------------------------------------

    def world_embeddings(self, instruction_ids, frames, action_ctx) -> WorldEmbeddings:
        return self.backbone.world_embeddings(instruction_ids, frames, action_ctx)

    def embeddings_for(self, record: EpisodeRecord) -> WorldEmbeddings:
        return self.world_embeddings(
            np.array([record.instruction_id]),
            record.frames[None],
            record.action_context[None],
        )

    def generate_depth(self, record: EpisodeRecord, seed: int = 0,
                       emb: WorldEmbeddings | None = None) -> np.ndarray:
        """Metric depth [H, W] for the record's front view."""
        if self.depth_norm is None:
            raise ContractError("depth_norm is unset; train or load a checkpoint first")
        emb = emb or self.embeddings_for(record)
        sampler = SamplerConfig(steps=self.cfg.depth_steps, method="euler", seed=seed)
        return self.depth_expert.generate(self._front_frame(record), emb.depth_emb,
                                          self.depth_norm, sampler)

    def generate_video(self, record: EpisodeRecord, seed: int = 0,
                       emb: WorldEmbeddings | None = None) -> np.ndarray:
        """Future frames [T_f, H, W, 3] for the record's front view."""
        emb = emb or self.embeddings_for(record)
        cond = self.video_expert.condition_rows(emb.video_emb,
                                                self._front_frame(record)[None])
        sampler = SamplerConfig(steps=self.cfg.video_steps, method="euler", seed=seed)
        return self.video_expert.generate(self._front_frame(record), cond, sampler)

    def generate_trajectory(self, record: EpisodeRecord, seed: int = 0,
                            emb: WorldEmbeddings | None = None) -> Trajectory:
        """Planning-only mode: backbone plus the action expert, nothing else."""
        emb = emb or self.embeddings_for(record)
        sampler = SamplerConfig(steps=self.cfg.action_steps, method="euler", seed=seed)
        traj = self.action_expert.generate(emb.action_emb, sampler)
        return replace_dt(traj, self.cfg.action.dt)

    def _front_frame(self, record: EpisodeRecord) -> np.ndarray:
        return record.frames[record.frames.shape[0] // 2 if record.frames.shape[0] > 1 else 0]

    # -- instrumentation ------------------------------------------------------

    def denoiser_calls(self) -> dict[str, int]:
        return {
            "depth": self.depth_expert.calls,
            "video": self.video_expert.calls,
            "action": self.action_expert.calls,
        }

    def reset_counters(self) -> None:
        self.depth_expert.calls = 0
        self.video_expert.calls = 0
        self.action_expert.calls = 0


def replace_dt(traj: Trajectory, dt: float) -> Trajectory:
    return Trajectory(states=traj.states, dt=dt)
