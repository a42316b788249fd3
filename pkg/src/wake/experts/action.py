"""Trajectory expert: maps noise to a feasible future action sequence.

States are (x, y, cos, sin) in the ego frame at decision time; positions are
divided by a fixed metric scale so the flow operates near unit variance, and
every sampled state's heading pair is renormalized onto the unit circle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from ..flowmatch import SamplerConfig, sample
from ..tensor import ParamStore, ShapeError, Tensor, constant, embedding
from ..trajectory import Trajectory, renormalize_headings

POSITION_SCALE = 10.0


def scale_states(states: np.ndarray) -> np.ndarray:
    out = np.array(states, dtype=np.float32, copy=True)
    out[..., :2] /= np.float32(POSITION_SCALE)
    return out


def unscale_states(states: np.ndarray) -> np.ndarray:
    out = np.array(states, dtype=np.float32, copy=True)
    out[..., :2] *= np.float32(POSITION_SCALE)
    return out


@dataclass
class ActionExpertConfig:
    horizon: int = 8
    dt: float = 0.5
    d_model: int = 48
    n_blocks: int = 2
    n_heads: int = 4
    mlp_ratio: float = 2.0


class ActionExpert:
    """Flow-matching denoiser over trajectory state tokens."""

    def __init__(self, store: ParamStore, cfg: ActionExpertConfig, d_cond: int,
                 name: str = "action"):
        self.cfg = cfg
        d = cfg.d_model
        self.token_in = nn.Linear(store, f"{name}.in", 4, d)
        self.temporal = store.add(f"{name}.temporal", (cfg.horizon, d), init="embed")
        self.time_emb = nn.TimeEmbedding(store, f"{name}.time", d)
        self.blocks = [nn.DenoiserBlock(store, f"{name}.block{i}", d, d_cond,
                                        cfg.n_heads, cfg.mlp_ratio)
                       for i in range(cfg.n_blocks)]
        self.ln_out = nn.LayerNorm(store, f"{name}.ln_out", d)
        self.token_out = nn.Linear(store, f"{name}.out", d, 4, w_init="zeros")
        self.calls = 0

    def denoise(self, noisy_traj: np.ndarray, t: np.ndarray, cond: Tensor) -> Tensor:
        """Velocity over scaled trajectory states [B, T_a, 4]."""
        cfg = self.cfg
        noisy = np.asarray(noisy_traj, dtype=np.float32)
        if noisy.shape[1:] != (cfg.horizon, 4):
            raise ShapeError(f"trajectory shape {noisy.shape} does not match config")
        self.calls += 1
        b = noisy.shape[0]
        x = self.token_in(constant(noisy))
        x = x + embedding(self.temporal, np.arange(cfg.horizon))
        x = x + self.time_emb(t).reshape(b, 1, cfg.d_model)
        for block in self.blocks:
            x = block(x, cond)
        return self.token_out(self.ln_out(x))

    def generate(self, cond: Tensor, sampler: SamplerConfig) -> Trajectory:
        """Sample one trajectory; runs without touching the depth/video experts."""
        cfg = self.cfg
        cond_b = cond if cond.ndim == 3 else cond.reshape(1, *cond.shape)

        def velocity(x, t, c):
            return self.denoise(x, np.array([t]), c).data

        states = sample(velocity, cond_b, (1, cfg.horizon, 4), sampler)[0]
        return Trajectory(states=renormalize_headings(unscale_states(states)), dt=cfg.dt)
