"""Latent-space video expert.

Frames pass through a learned convolution-free patch autoencoder; the
denoiser is a transformer over (frame, patch) latent tokens with the current
frame's clean latent prepended as context. Conditioning rows are the
backbone's video embeddings concatenated with a lightweight visual summary
of the current frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from ..flowmatch import SamplerConfig, sample
from ..tensor import ParamStore, ShapeError, Tensor, concat, constant, embedding
from .depth import patchify, unpatchify


@dataclass
class VideoExpertConfig:
    height: int = 32
    width: int = 64
    down: int = 8
    c_lat: int = 24
    horizon: int = 4
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    mlp_ratio: float = 2.0

    @property
    def lat_h(self) -> int:
        return self.height // self.down

    @property
    def lat_w(self) -> int:
        return self.width // self.down

    @property
    def tokens_per_frame(self) -> int:
        return self.lat_h * self.lat_w


class FrameAutoencoder:
    """Linear non-overlapping patch encoder/decoder, trained jointly via the
    reconstruction term inside the video loss."""

    def __init__(self, store: ParamStore, cfg: VideoExpertConfig, name: str = "video.ae"):
        self.cfg = cfg
        patch_dim = cfg.down * cfg.down * 3
        self.enc = nn.Linear(store, f"{name}.enc", patch_dim, cfg.c_lat)
        self.dec = nn.Linear(store, f"{name}.dec", cfg.c_lat, patch_dim)

    def encode(self, frames: np.ndarray) -> Tensor:
        """[B, H, W, 3] -> latent [B, h, w, c]; frames are centered first."""
        cfg = self.cfg
        frames = np.asarray(frames, dtype=np.float32)
        if frames.shape[1] % cfg.down or frames.shape[2] % cfg.down:
            raise ShapeError(f"frame dims {frames.shape} not divisible by {cfg.down}")
        patches = patchify(frames - np.float32(0.5), cfg.down)
        z = self.enc(constant(patches))
        return z.reshape(frames.shape[0], cfg.lat_h, cfg.lat_w, cfg.c_lat)

    def decode(self, latents: Tensor) -> Tensor:
        """Latent [B, h, w, c] -> frames [B, H, W, 3] (uncentered)."""
        cfg = self.cfg
        b = latents.shape[0]
        tokens = latents.reshape(b, cfg.tokens_per_frame, cfg.c_lat)
        out = self.dec(tokens)
        return unpatchify(out, cfg.height, cfg.width, cfg.down, 3) + 0.5

    def decode_array(self, latents: np.ndarray) -> np.ndarray:
        frames = self.decode(constant(np.asarray(latents, dtype=np.float32)))
        return np.clip(frames.data, 0.0, 1.0)

    def reconstruction_loss(self, frames: np.ndarray) -> Tensor:
        recon = self.decode(self.encode(frames))
        diff = recon - constant(np.asarray(frames, dtype=np.float32))
        return (diff * diff).mean()


class VideoExpert:
    """Flow-matching denoiser over future-frame latents."""

    def __init__(self, store: ParamStore, cfg: VideoExpertConfig, d_cond: int,
                 name: str = "video"):
        self.cfg = cfg
        self.d_cond = d_cond
        d = cfg.d_model
        self.ae = FrameAutoencoder(store, cfg, f"{name}.ae")
        self.token_in = nn.Linear(store, f"{name}.in", cfg.c_lat, d)
        self.spatial = store.add(f"{name}.spatial", (cfg.tokens_per_frame, d), init="embed")
        # horizon slots plus one clean-context slot for the current frame
        self.temporal = store.add(f"{name}.temporal", (cfg.horizon + 1, d), init="embed")
        self.time_emb = nn.TimeEmbedding(store, f"{name}.time", d)
        self.vis_fc1 = nn.Linear(store, f"{name}.vis_fc1", cfg.down * cfg.down * 3, d_cond)
        self.vis_fc2 = nn.Linear(store, f"{name}.vis_fc2", d_cond, d_cond)
        self.blocks = [nn.DenoiserBlock(store, f"{name}.block{i}", d, d_cond,
                                        cfg.n_heads, cfg.mlp_ratio)
                       for i in range(cfg.n_blocks)]
        self.ln_out = nn.LayerNorm(store, f"{name}.ln_out", d)
        self.token_out = nn.Linear(store, f"{name}.out", d, cfg.c_lat, w_init="zeros")
        self.calls = 0

    def visual_condition(self, frame: np.ndarray) -> Tensor:
        """Mean-pooled patch embedding of the current frame: [B, 1, d_cond]."""
        frame = np.asarray(frame, dtype=np.float32)
        patches = patchify(frame - np.float32(0.5), self.cfg.down)
        pooled = self.vis_fc1(constant(patches)).mean(axis=1, keepdims=True)
        return self.vis_fc2(nn.gelu(pooled))

    def condition_rows(self, video_emb: Tensor, current_frame: np.ndarray) -> Tensor:
        """Backbone video embeddings with the visual condition appended as an
        extra key/value row."""
        return concat([video_emb, self.visual_condition(current_frame)], axis=1)

    def denoise(self, noisy_latents: np.ndarray, current_latent: np.ndarray,
                t: np.ndarray, cond: Tensor) -> Tensor:
        """Velocity over latent tokens.

        The flow operates on latent residuals relative to the current frame's
        latent, so a perfect static-scene prediction is the zero residual.
        noisy_latents [B, T_f, h, w, c]; current_latent [B, h, w, c] enters as
        clean context tokens that are attended to but not denoised.
        """
        cfg = self.cfg
        noisy = np.asarray(noisy_latents, dtype=np.float32)
        b = noisy.shape[0]
        if noisy.shape[1:] != (cfg.horizon, cfg.lat_h, cfg.lat_w, cfg.c_lat):
            raise ShapeError(f"latent shape {noisy.shape} does not match config")
        self.calls += 1
        n_tok = cfg.tokens_per_frame
        flat = noisy.reshape(b, cfg.horizon * n_tok, cfg.c_lat)
        cur = np.asarray(current_latent, dtype=np.float32).reshape(b, n_tok, cfg.c_lat)

        x_noisy = self.token_in(constant(flat))
        x_cur = self.token_in(constant(cur))
        frame_ids = np.concatenate([[cfg.horizon], np.arange(cfg.horizon)])
        temporal = embedding(self.temporal, np.repeat(frame_ids, n_tok))
        spatial = embedding(self.spatial, np.tile(np.arange(n_tok), cfg.horizon + 1))
        x = concat([x_cur, x_noisy], axis=1) + temporal + spatial
        x = x + self.time_emb(t).reshape(b, 1, cfg.d_model)
        for block in self.blocks:
            x = block(x, cond)
        out = self.token_out(self.ln_out(x[:, n_tok:, :]))
        return out.reshape(b, cfg.horizon, cfg.lat_h, cfg.lat_w, cfg.c_lat)

    def generate(self, current_frame: np.ndarray, cond_rows: Tensor,
                 sampler: SamplerConfig) -> np.ndarray:
        """Sample future frames [T_f, H, W, 3] in [0, 1] for one episode.

        The ODE produces latent residuals; adding the current frame's latent
        recovers absolute latents before decoding.
        """
        cfg = self.cfg
        frame_b = np.asarray(current_frame, dtype=np.float32)[None]
        current_latent = self.ae.encode(frame_b).data
        cond_b = cond_rows if cond_rows.ndim == 3 else cond_rows.reshape(1, *cond_rows.shape)

        def velocity(x, t, c):
            return self.denoise(x, current_latent, np.array([t]), c).data

        shape = (1, cfg.horizon, cfg.lat_h, cfg.lat_w, cfg.c_lat)
        residuals = sample(velocity, cond_b, shape, sampler)[0]
        latents = residuals + current_latent[0][None]
        frames = self.ae.decode_array(latents.reshape(cfg.horizon, cfg.lat_h,
                                                      cfg.lat_w, cfg.c_lat))
        return frames
