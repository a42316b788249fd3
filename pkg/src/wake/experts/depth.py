"""Pixel-space depth expert.

Depth maps are log-transformed and squashed to [-0.5, 0.5] by per-map
percentiles before entering the flow path; the denoiser is a small
patch transformer over the channel-concatenated (noisy depth, RGB) input,
cross-attending to the backbone's depth embedding rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from ..flowmatch import SamplerConfig, sample
from ..tensor import ContractError, ParamStore, ShapeError, Tensor, constant


@dataclass
class DepthNormParams:
    """Per-map (or dataset-level) log-space percentile bounds."""

    log_lo: float
    log_hi: float
    p_low: float = 1.0
    p_high: float = 99.0
    degenerate: bool = False

    def __post_init__(self):
        if self.log_hi < self.log_lo:
            raise ContractError("log_hi must be >= log_lo")


def normalize_depth(d: np.ndarray, p_low: float = 1.0,
                    p_high: float = 99.0) -> tuple[np.ndarray, DepthNormParams]:
    """Log-transform, then map the [p_low, p_high] percentile band to [-0.5, 0.5].

    Constant maps normalize to all zeros with the degenerate flag set.
    """
    d = np.asarray(d, dtype=np.float32)
    if (d <= 0).any():
        raise ContractError("depth values must be positive")
    logd = np.log(d)
    lo = float(np.percentile(logd, p_low))
    hi = float(np.percentile(logd, p_high))
    if hi - lo < 1e-7:
        params = DepthNormParams(log_lo=lo, log_hi=lo, p_low=p_low, p_high=p_high,
                                 degenerate=True)
        return np.zeros_like(d), params
    params = DepthNormParams(log_lo=lo, log_hi=hi, p_low=p_low, p_high=p_high)
    n = np.clip((logd - lo) / (hi - lo) - 0.5, -0.5, 0.5).astype(np.float32)
    return n, params


def denormalize_depth(n: np.ndarray, params: DepthNormParams) -> np.ndarray:
    """Algebraic inverse of normalize_depth on non-clipped values."""
    n = np.asarray(n, dtype=np.float32)
    if params.degenerate:
        return np.full_like(n, np.exp(params.log_lo))
    span = params.log_hi - params.log_lo
    return np.exp((n + np.float32(0.5)) * np.float32(span) + np.float32(params.log_lo))


def aggregate_norm_params(per_map: list[DepthNormParams]) -> DepthNormParams:
    """Dataset-level parameters: the median of the per-map log bounds.

    Inference has no ground-truth map to take percentiles from, so sampling
    denormalizes with these aggregates (persisted in the checkpoint).
    """
    usable = [p for p in per_map if not p.degenerate]
    if not usable:
        raise ContractError("no non-degenerate maps to aggregate")
    lo = float(np.median([p.log_lo for p in usable]))
    hi = float(np.median([p.log_hi for p in usable]))
    return DepthNormParams(log_lo=lo, log_hi=hi,
                           p_low=usable[0].p_low, p_high=usable[0].p_high)


@dataclass
class DepthExpertConfig:
    height: int = 32
    width: int = 64
    patch: int = 8
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    mlp_ratio: float = 2.0
    d_max: float = 80.0

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """[B, H, W, C] -> [B, n_patches, patch*patch*C] (constant data path)."""
    b, h, w, c = x.shape
    gh, gw = h // patch, w // patch
    tiles = x.reshape(b, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(tiles).reshape(b, gh * gw, patch * patch * c)


def unpatchify(tokens: Tensor, height: int, width: int, patch: int, channels: int) -> Tensor:
    """Differentiable inverse of patchify: [B, n, patch*patch*C] -> [B, H, W, C]."""
    b = tokens.shape[0]
    gh, gw = height // patch, width // patch
    x = tokens.reshape(b, gh, gw, patch, patch, channels)
    x = x.transpose((0, 1, 3, 2, 4, 5))
    return x.reshape(b, height, width, channels)


class DepthExpert:
    """Flow-matching denoiser over normalized depth pixels."""

    def __init__(self, store: ParamStore, cfg: DepthExpertConfig, d_cond: int,
                 name: str = "depth"):
        self.cfg = cfg
        d = cfg.d_model
        in_dim = cfg.patch * cfg.patch * 4  # noisy depth + RGB channels
        self.token_in = nn.Linear(store, f"{name}.in", in_dim, d)
        self.pos = store.add(f"{name}.pos", (cfg.n_patches, d), init="embed")
        self.time_emb = nn.TimeEmbedding(store, f"{name}.time", d)
        self.blocks = [nn.DenoiserBlock(store, f"{name}.block{i}", d, d_cond,
                                        cfg.n_heads, cfg.mlp_ratio)
                       for i in range(cfg.n_blocks)]
        self.ln_out = nn.LayerNorm(store, f"{name}.ln_out", d)
        self.token_out = nn.Linear(store, f"{name}.out", d,
                                   cfg.patch * cfg.patch, w_init="zeros")
        self.calls = 0

    def denoise(self, noisy: np.ndarray, rgb: np.ndarray, t: np.ndarray,
                cond: Tensor) -> Tensor:
        """Predict the flow velocity for a batch of noisy normalized depth maps.

        noisy [B, H, W], rgb [B, H, W, 3], t [B], cond [B, n_depth, d_cond].
        """
        cfg = self.cfg
        noisy = np.asarray(noisy, dtype=np.float32)
        rgb = np.asarray(rgb, dtype=np.float32)
        if noisy.shape[1:] != (cfg.height, cfg.width):
            raise ShapeError(f"depth shape {noisy.shape} does not match config")
        if rgb.shape != noisy.shape + (3,):
            raise ShapeError(f"rgb shape {rgb.shape} does not match depth {noisy.shape}")
        self.calls += 1
        stacked = np.concatenate([noisy[..., None], rgb], axis=-1)
        tokens = self.token_in(constant(patchify(stacked, cfg.patch)))
        x = tokens + self.pos + self.time_emb(t).reshape(len(noisy), 1, cfg.d_model)
        for block in self.blocks:
            x = block(x, cond)
        out = self.token_out(self.ln_out(x))
        return unpatchify(out, cfg.height, cfg.width, cfg.patch, 1).reshape(
            noisy.shape[0], cfg.height, cfg.width)

    def generate(self, rgb: np.ndarray, cond: Tensor, norm: DepthNormParams,
                 sampler: SamplerConfig) -> np.ndarray:
        """Sample a metric depth map [H, W]: ODE in normalized space, then the
        inverse transform with dataset-level parameters, clipped to (0, d_max]."""
        cfg = self.cfg
        rgb_b = np.asarray(rgb, dtype=np.float32)[None]
        cond_b = cond if cond.ndim == 3 else cond.reshape(1, *cond.shape)

        def velocity(x, t, c):
            return self.denoise(x, rgb_b, np.array([t]), c).data

        normalized = sample(velocity, cond_b, (1, cfg.height, cfg.width), sampler)[0]
        normalized = np.clip(normalized, -0.5, 0.5)
        metric = denormalize_depth(normalized, norm)
        return np.clip(metric, 1e-3, cfg.d_max).astype(np.float32)
