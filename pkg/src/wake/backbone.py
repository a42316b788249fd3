"""Query-bottleneck transformer backbone.

Instruction, camera frames, and the recent action context become input
tokens; three fixed-size groups of learnable query tokens (depth, video,
action, in that order) are appended and contextualized by masked
transformer blocks. The group mask gives inputs a pure-context role and
orders information flow depth -> video -> action, while attention within a
group stays full.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import AttentionMask, ContractError, ParamStore, ShapeError, Tensor, constant, embedding

VOCABULARY = ("go-straight", "turn-left", "turn-right", "stop")


@dataclass(frozen=True)
class QueryLayout:
    """Token-stream geometry: input block followed by the three query groups."""

    n_input: int
    n_depth: int = 64
    n_video: int = 64
    n_action: int = 8
    d_model: int = 128

    def __post_init__(self):
        for name in ("n_input", "n_depth", "n_video", "n_action"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")

    @property
    def depth_offset(self) -> int:
        return self.n_input

    @property
    def video_offset(self) -> int:
        return self.n_input + self.n_depth

    @property
    def action_offset(self) -> int:
        return self.n_input + self.n_depth + self.n_video

    @property
    def total(self) -> int:
        return self.action_offset + self.n_action


@dataclass
class TokenStream:
    """Batched token matrix plus its layout; query rows come from ParamStore."""

    tokens: Tensor
    layout: QueryLayout

    def __post_init__(self):
        if self.tokens.shape[-2] != self.layout.total:
            raise ShapeError(
                f"stream has {self.tokens.shape[-2]} rows, layout expects {self.layout.total}")


@dataclass
class WorldEmbeddings:
    """Per-group backbone outputs used as cross-attention conditions."""

    depth_emb: Tensor
    video_emb: Tensor
    action_emb: Tensor


def build_group_mask(layout: QueryLayout) -> AttentionMask:
    """Block-causal mask at query-group granularity.

    Inputs see only inputs; depth queries see inputs + depth; video queries
    see inputs + depth + video; action queries see everything. Attention
    within each group is full.
    """
    t = layout.total
    allowed = np.zeros((t, t), dtype=bool)
    i0, d0, v0, a0 = 0, layout.depth_offset, layout.video_offset, layout.action_offset
    allowed[i0:d0, i0:d0] = True
    allowed[d0:v0, i0:v0] = True
    allowed[v0:a0, i0:a0] = True
    allowed[a0:t, i0:t] = True
    return AttentionMask(allowed)


@dataclass
class BackboneConfig:
    d_model: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    mlp_ratio: float = 2.0
    patch: int = 8
    n_depth_queries: int = 64
    n_video_queries: int = 64
    n_action_queries: int = 8
    vocab_size: int = len(VOCABULARY)
    views: int = 1
    frame_height: int = 32
    frame_width: int = 64
    context: int = 4

    @property
    def patches_per_view(self) -> int:
        return (self.frame_height // self.patch) * (self.frame_width // self.patch)

    @property
    def n_input(self) -> int:
        return 1 + self.views * self.patches_per_view + self.context

    def layout(self) -> QueryLayout:
        return QueryLayout(n_input=self.n_input, n_depth=self.n_depth_queries,
                           n_video=self.n_video_queries, n_action=self.n_action_queries,
                           d_model=self.d_model)


def extract_patches(frame: np.ndarray, patch: int) -> np.ndarray:
    """Non-overlapping patch pixels: [H, W, C] -> [n_patches, patch*patch*C]."""
    h, w, c = frame.shape
    if h % patch or w % patch:
        raise ContractError(f"frame {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = frame.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles).reshape(gh * gw, patch * patch * c)


class Backbone:
    """Owns the input encoders, query parameters, and the masked block stack."""

    def __init__(self, store: ParamStore, cfg: BackboneConfig, name: str = "backbone"):
        self.cfg = cfg
        d = cfg.d_model
        self.instruction_table = store.add(f"{name}.instr", (cfg.vocab_size, d), init="embed")
        self.patch_proj = nn.Linear(store, f"{name}.patch", cfg.patch * cfg.patch * 3, d)
        self.pos2d = store.add(f"{name}.pos2d", (cfg.patches_per_view, d), init="embed")
        self.view_emb = store.add(f"{name}.view", (cfg.views, d), init="embed")
        self.act_fc1 = nn.Linear(store, f"{name}.act_fc1", 4, d)
        self.act_ln = nn.LayerNorm(store, f"{name}.act_ln", d)
        self.act_fc2 = nn.Linear(store, f"{name}.act_fc2", d, d)
        self.act_pos = store.add(f"{name}.act_pos", (cfg.context, d), init="embed")
        self.depth_queries = store.add(f"{name}.q_depth", (cfg.n_depth_queries, d), init="embed")
        self.video_queries = store.add(f"{name}.q_video", (cfg.n_video_queries, d), init="embed")
        self.action_queries = store.add(f"{name}.q_action", (cfg.n_action_queries, d), init="embed")
        self.blocks = [nn.BackboneBlock(store, f"{name}.block{i}", d, cfg.n_heads, cfg.mlp_ratio)
                       for i in range(cfg.n_blocks)]

    # -- input tokenization -------------------------------------------------

    def encode_inputs(self, instruction_ids: np.ndarray, frames: np.ndarray,
                      action_ctx: np.ndarray) -> TokenStream:
        """Tokenize a batch and append the query groups.

        instruction_ids [B], frames [B, V, H, W, 3], action_ctx [B, H_ctx, 4].
        The text token is an embedding-table row; image tokens are linear
        projections of non-overlapping patches plus learned 2D position and
        per-view embeddings; action tokens pass through a 2-layer MLP with
        layer normalization plus a learned temporal position.
        """
        cfg = self.cfg
        ids = np.asarray(instruction_ids, dtype=np.int64).reshape(-1)
        if (ids < 0).any() or (ids >= cfg.vocab_size).any():
            raise ContractError(f"instruction id out of vocabulary (size {cfg.vocab_size})")
        frames = np.asarray(frames, dtype=np.float32)
        action_ctx = np.asarray(action_ctx, dtype=np.float32)
        b = ids.shape[0]
        if frames.shape != (b, cfg.views, cfg.frame_height, cfg.frame_width, 3):
            raise ShapeError(f"frames shape {frames.shape} does not match config")
        if action_ctx.shape != (b, cfg.context, 4):
            raise ShapeError(f"action context shape {action_ctx.shape} does not match config")

        text = embedding(self.instruction_table, ids).reshape(b, 1, cfg.d_model)

        patch_rows = np.stack([
            np.concatenate([extract_patches(frames[i, v], cfg.patch)
                            for v in range(cfg.views)], axis=0)
            for i in range(b)], axis=0)
        image = self.patch_proj(constant(patch_rows))
        pos = nn.concat_views(self.pos2d, self.view_emb, cfg.views)
        image = image + pos

        act = self.act_fc2(nn.gelu(self.act_ln(self.act_fc1(constant(action_ctx)))))
        act = act + self.act_pos

        tokens = nn.stack_rows([text, image, act,
                                nn.tile_batch(self.depth_queries, b),
                                nn.tile_batch(self.video_queries, b),
                                nn.tile_batch(self.action_queries, b)])
        return TokenStream(tokens=tokens, layout=self.layout())

    def layout(self) -> QueryLayout:
        return self.cfg.layout()

    # -- contextualization -----------------------------------------------------

    def forward(self, stream: TokenStream, mask: AttentionMask) -> WorldEmbeddings:
        """Run the masked block stack and slice the final states by group."""
        layout = stream.layout
        if mask.shape != (layout.total, layout.total):
            raise ShapeError("mask was not built from this stream's layout")
        x = stream.tokens
        for block in self.blocks:
            x = block(x, mask)
        d0, v0, a0, t = (layout.depth_offset, layout.video_offset,
                         layout.action_offset, layout.total)
        return WorldEmbeddings(
            depth_emb=x[:, d0:v0, :],
            video_emb=x[:, v0:a0, :],
            action_emb=x[:, a0:t, :],
        )

    def world_embeddings(self, instruction_ids, frames, action_ctx) -> WorldEmbeddings:
        stream = self.encode_inputs(instruction_ids, frames, action_ctx)
        return self.forward(stream, build_group_mask(stream.layout))
