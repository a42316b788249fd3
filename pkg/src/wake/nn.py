"""Transformer building blocks on top of the tensor kernel.

All layers operate on ``[batch, tokens, width]`` tensors and register their
parameters under a dotted name prefix so checkpoints are stable regardless
of construction order.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    AttentionMask,
    ParamStore,
    ShapeError,
    Tensor,
    concat,
    constant,
    gelu_op,
    layernorm_op,
    masked_attention,
)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU; smooth everywhere, which keeps finite-difference
    gradient checks clean."""
    return gelu_op(x)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True,
                 w_init: str = "fan_in"):
        self.w = store.add(f"{name}.w", (d_in, d_out), init=w_init)
        self.b = store.add(f"{name}.b", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.g", (d,), init="ones")
        self.beta = store.add(f"{name}.b", (d,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm_op(x, self.gamma, self.beta, self.eps)


class Mlp:
    def __init__(self, store: ParamStore, name: str, d: int, ratio: float = 2.0):
        hidden = int(round(d * ratio))
        self.fc1 = Linear(store, f"{name}.fc1", d, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    if d % n_heads:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    return x.reshape(b, t, n_heads, d // n_heads).transpose((0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(b, t, h * dh)


class SelfAttention:
    """Multi-head attention over one token stream under a boolean mask."""

    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int):
        self.qkv = Linear(store, f"{name}.qkv", d, 3 * d)
        self.out = Linear(store, f"{name}.out", d, d)
        self.n_heads = n_heads
        self.d = d

    def __call__(self, x: Tensor, mask: AttentionMask) -> Tensor:
        fused = self.qkv(x)
        q = _split_heads(fused[:, :, : self.d], self.n_heads)
        k = _split_heads(fused[:, :, self.d: 2 * self.d], self.n_heads)
        v = _split_heads(fused[:, :, 2 * self.d:], self.n_heads)
        mixed = masked_attention(q, k, v, mask)
        return self.out(_merge_heads(mixed))


class CrossAttention:
    """Multi-head attention from a token stream onto a conditioning stream."""

    def __init__(self, store: ParamStore, name: str, d: int, d_cond: int, n_heads: int):
        self.q = Linear(store, f"{name}.q", d, d)
        self.kv = Linear(store, f"{name}.kv", d_cond, 2 * d)
        self.out = Linear(store, f"{name}.out", d, d)
        self.n_heads = n_heads
        self.d = d

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        n, m = x.shape[-2], cond.shape[-2]
        q = _split_heads(self.q(x), self.n_heads)
        fused = self.kv(cond)
        k = _split_heads(fused[:, :, : self.d], self.n_heads)
        v = _split_heads(fused[:, :, self.d:], self.n_heads)
        mixed = masked_attention(q, k, v, AttentionMask.full(n, m))
        return self.out(_merge_heads(mixed))


class BackboneBlock:
    """Pre-LN masked self-attention + MLP with residual connections."""

    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int, mlp_ratio: float):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.attn = SelfAttention(store, f"{name}.attn", d, n_heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.mlp = Mlp(store, f"{name}.mlp", d, mlp_ratio)

    def __call__(self, x: Tensor, mask: AttentionMask) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


class DenoiserBlock:
    """Expert block: full self-attention, one cross-attention sublayer onto the
    conditioning rows, then an MLP; all pre-LN residual."""

    def __init__(self, store: ParamStore, name: str, d: int, d_cond: int, n_heads: int,
                 mlp_ratio: float):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.attn = SelfAttention(store, f"{name}.attn", d, n_heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.cross = CrossAttention(store, f"{name}.cross", d, d_cond, n_heads)
        self.ln3 = LayerNorm(store, f"{name}.ln3", d)
        self.mlp = Mlp(store, f"{name}.mlp", d, mlp_ratio)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        t = x.shape[-2]
        x = x + self.attn(self.ln1(x), AttentionMask.full(t, t))
        x = x + self.cross(self.ln2(x), cond)
        return x + self.mlp(self.ln3(x))


def sinusoidal_features(t: np.ndarray, n_features: int) -> np.ndarray:
    """Fixed sin/cos features of flow time t in [0, 1]; shape [batch, n_features].

    Angular frequencies are log-spaced over [2pi, 2000pi] so nearby t values
    stay distinguishable at every scale the samplers use.
    """
    t = np.asarray(t, dtype=np.float32).reshape(-1, 1)
    half = n_features // 2
    freqs = (2.0 * np.pi * np.logspace(0.0, 3.0, half)).astype(np.float32)
    ang = t * freqs[None, :]
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if feats.shape[1] < n_features:
        feats = np.concatenate([feats, np.zeros((feats.shape[0], 1), np.float32)], axis=1)
    return feats


class TimeEmbedding:
    """Sinusoidal featurization of flow time followed by a 2-layer MLP."""

    def __init__(self, store: ParamStore, name: str, d: int):
        self.fc1 = Linear(store, f"{name}.fc1", d, d)
        self.fc2 = Linear(store, f"{name}.fc2", d, d)
        self.d = d

    def __call__(self, t: np.ndarray) -> Tensor:
        feats = constant(sinusoidal_features(t, self.d))
        return self.fc2(gelu(self.fc1(feats)))


def stack_rows(parts: list[Tensor]) -> Tensor:
    """Concatenate [B, T_i, D] tensors along the token axis."""
    return concat(parts, axis=1)


def tile_batch(rows: Tensor, batch: int) -> Tensor:
    """Broadcast a [T, D] parameter to [batch, T, D]; gradients sum over the batch."""
    t, d = rows.shape
    return rows.reshape(1, t, d) + constant(np.zeros((batch, 1, 1), dtype=np.float32))


def concat_views(pos2d: Tensor, view_emb: Tensor, views: int) -> Tensor:
    """Per-view position rows: pos2d plus that view's embedding, stacked [V*P, D]."""
    parts = [pos2d + view_emb[v: v + 1, :] for v in range(views)]
    return concat(parts, axis=0) if views > 1 else parts[0]
