"""Conditional flow-matching math shared by the three generative experts.

Training draws a point on the straight path between a data sample and a
noise sample and regresses the constant path velocity; sampling starts from
noise at t=1 and integrates the learned field backward to t=0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import NumericError, ShapeError, Tensor, rng_for

VelocityFn = Callable[[np.ndarray, float, object], np.ndarray]


@dataclass
class FlowSample:
    """One training point on the linear interpolation path."""

    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray
    v_target: np.ndarray


@dataclass
class SamplerConfig:
    steps: int = 32
    method: str = "euler"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.method not in ("euler", "heun"):
            raise ValueError(f"unknown method {self.method!r}")


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> FlowSample:
    """Point on the straight data-to-noise path at time t, with its target velocity."""
    x0 = np.asarray(x0, dtype=np.float32)
    x1 = np.asarray(x1, dtype=np.float32)
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    t32 = np.float32(t)
    xt = (np.float32(1.0) - t32) * x0 + t32 * x1
    return FlowSample(x0=x0, x1=x1, t=float(t), xt=xt, v_target=x1 - x0)


def fm_loss(v_pred: Tensor, v_target: np.ndarray) -> Tensor:
    """Mean squared error between predicted and target velocity.

    Mean (not sum) reduction keeps the loss scale independent of each
    expert's output resolution.
    """
    target = np.asarray(v_target, dtype=np.float32)
    if v_pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {v_pred.shape} vs {target.shape}")
    diff = v_pred - target
    return (diff * diff).mean()


def sample(velocity_fn: VelocityFn, condition, shape: tuple[int, ...],
           cfg: SamplerConfig) -> np.ndarray:
    """Integrate the velocity field backward from seeded noise at t=1 to t=0.

    Euler or Heun steps over a uniform grid; deterministic for a fixed seed.
    Raises NumericError (with the offending step index) if the field returns
    a non-finite value.
    """
    rng = rng_for(cfg.seed, "flow-sample")
    x = rng.standard_normal(shape).astype(np.float32)
    h = np.float32(-1.0 / cfg.steps)

    def vel(xc: np.ndarray, tc: float, step: int) -> np.ndarray:
        v = np.asarray(velocity_fn(xc, tc, condition), dtype=np.float32)
        if v.shape != x.shape:
            raise ShapeError(f"velocity shape {v.shape} != state shape {x.shape}")
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite velocity at step {step}")
        return v

    for k in range(cfg.steps):
        t = 1.0 - k / cfg.steps
        v1 = vel(x, t, k)
        if cfg.method == "euler":
            x = x + h * v1
        else:
            x_pred = x + h * v1
            t_next = 1.0 - (k + 1) / cfg.steps
            v2 = vel(x_pred, t_next, k)
            x = x + h * np.float32(0.5) * (v1 + v2)
    return x
