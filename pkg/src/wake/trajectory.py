"""Trajectory containers and the wrap-around-free heading codec.

States carry heading as (cos, sin) so turns never jump across the pi
boundary; decoding renormalizes before the two-argument arctangent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class TrajectoryState(NamedTuple):
    x: float
    y: float
    cos_h: float
    sin_h: float


@dataclass
class Trajectory:
    """A fixed-rate sequence of planar states, ego frame at decision time.

    ``states`` is float32 [T, 4] with columns (x, y, cos heading, sin heading).
    """

    states: np.ndarray
    dt: float = 0.5

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        if self.states.ndim != 2 or self.states.shape[1] != 4:
            raise ValueError(f"states must be [T, 4], got {self.states.shape}")

    def __len__(self) -> int:
        return self.states.shape[0]

    def state(self, i: int) -> TrajectoryState:
        return TrajectoryState(*(float(v) for v in self.states[i]))

    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def headings(self) -> np.ndarray:
        return np.arctan2(self.states[:, 3], self.states[:, 2])


def encode_heading(x: float, y: float, theta: float) -> TrajectoryState:
    """Pack a pose into the continuous (x, y, cos, sin) representation."""
    return TrajectoryState(float(x), float(y), float(np.cos(theta)), float(np.sin(theta)))


def decode_heading(state: TrajectoryState) -> tuple[float, float, float, bool]:
    """Unpack to (x, y, theta, degenerate).

    The (cos, sin) pair is renormalized to unit length first, so any positive
    scaling decodes to the same angle. A zero heading vector decodes to
    theta=0 with the degenerate flag set.
    """
    norm = float(np.hypot(state.cos_h, state.sin_h))
    if norm < 1e-12:
        return state.x, state.y, 0.0, True
    c, s = state.cos_h / norm, state.sin_h / norm
    return state.x, state.y, float(np.arctan2(s, c)), False


def renormalize_headings(states: np.ndarray) -> np.ndarray:
    """Project every row's (cos, sin) onto the unit circle; zero rows become (1, 0)."""
    out = np.array(states, dtype=np.float32, copy=True)
    norm = np.hypot(out[:, 2], out[:, 3])
    degenerate = norm < 1e-12
    norm = np.where(degenerate, 1.0, norm)
    out[:, 2] = np.where(degenerate, 1.0, out[:, 2] / norm)
    out[:, 3] = np.where(degenerate, 0.0, out[:, 3] / norm)
    return out
