"""Episode records, dataset generation, and the WAKE binary file format.

One episode is a decision point: the ego has driven a short context under
the scripted expert, the cameras observe the world, and the expert's future
trajectory is the supervision target. The stored scene snapshot replays to
the identical expert trajectory, which is what closed-loop scoring relies on.

File layout (little-endian):
  magic "WAKE" | u16 version | u16 record count | records...
Record:
  u16 instruction_id | u16 views | u16 H | u16 W | u16 T_a | u16 H_ctx |
  f32 frames [views*H*W*3] | f32 depth [H*W] | f32 action_context [H_ctx*4] |
  f32 expert_trajectory [T_a*4] | u32 snapshot length | snapshot
Snapshot:
  u16 n_branches | u16 route_idx | u16 scenario_id | u16 n_actors |
  f32 half_width | f32 cruise_speed | f32 dt |
  f32 edge_amp | f32 edge_wavelength | f32 edge_phase |
  f32 ego x,y,theta,speed |
  per branch: u32 n_points | f32 points [2*n_points] |
  per actor: f32 x,y,theta,speed,length,width
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .microworld import (
    SCENARIO_INSTRUCTION,
    SCENARIOS,
    Actor,
    CameraConfig,
    Centerline,
    EgoState,
    Scene,
    _expert_rollout,
    expert_policy,
    render_views,
    rects_intersect,
    rollout_states,
)
from .tensor import rng_for
from .trajectory import Trajectory

MAGIC = b"WAKE"
VERSION = 1

_TRAIN_OFFSET = 0
_TEST_OFFSET = 1 << 19
_SPLIT_SPAN = 1 << 19


class EpisodeFormatError(IOError):
    """Raised on magic/version mismatch or truncated payload."""


@dataclass
class WorldConfig:
    """Geometry and sampling parameters of the micro-world data source.

    ``scenario_mix`` holds comma-separated weights for the five scenario
    families in SCENARIOS order (straight, left-turn, right-turn,
    lead-vehicle, stopped-obstacle); they need not be normalized.
    """

    frame_height: int = 32
    frame_width: int = 64
    views: int = 1
    fov: float = 1.2
    d_max: float = 80.0
    dt: float = 0.5
    horizon: int = 8
    context: int = 4
    depth_label_noise: float = 0.0
    scenario_mix: str = "1,1,1,1,1"

    def camera(self) -> CameraConfig:
        return CameraConfig(fov=self.fov, width=self.frame_width,
                            height=self.frame_height, d_max=self.d_max)

    def scenario_probs(self) -> np.ndarray:
        weights = np.array([float(w) for w in self.scenario_mix.split(",")],
                           dtype=np.float64)
        if weights.shape != (len(SCENARIOS),) or (weights < 0).any() or weights.sum() <= 0:
            raise ValueError(f"scenario_mix needs {len(SCENARIOS)} non-negative weights")
        return weights / weights.sum()


@dataclass
class EpisodeRecord:
    instruction_id: int
    frames: np.ndarray
    depth: np.ndarray
    action_context: np.ndarray
    expert_traj: Trajectory
    scene: Scene

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.action_context = np.asarray(self.action_context, dtype=np.float32)


@dataclass
class DatasetStats:
    scenario_counts: dict = field(default_factory=dict)
    rejections: int = 0
    episodes: int = 0

    @property
    def rejection_rate(self) -> float:
        total = self.episodes + self.rejections
        return self.rejections / total if total else 0.0


def split_seed_base(seed: int, split: str) -> int:
    """Disjoint episode-seed ranges per split under one root seed."""
    if split == "train":
        return seed * (1 << 20) + _TRAIN_OFFSET
    if split == "test":
        return seed * (1 << 20) + _TEST_OFFSET
    raise ValueError(f"unknown split {split!r}")


def _is_static_episode(scene: Scene, expert: Trajectory) -> bool:
    """True when nothing will move: future frames would equal the current one,
    which teaches the video expert nothing and makes scoring degenerate."""
    ego_moves = float(np.linalg.norm(expert.positions()[-1])) > 0.3
    actors_move = any(a.speed > 0.1 for a in scene.actors)
    return not (ego_moves or actors_move)


def _expert_violates(scene: Scene, traj: Trajectory) -> bool:
    """Collision or corridor breach along the expert rollout (rejection test)."""
    prev = (scene.ego.x, scene.ego.y)
    for world in rollout_states(scene, traj):
        ego = world.ego
        moved = np.hypot(ego.x - prev[0], ego.y - prev[1]) > 0.05
        corners = ego.corners()
        if moved and any(rects_intersect(corners, a.corners()) for a in world.actors):
            return True
        if any(world.corridor_distance(c) > 0.1 for c in corners):
            return True
        prev = (ego.x, ego.y)
    return False


def _generate_episode(episode_seed: int, attempt: int,
                      cfg: WorldConfig) -> tuple[EpisodeRecord | None, str]:
    from .microworld import generate_scene, world_to_ego_frame

    rng = rng_for(episode_seed, "episode")
    scenario = SCENARIOS[int(rng.choice(len(SCENARIOS), p=cfg.scenario_probs()))]
    instruction = SCENARIO_INSTRUCTION[scenario]
    scene_seed = int(rng_for(episode_seed, "scene-seed", attempt).integers(1 << 62))
    scene = generate_scene(scene_seed, scenario)

    context_world = [(scene.ego, scene)]
    for ego, world in _expert_rollout(scene, cfg.context - 1, cfg.dt):
        context_world.append((ego, world))
    decision_ego, decision_scene = context_world[-1]
    decision_scene = Scene(branches=decision_scene.branches,
                           route_idx=decision_scene.route_idx,
                           half_width=decision_scene.half_width,
                           actors=decision_scene.actors,
                           ego=decision_ego,
                           scenario=decision_scene.scenario,
                           cruise_speed=decision_scene.cruise_speed)

    expert = expert_policy(decision_scene, decision_ego, instruction,
                           horizon=cfg.horizon, dt=cfg.dt)
    if _expert_violates(decision_scene, expert) or _is_static_episode(decision_scene, expert):
        return None, scenario

    context = world_to_ego_frame(
        [(e.x, e.y, e.theta, e.speed) for e, _ in context_world], decision_ego, cfg.dt)
    frames, depth = render_views(
        decision_scene, (decision_ego.x, decision_ego.y, decision_ego.theta),
        cfg.camera(), cfg.views)
    if cfg.depth_label_noise > 0.0:
        noise = rng_for(episode_seed, "depth-noise").standard_normal(depth.shape)
        depth = np.clip(depth * np.exp(cfg.depth_label_noise * noise), 0.1, cfg.d_max)
    record = EpisodeRecord(
        instruction_id=instruction,
        frames=frames.astype(np.float32),
        depth=depth.astype(np.float32),
        action_context=context.states,
        expert_traj=expert,
        scene=decision_scene,
    )
    return record, scenario


def build_dataset(n_episodes: int, seed: int, split: str,
                  cfg: WorldConfig | None = None) -> tuple[list[EpisodeRecord], DatasetStats]:
    """Generate episodes deterministically; scenes whose expert rollout is
    unsafe are rejected and the slot resampled from a derived seed."""
    cfg = cfg or WorldConfig()
    base = split_seed_base(seed, split)
    stats = DatasetStats()
    records: list[EpisodeRecord] = []
    for i in range(n_episodes):
        episode_seed = base + i
        for attempt in range(64):
            record, scenario = _generate_episode(episode_seed, attempt, cfg)
            if record is not None:
                records.append(record)
                stats.scenario_counts[scenario] = stats.scenario_counts.get(scenario, 0) + 1
                stats.episodes += 1
                break
            stats.rejections += 1
        else:
            raise RuntimeError(f"could not generate a safe episode for slot {i}")
    return records, stats


# -- serialization ----------------------------------------------------------------


def _write_f32(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(buf: io.BytesIO, count: int, shape: tuple[int, ...]) -> np.ndarray:
    raw = buf.read(4 * count)
    if len(raw) != 4 * count:
        raise EpisodeFormatError("truncated float payload")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def serialize_scene(scene: Scene, dt: float) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<HHHH", len(scene.branches), scene.route_idx,
                          SCENARIOS.index(scene.scenario), len(scene.actors)))
    buf.write(struct.pack("<fff", scene.half_width, scene.cruise_speed, dt))
    buf.write(struct.pack("<fff", scene.edge_amp, scene.edge_wavelength,
                          scene.edge_phase))
    buf.write(struct.pack("<ffff", scene.ego.x, scene.ego.y, scene.ego.theta,
                          scene.ego.speed))
    for b in scene.branches:
        buf.write(struct.pack("<I", len(b.points)))
        _write_f32(buf, b.points)
    for a in scene.actors:
        buf.write(struct.pack("<ffffff", a.x, a.y, a.theta, a.speed, a.length, a.width))
    return buf.getvalue()


def deserialize_scene(raw: bytes) -> tuple[Scene, float]:
    buf = io.BytesIO(raw)
    n_branches, route_idx, scenario_id, n_actors = struct.unpack("<HHHH", buf.read(8))
    half_width, cruise, dt = struct.unpack("<fff", buf.read(12))
    edge_amp, edge_wavelength, edge_phase = struct.unpack("<fff", buf.read(12))
    ex, ey, etheta, espeed = struct.unpack("<ffff", buf.read(16))
    branches = []
    for _ in range(n_branches):
        (n_points,) = struct.unpack("<I", buf.read(4))
        branches.append(Centerline(_read_f32(buf, 2 * n_points, (n_points, 2))))
    actors = []
    for _ in range(n_actors):
        vals = struct.unpack("<ffffff", buf.read(24))
        actors.append(Actor(*vals))
    scene = Scene(branches=branches, route_idx=route_idx, half_width=half_width,
                  actors=actors, ego=EgoState(ex, ey, etheta, espeed),
                  scenario=SCENARIOS[scenario_id], cruise_speed=cruise,
                  edge_amp=edge_amp, edge_wavelength=edge_wavelength,
                  edge_phase=edge_phase)
    return scene, dt


def write_episode_file(path: str, records: list[EpisodeRecord], dt: float = 0.5) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", VERSION, len(records)))
        for rec in records:
            views, h, w, _ = rec.frames.shape
            t_a = len(rec.expert_traj)
            h_ctx = rec.action_context.shape[0]
            fh.write(struct.pack("<HHHHHH", rec.instruction_id, views, h, w, t_a, h_ctx))
            buf = io.BytesIO()
            _write_f32(buf, rec.frames)
            _write_f32(buf, rec.depth)
            _write_f32(buf, rec.action_context)
            _write_f32(buf, rec.expert_traj.states)
            fh.write(buf.getvalue())
            blob = serialize_scene(rec.scene, rec.expert_traj.dt)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def read_episode_file(path: str) -> list[EpisodeRecord]:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    magic = buf.read(4)
    if magic != MAGIC:
        raise EpisodeFormatError(f"bad magic {magic!r}")
    version, count = struct.unpack("<HH", buf.read(4))
    if version != VERSION:
        raise EpisodeFormatError(f"unsupported episode file version {version}")
    records = []
    for _ in range(count):
        instruction, views, h, w, t_a, h_ctx = struct.unpack("<HHHHHH", buf.read(12))
        frames = _read_f32(buf, views * h * w * 3, (views, h, w, 3))
        depth = _read_f32(buf, h * w, (h, w))
        context = _read_f32(buf, h_ctx * 4, (h_ctx, 4))
        traj_states = _read_f32(buf, t_a * 4, (t_a, 4))
        (blob_len,) = struct.unpack("<I", buf.read(4))
        scene, dt = deserialize_scene(buf.read(blob_len))
        records.append(EpisodeRecord(
            instruction_id=instruction, frames=frames, depth=depth,
            action_context=context,
            expert_traj=Trajectory(states=traj_states, dt=dt), scene=scene))
    return records
