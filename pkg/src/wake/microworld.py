"""Procedural 2D driving micro-world with exact raycast depth ground truth.

A scene is one or two lane branches (polyline centerlines with a shared
half-width), a handful of rectangular actors with constant velocity, and an
ego state. The renderer casts one ray per image column and extrudes the
scan into an H x W frame with a sky/ground split, so depth ground truth is
exact by construction. A scripted pure-pursuit expert supplies reference
trajectories for every instruction.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .tensor import rng_for
from .trajectory import Trajectory

EGO_LENGTH = 4.0
EGO_WIDTH = 2.0

SCENARIOS = ("straight", "left-turn", "right-turn", "lead-vehicle", "stopped-obstacle")
INSTRUCTIONS = ("go-straight", "turn-left", "turn-right", "stop")
SCENARIO_INSTRUCTION = {
    "straight": 0,
    "left-turn": 1,
    "right-turn": 2,
    "lead-vehicle": 0,
    "stopped-obstacle": 3,
}

HIT_NONE = 0
HIT_ROAD_EDGE = 1
HIT_ACTOR = 2


def _f32(x: float) -> float:
    """Quantize a scalar through float32 so snapshots round-trip bitwise."""
    return float(np.float32(x))


# -- geometry -------------------------------------------------------------------


class Centerline:
    """A polyline path with cached cumulative arc length."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"centerline needs [N>=2, 2] points, got {pts.shape}")
        self.points = pts
        seg = np.diff(pts.astype(np.float64), axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self._seg_dir = seg / np.maximum(self._seg_len[:, None], 1e-12)
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.length))
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        return self.points[i].astype(np.float64) + self._seg_dir[i] * (s - self._cum[i])

    def tangent_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.length))
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        return self._seg_dir[i]

    def project(self, xy) -> tuple[float, float]:
        """Arc length of the closest point and the unsigned lateral distance."""
        p = np.asarray(xy, dtype=np.float64)
        a = self.points[:-1].astype(np.float64)
        t = ((p - a) * self._seg_dir).sum(axis=1)
        t = np.clip(t, 0.0, self._seg_len)
        closest = a + self._seg_dir * t[:, None]
        d = np.hypot(*(p - closest).T)
        i = int(np.argmin(d))
        return float(self._cum[i] + t[i]), float(d[i])

    def min_distance(self, xy) -> float:
        return self.project(xy)[1]

    def offset_polyline(self, offset) -> np.ndarray:
        """Polyline at a signed lateral offset (+left of travel).

        ``offset`` may be a scalar or a per-point array, which is how the
        renderer builds road edges whose setback varies along the route.
        """
        pts = self.points.astype(np.float64)
        d = np.vstack([self._seg_dir[:1], self._seg_dir])
        d2 = np.vstack([self._seg_dir, self._seg_dir[-1:]])
        normal = np.stack([-(d + d2)[:, 1], (d + d2)[:, 0]], axis=1)
        normal /= np.maximum(np.hypot(normal[:, 0], normal[:, 1]), 1e-12)[:, None]
        offset = np.asarray(offset, dtype=np.float64).reshape(-1, 1) \
            if np.ndim(offset) else float(offset)
        return (pts + offset * normal).astype(np.float32)

    @property
    def arclengths(self) -> np.ndarray:
        return self._cum


def rect_corners(x: float, y: float, theta: float, length: float, width: float) -> np.ndarray:
    """Corner coordinates [4, 2] of an oriented rectangle footprint."""
    c, s = np.cos(theta), np.sin(theta)
    hx, hy = length / 2.0, width / 2.0
    local = np.array([[hx, hy], [hx, -hy], [-hx, -hy], [-hx, hy]], dtype=np.float64)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def rects_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quads given as [4, 2] corners."""
    for quad_pair in ((a, b), (b, a)):
        quad = quad_pair[0]
        for i in range(4):
            edge = quad[(i + 1) % 4] - quad[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _segments_of_polyline(poly: np.ndarray) -> np.ndarray:
    return np.concatenate([poly[:-1], poly[1:]], axis=1)


def ray_segment_distances(origin: np.ndarray, angles: np.ndarray,
                          segments: np.ndarray, d_max: float) -> np.ndarray:
    """Nearest-hit distance per ray against a segment soup; d_max when no hit.

    Vectorized over [n_rays x n_segments]; used by both the renderer and its
    brute-force oracle (with different segment assembly paths).
    """
    if segments.size == 0:
        return np.full(len(angles), d_max, dtype=np.float64)
    ox, oy = float(origin[0]), float(origin[1])
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    ax, ay = segments[:, 0][None, :] - ox, segments[:, 1][None, :] - oy
    ex = (segments[:, 2] - segments[:, 0])[None, :]
    ey = (segments[:, 3] - segments[:, 1])[None, :]
    denom = dx * ey - dy * ex
    safe = np.where(np.abs(denom) < 1e-12, 1.0, denom)
    t = (ax * ey - ay * ex) / safe
    u = (ax * dy - ay * dx) / safe
    valid = (np.abs(denom) >= 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    return np.minimum(t.min(axis=1), d_max)


# -- scene objects ---------------------------------------------------------------


@dataclass
class Actor:
    """Rectangular traffic participant moving at constant velocity along heading."""

    x: float
    y: float
    theta: float
    speed: float
    length: float
    width: float

    def __post_init__(self):
        for name in ("x", "y", "theta", "speed", "length", "width"):
            setattr(self, name, _f32(getattr(self, name)))
        if self.length <= 0 or self.width <= 0:
            raise ValueError("actor footprint must be non-degenerate")

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.theta, self.length, self.width)

    def advanced(self, dt: float) -> "Actor":
        return Actor(
            x=self.x + self.speed * np.cos(self.theta) * dt,
            y=self.y + self.speed * np.sin(self.theta) * dt,
            theta=self.theta, speed=self.speed,
            length=self.length, width=self.width,
        )


@dataclass
class EgoState:
    x: float
    y: float
    theta: float
    speed: float

    def __post_init__(self):
        for name in ("x", "y", "theta", "speed"):
            setattr(self, name, _f32(getattr(self, name)))

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.theta, EGO_LENGTH, EGO_WIDTH)


@dataclass
class Scene:
    """World state: lane branches, actors, ego, and the scenario tag.

    Road edges sit at ``half_width`` plus a sinusoidal outward setback
    (amplitude / wavelength / phase below): the drivable corridor is exactly
    ``half_width`` wide, while the rendered walls carry longitudinal texture
    so that camera frames change as the ego advances.
    """

    branches: list[Centerline]
    route_idx: int
    half_width: float
    actors: list[Actor]
    ego: EgoState
    scenario: str
    cruise_speed: float
    edge_amp: float = 0.8
    edge_wavelength: float = 9.0
    edge_phase: float = 0.0

    def __post_init__(self):
        for name in ("half_width", "cruise_speed", "edge_amp", "edge_wavelength",
                     "edge_phase"):
            setattr(self, name, _f32(getattr(self, name)))
        if self.half_width <= EGO_WIDTH / 2.0:
            raise ValueError("lane half-width must exceed ego half-width")
        if self.edge_wavelength <= 0.5:
            raise ValueError("edge wavelength too small")

    @property
    def route(self) -> Centerline:
        return self.branches[self.route_idx]

    def branch_for(self, instruction_id: int) -> int:
        """Turn instructions select the turn branch when one exists."""
        if INSTRUCTIONS[instruction_id] in ("turn-left", "turn-right") and len(self.branches) > 1:
            return 1
        return 0

    def corridor_distance(self, xy) -> float:
        """Distance beyond the drivable corridor; <= 0 means inside."""
        d = min(b.min_distance(xy) for b in self.branches)
        return d - self.half_width

    def edge_polylines(self) -> list[np.ndarray]:
        """Rendered road-edge polylines: outward-only sinusoidal setback."""
        polys = []
        for b in self.branches:
            s = b.arclengths
            wobble = 0.5 * self.edge_amp * (
                1.0 + np.sin(2.0 * np.pi * s / self.edge_wavelength + self.edge_phase))
            polys.append(b.offset_polyline(+(self.half_width + wobble)))
            polys.append(b.offset_polyline(-(self.half_width + wobble)))
        return polys

    def edge_segments(self) -> np.ndarray:
        """Road-edge segments for both rendered boundaries of every branch."""
        return np.concatenate(
            [_segments_of_polyline(p) for p in self.edge_polylines()], axis=0)


@dataclass
class CameraConfig:
    """Horizontal-scan raycast camera rigidly mounted on the ego."""

    fov: float = 1.2
    width: int = 64
    height: int = 32
    d_max: float = 80.0
    mount_forward: float = 1.5
    yaw: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.fov < np.pi:
            raise ValueError("fov must lie in (0, pi)")
        if self.width < 8 or self.height < 8:
            raise ValueError("camera needs at least 8x8 resolution")


# -- scene generation ------------------------------------------------------------


def _arc_points(start: np.ndarray, heading: float, radius: float, angle: float,
                step: float = 0.5) -> np.ndarray:
    """Circular arc polyline; positive angle turns left."""
    n = max(int(abs(angle) * radius / step), 8)
    sign = 1.0 if angle > 0 else -1.0
    center = start + radius * np.array([-np.sin(heading), np.cos(heading)]) * sign
    phi0 = np.arctan2(start[1] - center[1], start[0] - center[0])
    phis = phi0 + sign * np.linspace(0.0, abs(angle), n + 1)
    return np.stack([center[0] + radius * np.cos(phis),
                     center[1] + radius * np.sin(phis)], axis=1)


def _straight_points(start: np.ndarray, heading: float, length: float,
                     step: float = 1.0) -> np.ndarray:
    n = max(int(length / step), 2)
    s = np.linspace(0.0, length, n + 1)[:, None]
    d = np.array([np.cos(heading), np.sin(heading)])
    return start[None, :] + s * d[None, :]


def _rigid_transform(points: np.ndarray, rot: float, shift: np.ndarray) -> np.ndarray:
    c, s = np.cos(rot), np.sin(rot)
    rotm = np.array([[c, -s], [s, c]])
    return points @ rotm.T + shift[None, :]


def generate_scene(seed: int, scenario_type: str) -> Scene:
    """Deterministic procedural scene for one scenario family.

    Geometry ranges: cruise speed 4-7 m/s, lane half-width 2.6-3.4 m, turn
    radius 9-14 m over 80-100 degrees branching 16-26 m ahead, lead vehicle
    12-20 m ahead at 40-70% cruise, stopped obstacle 22-32 m ahead; road-edge
    setback undulates with amplitude 0.5-1.3 m over a 6-14 m wavelength. The
    whole scene receives a random rigid transform so nothing is axis-aligned.
    """
    if scenario_type not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario_type!r}")
    rng = rng_for(seed, "scene", scenario_type)
    half_width = rng.uniform(2.6, 3.4)
    cruise = rng.uniform(4.0, 7.0)
    rot = rng.uniform(-np.pi, np.pi)
    shift = rng.uniform(-40.0, 40.0, size=2)

    main_len = 90.0
    origin = np.array([0.0, 0.0])
    main = _straight_points(origin, 0.0, main_len)
    branches_local = [main]
    actors_local: list[tuple[float, float, float, float, float, float]] = []

    if scenario_type in ("left-turn", "right-turn"):
        s_branch = rng.uniform(16.0, 26.0)
        radius = rng.uniform(9.0, 14.0)
        angle = np.deg2rad(rng.uniform(80.0, 100.0))
        if scenario_type == "right-turn":
            angle = -angle
        start = np.array([s_branch, 0.0])
        approach = _straight_points(origin, 0.0, s_branch)
        arc = _arc_points(start, 0.0, radius, angle)
        exit_heading = angle
        tail = _straight_points(arc[-1], exit_heading, 25.0)
        branch = np.concatenate([approach, arc[1:], tail[1:]], axis=0)
        branches_local.append(branch)
    elif scenario_type == "lead-vehicle":
        gap = rng.uniform(12.0, 20.0)
        speed = rng.uniform(0.4, 0.7) * cruise
        actors_local.append((gap + 4.0, 0.0, 0.0, speed, 3.8, 1.9))
    elif scenario_type == "stopped-obstacle":
        cruise = min(cruise, 5.5)
        gap = rng.uniform(22.0, 32.0)
        actors_local.append((gap + 4.0, 0.0, 0.0, 0.0, 3.5, 2.0))

    branches = [Centerline(_rigid_transform(b, rot, shift).astype(np.float32))
                for b in branches_local]
    actors = []
    for ax, ay, atheta, aspeed, alen, awid in actors_local:
        p = _rigid_transform(np.array([[ax, ay]]), rot, shift)[0]
        actors.append(Actor(x=p[0], y=p[1], theta=atheta + rot, speed=aspeed,
                            length=alen, width=awid))

    s_ego = rng.uniform(2.0, 6.0)
    ego_p = _rigid_transform(np.array([[s_ego, 0.0]]), rot, shift)[0]
    ego = EgoState(x=ego_p[0], y=ego_p[1], theta=rot, speed=cruise)
    instruction = SCENARIO_INSTRUCTION[scenario_type]
    scene = Scene(branches=branches, route_idx=0, half_width=half_width,
                  actors=actors, ego=ego, scenario=scenario_type, cruise_speed=cruise,
                  edge_amp=rng.uniform(0.5, 1.3),
                  edge_wavelength=rng.uniform(6.0, 14.0),
                  edge_phase=rng.uniform(0.0, 2.0 * np.pi))
    scene.route_idx = scene.branch_for(instruction)
    return scene


# -- rendering -------------------------------------------------------------------


def raycast(scene: Scene, origin: np.ndarray, angles: np.ndarray,
            d_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-hit depth and hit class per ray (road edges and actor rectangles)."""
    edge_segs = scene.edge_segments().astype(np.float64)
    d_edge = ray_segment_distances(origin, angles, edge_segs, d_max)
    if scene.actors:
        quads = [a.corners() for a in scene.actors]
        segs = np.concatenate(
            [np.concatenate([q, np.roll(q, -1, axis=0)], axis=1) for q in quads], axis=0)
        d_act = ray_segment_distances(origin, angles, segs, d_max)
    else:
        d_act = np.full(len(angles), d_max)
    depth = np.minimum(d_edge, d_act)
    classes = np.where(depth >= d_max, HIT_NONE,
                       np.where(d_act <= d_edge, HIT_ACTOR, HIT_ROAD_EDGE))
    return depth, classes


_CLASS_COLORS = {
    HIT_ROAD_EDGE: np.array([0.30, 0.42, 0.92], dtype=np.float32),
    HIT_ACTOR: np.array([0.95, 0.30, 0.22], dtype=np.float32),
}
_SKY = np.array([0.55, 0.75, 0.95], dtype=np.float32)
_GROUND = np.array([0.32, 0.28, 0.24], dtype=np.float32)


def render(scene: Scene, ego_pose: tuple[float, float, float],
           cam: CameraConfig) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one camera view: float32 frame [H, W, 3] in [0,1] and exact
    depth [H, W] (the per-column scan replicated down the rows).

    Each hit paints a column block centered on the horizon whose height and
    brightness scale with 1/depth over sky above and ground below.
    """
    x, y, theta = ego_pose
    heading = theta + cam.yaw
    origin = np.array([x + cam.mount_forward * np.cos(theta),
                       y + cam.mount_forward * np.sin(theta)])
    angles = heading + np.linspace(cam.fov / 2.0, -cam.fov / 2.0, cam.width)
    depth, classes = raycast(scene, origin, angles, cam.d_max)

    h, w = cam.height, cam.width
    frame = np.empty((h, w, 3), dtype=np.float32)
    horizon = h // 2
    frame[:horizon] = _SKY
    frame[horizon:] = _GROUND
    half_heights = np.clip(np.round(1.6 * h / np.maximum(depth, 1.0)), 1, h // 2).astype(int)
    brightness = np.clip(8.0 / np.maximum(depth, 1e-6), 0.12, 1.0).astype(np.float32)
    for j in range(w):
        if classes[j] == HIT_NONE:
            continue
        hh = half_heights[j]
        color = _CLASS_COLORS[int(classes[j])] * brightness[j]
        frame[max(horizon - hh, 0): min(horizon + hh, h), j] = color
    depth_map = np.broadcast_to(depth.astype(np.float32), (h, w)).copy()
    return frame, depth_map


def render_views(scene: Scene, ego_pose: tuple[float, float, float], cam: CameraConfig,
                 n_views: int) -> tuple[np.ndarray, np.ndarray]:
    """Render n_views cameras fanned around the forward axis.

    Returns frames [V, H, W, 3] and the front view's depth map [H, W] (depth
    supervision follows the paper's single monocular map).
    """
    yaws = [0.0] if n_views == 1 else list(np.linspace(0.9, -0.9, n_views))
    frames = []
    front_depth = None
    for i, yaw in enumerate(yaws):
        view_cam = CameraConfig(fov=cam.fov, width=cam.width, height=cam.height,
                                d_max=cam.d_max, mount_forward=cam.mount_forward, yaw=yaw)
        frame, depth = render(scene, ego_pose, view_cam)
        frames.append(frame)
        if i == len(yaws) // 2 or n_views == 1:
            front_depth = depth
    return np.stack(frames, axis=0), front_depth


# -- dynamics --------------------------------------------------------------------


def step(scene: Scene, next_state: tuple[float, float, float, float], dt: float) -> Scene:
    """Advance the world one planning interval.

    The ego teleports to the commanded trajectory state (trajectory-tracking
    abstraction); actors advance at constant velocity.
    """
    out = copy.copy(scene)
    out.actors = [a.advanced(dt) for a in scene.actors]
    x, y, theta, speed = next_state
    out.ego = EgoState(x=x, y=y, theta=theta, speed=speed)
    return out


# -- scripted expert --------------------------------------------------------------


_A_MAX = 2.2
_A_BRAKE = 1.5
_JERK_MAX = 5.0
_A_LAT_MAX = 2.2
_STOP_MARGIN = 2.5
_HEADWAY_S = 2.0
_FINE_DT = 0.1


def _route_blockers(scene: Scene, route: Centerline, s_ego: float):
    """Actors on or near the route ahead of the ego, as (gap, speed) pairs."""
    out = []
    for a in scene.actors:
        s_a, lat = route.project((a.x, a.y))
        if lat > scene.half_width and lat > a.width:
            continue
        gap = s_a - s_ego - a.length / 2.0 - EGO_LENGTH / 2.0
        if gap > -EGO_LENGTH:
            out.append((gap, a.speed))
    return out


def _desired_speed(scene: Scene, route: Centerline, s_ego: float, cruise: float) -> float:
    v = cruise
    look = route.tangent_at(s_ego + 3.0)
    ahead = route.tangent_at(s_ego + 9.0)
    turn = abs(float(look[0] * ahead[1] - look[1] * ahead[0]))
    if turn > 0.05:
        radius_est = 6.0 / max(turn, 1e-3)
        v = min(v, float(np.sqrt(_A_LAT_MAX * max(radius_est, 1.0))))
    for gap, speed in _route_blockers(scene, route, s_ego):
        if speed > 0.5:
            v = min(v, max(gap, 0.0) / _HEADWAY_S)
        else:
            reach = max(gap - _STOP_MARGIN, 0.0)
            v = min(v, float(np.sqrt(2.0 * _A_BRAKE * reach)))
    return max(v, 0.0)


def _expert_rollout(scene: Scene, n_coarse: int, dt: float):
    """Simulate ego (pure pursuit + smooth speed control) and actors jointly.

    Yields one (EgoState, Scene) per coarse step of length dt; internally
    integrates at a finer timestep with acceleration and jerk slew limits.
    """
    world = scene
    ego = scene.ego
    route = scene.branches[scene.route_idx]
    x, y, theta, v = ego.x, ego.y, ego.theta, ego.speed
    accel = 0.0
    substeps = max(int(round(dt / _FINE_DT)), 1)
    fine = dt / substeps
    for _ in range(n_coarse):
        for _ in range(substeps):
            s_ego, _ = route.project((x, y))
            v_des = _desired_speed(world, route, s_ego, world.cruise_speed)
            a_des = np.clip((v_des - v) / (2.0 * fine), -_A_MAX, _A_MAX)
            accel += np.clip(a_des - accel, -_JERK_MAX * fine, _JERK_MAX * fine)
            v = max(v + accel * fine, 0.0)
            if v_des < 0.3 and v < 0.4:
                v, accel = 0.0, 0.0
            lookahead = np.clip(1.2 * v + 1.5, 2.5, 7.0)
            target = route.point_at(s_ego + lookahead)
            alpha = np.arctan2(target[1] - y, target[0] - x) - theta
            alpha = np.arctan2(np.sin(alpha), np.cos(alpha))
            curvature = 2.0 * np.sin(alpha) / lookahead
            theta += np.clip(v * curvature, -1.2, 1.2) * fine
            x += v * np.cos(theta) * fine
            y += v * np.sin(theta) * fine
        world = step(world, (x, y, theta, v), dt)
        yield world.ego, world


def expert_policy(scene: Scene, ego_state: EgoState, instruction_id: int,
                  horizon: int = 8, dt: float = 0.5) -> Trajectory:
    """Scripted reference plan: pure pursuit along the instruction-selected
    branch with time-headway keeping and stop-before-obstacle speed control.

    Returns the future trajectory in the ego frame at decision time.
    """
    sim = copy.copy(scene)
    sim.ego = ego_state
    sim.route_idx = scene.branch_for(instruction_id)
    states = []
    for ego, _ in _expert_rollout(sim, horizon, dt):
        states.append((ego.x, ego.y, ego.theta, ego.speed))
    return world_to_ego_frame(states, ego_state, dt)


def world_to_ego_frame(states: list[tuple[float, float, float, float]],
                       anchor: EgoState, dt: float) -> Trajectory:
    """Express world-frame (x, y, theta, v) states relative to an anchor pose."""
    c, s = np.cos(anchor.theta), np.sin(anchor.theta)
    rows = []
    for x, y, theta, _ in states:
        dx, dy = x - anchor.x, y - anchor.y
        local = (c * dx + s * dy, -s * dx + c * dy)
        rel = theta - anchor.theta
        rows.append((local[0], local[1], np.cos(rel), np.sin(rel)))
    return Trajectory(states=np.asarray(rows, dtype=np.float32), dt=dt)


def ego_frame_to_world(traj: Trajectory, anchor: EgoState) -> list[tuple[float, float, float]]:
    """Inverse of world_to_ego_frame for positions and headings."""
    c, s = np.cos(anchor.theta), np.sin(anchor.theta)
    out = []
    for i in range(len(traj)):
        x, y, ch, sh = (float(v) for v in traj.states[i])
        wx = anchor.x + c * x - s * y
        wy = anchor.y + s * x + c * y
        theta = anchor.theta + np.arctan2(sh, ch)
        out.append((wx, wy, float(theta)))
    return out


def rollout_states(scene: Scene, traj: Trajectory) -> list[Scene]:
    """Replay a planned trajectory through step(); returns the world after each state."""
    worlds = []
    poses = ego_frame_to_world(traj, scene.ego)
    current = scene
    prev = (scene.ego.x, scene.ego.y)
    for i, (x, y, theta) in enumerate(poses):
        speed = float(np.hypot(x - prev[0], y - prev[1])) / traj.dt
        current = step(current, (x, y, theta, speed), traj.dt)
        worlds.append(current)
        prev = (x, y)
    return worlds
