"""Depth, video, and closed-loop planning metrics.

Planning subscores follow the gate-product times weighted-average
aggregation with weights (5, 5, 2) over (time-to-collision, ego progress,
comfort); no-collision and drivable-area are hard gates. Collisions while
the ego is stationary are not charged (toy no-at-fault proxy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import EpisodeRecord, WorldConfig
from .microworld import (
    CameraConfig,
    EGO_LENGTH,
    Scene,
    ego_frame_to_world,
    expert_policy,
    rect_corners,
    rects_intersect,
    render,
    rollout_states,
)
from .tensor import ContractError, rng_for
from .trajectory import Trajectory

SCHEMA_VERSION = "wake-report v1"


class InputError(ValueError):
    """Metric inputs violate a precondition (e.g. non-positive ground truth)."""


@dataclass
class DepthReport:
    absrel: float
    delta1: float
    delta2: float
    delta3: float


@dataclass
class PlanSubscores:
    nc: float
    dac: float
    ttc: float
    comfort: float
    ep: float


@dataclass
class PDMSReport:
    subscores: PlanSubscores
    weights: tuple[float, float, float]
    score: float


def depth_metrics(pred: np.ndarray, gt: np.ndarray,
                  valid_mask: np.ndarray | None = None) -> DepthReport:
    """AbsRel and the 1.25^k threshold accuracies over valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mask = np.ones(gt.shape, dtype=bool) if valid_mask is None else np.asarray(valid_mask, bool)
    if not mask.any():
        raise ContractError("empty valid mask")
    p, g = pred[mask], gt[mask]
    if (g <= 0).any():
        raise InputError("ground-truth depth must be positive in the valid region")
    p = np.maximum(p, 1e-9)
    absrel = float(np.mean(np.abs(p - g) / g))
    ratio = np.maximum(p / g, g / p)
    deltas = [float(np.mean(ratio < 1.25 ** k)) for k in (1, 2, 3)]
    return DepthReport(absrel=absrel, delta1=deltas[0], delta2=deltas[1], delta3=deltas[2])


def psnr(pred: np.ndarray, gt: np.ndarray, cap_db: float = 100.0) -> float:
    """Peak signal-to-noise ratio for values in [0, 1], capped for identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse <= 0.0:
        return cap_db
    return min(10.0 * np.log10(1.0 / mse), cap_db)


# -- closed-loop planning ----------------------------------------------------------


@dataclass
class PlanThresholds:
    ttc_threshold: float = 1.0
    accel_limit: float = 4.0
    jerk_limit: float = 8.0
    dac_tolerance: float = 0.1
    stationary_eps: float = 0.05

    @classmethod
    def from_settings(cls, s) -> "PlanThresholds":
        return cls(ttc_threshold=s.ttc_threshold, accel_limit=s.accel_limit,
                   jerk_limit=s.jerk_limit)


def _min_constant_velocity_ttc(world: Scene, ego_pose: tuple[float, float, float],
                               ego_vel: np.ndarray, horizon_s: float = 3.0,
                               step_s: float = 0.1) -> float:
    """Earliest projected collision time with all agents moving at constant velocity."""
    x, y, theta = ego_pose
    taus = np.arange(step_s, horizon_s + 1e-9, step_s)
    actor_info = [(a.corners(), np.array([np.cos(a.theta), np.sin(a.theta)]) * a.speed)
                  for a in world.actors]
    for tau in taus:
        ego = rect_corners(x + ego_vel[0] * tau, y + ego_vel[1] * tau, theta,
                           EGO_LENGTH, 2.0)
        for corners, vel in actor_info:
            if rects_intersect(ego, corners + vel * tau):
                return float(tau)
    return float("inf")


def plan_subscores(traj: Trajectory, scene: Scene,
                   expert: Trajectory | None = None,
                   thresholds: PlanThresholds | None = None) -> PlanSubscores:
    """Roll the scene forward along the trajectory and score it.

    nc: no at-fault collision (collisions while stationary are not charged).
    dac: every footprint corner stays inside the corridor (+tolerance).
    ttc: constant-velocity time-to-collision stays above the threshold.
    comfort: accel / jerk finite differences stay inside the limits.
    ep: arc-length route progress relative to the expert's, clipped to [0, 1].
    """
    from .microworld import SCENARIO_INSTRUCTION

    th = thresholds or PlanThresholds()
    if expert is None:
        expert = expert_policy(scene, scene.ego, SCENARIO_INSTRUCTION[scene.scenario],
                               horizon=len(traj), dt=traj.dt)
    if len(traj) != len(expert):
        raise ContractError(f"trajectory length {len(traj)} != expert length {len(expert)}")

    worlds = rollout_states(scene, traj)
    poses = ego_frame_to_world(traj, scene.ego)
    positions = np.array([[scene.ego.x, scene.ego.y]] +
                         [[p[0], p[1]] for p in poses], dtype=np.float64)
    step_disp = np.linalg.norm(np.diff(positions, axis=0), axis=1)

    nc = 1.0
    dac = 1.0
    ttc_ok = True
    for i, world in enumerate(worlds):
        ego = world.ego
        corners = ego.corners()
        moving = step_disp[i] > th.stationary_eps
        if moving and any(rects_intersect(corners, a.corners()) for a in world.actors):
            nc = 0.0
        if any(world.corridor_distance(c) > th.dac_tolerance for c in corners):
            dac = 0.0
        if moving and world.actors:
            vel = (positions[i + 1] - positions[i]) / traj.dt
            tau = _min_constant_velocity_ttc(world, (ego.x, ego.y, ego.theta), vel)
            if tau < th.ttc_threshold:
                ttc_ok = False

    speeds = np.concatenate([[scene.ego.speed], step_disp / traj.dt])
    accels = np.diff(speeds) / traj.dt
    jerks = np.diff(accels) / traj.dt
    comfort = float(np.all(np.abs(accels) <= th.accel_limit)
                    and np.all(np.abs(jerks) <= th.jerk_limit))

    route = scene.route
    s0, _ = route.project((scene.ego.x, scene.ego.y))
    s_traj, _ = route.project(positions[-1])
    expert_poses = ego_frame_to_world(expert, scene.ego)
    s_expert, _ = route.project((expert_poses[-1][0], expert_poses[-1][1]))
    expert_prog = s_expert - s0
    if expert_prog < 0.1:
        ep = 1.0
    else:
        ep = float(np.clip((s_traj - s0) / expert_prog, 0.0, 1.0))

    return PlanSubscores(nc=nc, dac=dac, ttc=float(ttc_ok), comfort=comfort, ep=ep)


def pdms(sub: PlanSubscores, weights: tuple[float, float, float] = (5.0, 5.0, 2.0)) -> PDMSReport:
    """Gate product times the weighted average of (ttc, ep, comfort)."""
    w_ttc, w_ep, w_c = weights
    weighted = (w_ttc * sub.ttc + w_ep * sub.ep + w_c * sub.comfort) / (w_ttc + w_ep + w_c)
    return PDMSReport(subscores=sub, weights=weights, score=sub.nc * sub.dac * weighted)


def displacement_error(traj: Trajectory, expert: Trajectory) -> float:
    """Mean Euclidean displacement between corresponding states (ADE)."""
    n = min(len(traj), len(expert))
    return float(np.mean(np.linalg.norm(
        traj.positions()[:n] - expert.positions()[:n], axis=1)))


def constant_velocity_trajectory(record: EpisodeRecord) -> Trajectory:
    """Baseline plan: extrapolate the last context motion at constant velocity."""
    ctx = record.action_context
    dt = record.expert_traj.dt
    if ctx.shape[0] >= 2:
        v = (ctx[-1, :2] - ctx[-2, :2]) / dt
    else:
        v = np.zeros(2, dtype=np.float32)
    steps = np.arange(1, len(record.expert_traj) + 1, dtype=np.float32)[:, None]
    pos = steps * v[None, :] * dt
    states = np.concatenate([pos, np.tile([[1.0, 0.0]], (len(steps), 1))], axis=1)
    return Trajectory(states=states.astype(np.float32), dt=dt)


def future_ground_truth(record: EpisodeRecord, horizon: int,
                        world_cfg: WorldConfig) -> np.ndarray:
    """Replay the expert through the snapshot and render the front view per step."""
    cam = world_cfg.camera()
    frames = []
    for world in rollout_states(record.scene, record.expert_traj)[:horizon]:
        frame, _ = render(world, (world.ego.x, world.ego.y, world.ego.theta), cam)
        frames.append(frame)
    return np.stack(frames, axis=0)


# -- split evaluation ---------------------------------------------------------------


def evaluate_split(model, records: list[EpisodeRecord], which: str = "all",
                   run_cfg=None, seed: int = 0) -> dict[str, float]:
    """Deterministic metric aggregation over a split, ordered by episode index.

    ``which`` selects plan / depth / video / all; plan runs in planning-only
    mode (no depth or video denoiser evaluations). Baselines that the
    acceptance thresholds are relative to (copy-last-frame PSNR,
    constant-velocity ADE) are measured alongside.
    """
    from .config import RunConfig

    run_cfg = run_cfg or RunConfig()
    if which not in ("plan", "depth", "video", "all"):
        raise ContractError(f"unknown evaluation mode {which!r}")
    thresholds = PlanThresholds.from_settings(run_cfg.metrics)
    weights = (run_cfg.metrics.pdms_w_ttc, run_cfg.metrics.pdms_w_ep,
               run_cfg.metrics.pdms_w_comfort)
    report: dict[str, float] = {}

    if which in ("plan", "all"):
        subs, scores, ades, base_ades = [], [], [], []
        for i, rec in enumerate(records):
            traj_seed = int(rng_for(seed, "eval-plan", i).integers(1 << 31))
            traj = model.generate_trajectory(rec, seed=traj_seed)
            sub = plan_subscores(traj, rec.scene, expert=rec.expert_traj,
                                 thresholds=thresholds)
            subs.append(sub)
            scores.append(pdms(sub, weights).score)
            ades.append(displacement_error(traj, rec.expert_traj))
            base_ades.append(displacement_error(constant_velocity_trajectory(rec),
                                                rec.expert_traj))
        report.update({
            "plan.nc": float(np.mean([s.nc for s in subs])),
            "plan.dac": float(np.mean([s.dac for s in subs])),
            "plan.ttc": float(np.mean([s.ttc for s in subs])),
            "plan.comfort": float(np.mean([s.comfort for s in subs])),
            "plan.ep": float(np.mean([s.ep for s in subs])),
            "plan.pdms": float(np.mean(scores)),
            "plan.ade": float(np.mean(ades)),
            "plan.ade_const_velocity": float(np.mean(base_ades)),
            "plan.n": float(len(records)),
        })

    if which in ("depth", "all"):
        reports = []
        for i, rec in enumerate(records):
            depth_seed = int(rng_for(seed, "eval-depth", i).integers(1 << 31))
            pred = model.generate_depth(rec, seed=depth_seed)
            reports.append(depth_metrics(pred, rec.depth))
        report.update({
            "depth.absrel": float(np.mean([r.absrel for r in reports])),
            "depth.delta1": float(np.mean([r.delta1 for r in reports])),
            "depth.delta2": float(np.mean([r.delta2 for r in reports])),
            "depth.delta3": float(np.mean([r.delta3 for r in reports])),
            "depth.n": float(len(records)),
        })

    if which in ("video", "all"):
        horizon = model.cfg.video.horizon
        psnrs, copy_psnrs, tc_gen, tc_gt = [], [], [], []
        for i, rec in enumerate(records):
            video_seed = int(rng_for(seed, "eval-video", i).integers(1 << 31))
            gt = future_ground_truth(rec, horizon, run_cfg.world)
            gen = model.generate_video(rec, seed=video_seed)
            current = rec.frames[rec.frames.shape[0] // 2 if rec.frames.shape[0] > 1 else 0]
            copy_last = np.repeat(current[None], horizon, axis=0)
            psnrs.append(psnr(gen, gt))
            copy_psnrs.append(psnr(copy_last, gt))
            if horizon > 1:
                tc_gen.append(np.mean([psnr(gen[k], gen[k + 1])
                                       for k in range(horizon - 1)]))
                tc_gt.append(np.mean([psnr(gt[k], gt[k + 1])
                                      for k in range(horizon - 1)]))
        report.update({
            "video.psnr": float(np.mean(psnrs)),
            "video.psnr_copy_last": float(np.mean(copy_psnrs)),
            "video.n": float(len(records)),
        })
        if tc_gen:
            report["video.tc_generated"] = float(np.mean(tc_gen))
            report["video.tc_ground_truth"] = float(np.mean(tc_gt))
    return report


def write_report(path: str, report: dict[str, float]) -> None:
    """Stable key = value text with a schema-version header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SCHEMA_VERSION + "\n")
        for key in sorted(report):
            fh.write(f"{key} = {report[key]:.10g}\n")


def read_report(path: str) -> dict[str, float]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != SCHEMA_VERSION:
            raise InputError(f"unsupported report schema {header!r}")
        out = {}
        for line in fh:
            if not line.strip():
                continue
            key, value = line.split("=", 1)
            out[key.strip()] = float(value)
        return out
