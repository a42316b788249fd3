"""Metrics: loop oracles for depth/PSNR/PDMS, gate and monotonicity
properties, closed-loop subscores on constructed scenes, report files."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wake.metrics import (
    DepthReport,
    InputError,
    PlanSubscores,
    PlanThresholds,
    constant_velocity_trajectory,
    depth_metrics,
    displacement_error,
    pdms,
    plan_subscores,
    psnr,
    read_report,
    write_report,
)
from wake.microworld import (
    Actor,
    Centerline,
    EgoState,
    Scene,
    expert_policy,
    generate_scene,
)
from wake.tensor import ContractError
from wake.trajectory import Trajectory


def loop_depth_oracle(pred, gt):
    n = 0
    absrel = 0.0
    hits = [0, 0, 0]
    for p, g in zip(pred.flat, gt.flat):
        n += 1
        absrel += abs(p - g) / g
        ratio = max(p / g, g / p)
        for k in range(3):
            hits[k] += ratio < 1.25 ** (k + 1)
    return absrel / n, [h / n for h in hits]


def loop_psnr_oracle(pred, gt):
    se = 0.0
    for p, g in zip(pred.flat, gt.flat):
        se += (float(p) - float(g)) ** 2
    mse = se / pred.size
    return 100.0 if mse == 0 else min(10.0 * np.log10(1.0 / mse), 100.0)


def _straight_scene(actors=(), ego_speed=5.0):
    pts = np.stack([np.linspace(0.0, 80.0, 81), np.zeros(81)], axis=1)
    return Scene(branches=[Centerline(pts)], route_idx=0, half_width=3.0,
                 actors=list(actors), ego=EgoState(0.0, 0.0, 0.0, ego_speed),
                 scenario="straight", cruise_speed=ego_speed)


def _cruise_traj(speed=5.0, n=8, dt=0.5):
    xs = np.arange(1, n + 1, dtype=np.float32) * speed * dt
    states = np.stack([xs, np.zeros(n), np.ones(n), np.zeros(n)], axis=1)
    return Trajectory(states=states.astype(np.float32), dt=dt)


# -- depth metrics ---------------------------------------------------------------


def test_depth_metrics_identical():
    gt = np.random.default_rng(0).uniform(1, 50, (8, 8))
    report = depth_metrics(gt, gt)
    assert report.absrel == 0.0
    assert report.delta1 == report.delta2 == report.delta3 == 1.0


def test_depth_metrics_uniform_ratio_13():
    gt = np.random.default_rng(1).uniform(1, 50, (6, 6))
    report = depth_metrics(1.3 * gt, gt)
    assert report.absrel == pytest.approx(0.3, rel=1e-6)
    assert report.delta1 == 0.0  # 1.3 > 1.25
    assert report.delta2 == 1.0
    assert report.delta3 == 1.0


def test_depth_metrics_matches_loop_oracle():
    rng = np.random.default_rng(2)
    pred = rng.uniform(0.5, 60, (10, 12))
    gt = rng.uniform(0.5, 60, (10, 12))
    report = depth_metrics(pred, gt)
    absrel, deltas = loop_depth_oracle(pred, gt)
    assert report.absrel == pytest.approx(absrel, abs=1e-6)
    assert report.delta1 == pytest.approx(deltas[0], abs=1e-6)
    assert report.delta2 == pytest.approx(deltas[1], abs=1e-6)
    assert report.delta3 == pytest.approx(deltas[2], abs=1e-6)


def test_depth_metrics_validation():
    with pytest.raises(InputError):
        depth_metrics(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ContractError):
        depth_metrics(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(InputError):
        depth_metrics(np.ones((2, 2)), np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_delta_monotonicity_property(seed):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.1, 80, (5, 5))
    gt = rng.uniform(0.1, 80, (5, 5))
    report = depth_metrics(pred, gt)
    assert report.delta1 <= report.delta2 <= report.delta3


def test_depth_metrics_respects_valid_mask():
    gt = np.ones((2, 2))
    pred = np.array([[1.0, 99.0], [1.0, 99.0]])
    mask = np.array([[True, False], [True, False]])
    assert depth_metrics(pred, gt, mask).absrel == 0.0


# -- psnr ----------------------------------------------------------------------


def test_psnr_identical_capped():
    x = np.random.default_rng(3).random((4, 4, 3))
    assert psnr(x, x) == 100.0


def test_psnr_formula():
    gt = np.zeros((10, 10))
    pred = np.full((10, 10), 0.1)  # mse = 0.01
    assert psnr(pred, gt) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_loop_oracle():
    rng = np.random.default_rng(4)
    a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    assert psnr(a, b) == pytest.approx(loop_psnr_oracle(a, b), abs=1e-6)


# -- pdms -----------------------------------------------------------------------


def test_pdms_all_ones():
    assert pdms(PlanSubscores(1, 1, 1, 1, 1)).score == 1.0


def test_pdms_gate_semantics():
    assert pdms(PlanSubscores(0, 1, 1, 1, 1)).score == 0.0
    assert pdms(PlanSubscores(1, 0, 1, 1, 1)).score == 0.0


def test_pdms_worked_example():
    sub = PlanSubscores(nc=1, dac=1, ttc=1, comfort=1, ep=0.5)
    report = pdms(sub, weights=(5.0, 5.0, 2.0))
    assert report.score == pytest.approx((5 + 2.5 + 2) / 12.0, abs=1e-12)
    assert f"{report.score:.6f}" == "0.791667"


def test_pdms_loop_oracle_random_subscores():
    rng = np.random.default_rng(5)
    for _ in range(30):
        vals = rng.random(5)
        sub = PlanSubscores(*vals)
        expected = vals[0] * vals[1] * (5 * vals[2] + 2 * vals[3] + 5 * vals[4]) / 12.0
        assert pdms(sub).score == pytest.approx(expected, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5),
       st.integers(0, 4), st.floats(0.001, 0.3))
def test_pdms_monotone_in_every_subscore(vals, idx, bump):
    base = pdms(PlanSubscores(*vals)).score
    raised = list(vals)
    raised[idx] = min(raised[idx] + bump, 1.0)
    assert pdms(PlanSubscores(*raised)).score >= base - 1e-12


# -- closed-loop subscores ---------------------------------------------------------


def test_expert_scores_clean_on_generated_scenes():
    for seed in (0, 3, 11):
        scene = generate_scene(seed, "lead-vehicle")
        expert = expert_policy(scene, scene.ego, 0)
        sub = plan_subscores(expert, scene, expert=expert)
        assert sub.nc == 1.0 and sub.dac == 1.0
        assert sub.comfort == 1.0
        assert sub.ep == 1.0


def test_driving_into_stopped_obstacle_fails_nc():
    actor = Actor(x=8.0, y=0.0, theta=0.0, speed=0.0, length=3.0, width=2.0)
    scene = _straight_scene(actors=[actor])
    sub = plan_subscores(_cruise_traj(speed=5.0), scene,
                         expert=expert_policy(scene, scene.ego, 0))
    assert sub.nc == 0.0
    assert pdms(sub).score == 0.0


def test_zero_motion_trajectory_scores_stationary():
    scene = _straight_scene(ego_speed=0.0)
    still = Trajectory(states=np.tile([0.0, 0.0, 1.0, 0.0], (8, 1)).astype(np.float32))
    expert = expert_policy(scene, scene.ego, 0)
    scene.cruise_speed = 5.0  # expert would move; the still plan earns no progress
    expert_moving = expert_policy(scene, scene.ego, 0)
    sub = plan_subscores(still, scene, expert=expert_moving)
    assert sub.nc == 1.0
    assert sub.ep == 0.0


def test_leaving_corridor_fails_dac():
    scene = _straight_scene()
    n = 8
    ys = np.linspace(0.5, 6.0, n)
    states = np.stack([np.linspace(1, 10, n), ys, np.ones(n), np.zeros(n)], axis=1)
    sub = plan_subscores(Trajectory(states=states.astype(np.float32)), scene,
                         expert=expert_policy(scene, scene.ego, 0))
    assert sub.dac == 0.0


def test_harsh_acceleration_fails_comfort():
    scene = _straight_scene(ego_speed=0.0)
    scene.cruise_speed = 5.0
    xs = (np.arange(1, 9, dtype=np.float32) ** 2) * 1.2  # accel ~2.4 m/s^2... speeds jump
    states = np.stack([xs, np.zeros(8), np.ones(8), np.zeros(8)], axis=1)
    sub = plan_subscores(Trajectory(states=states.astype(np.float32)), scene,
                         expert=expert_policy(scene, scene.ego, 0))
    assert sub.comfort == 0.0


def test_ttc_gate_fires_on_near_head_on():
    oncoming = Actor(x=20.0, y=0.0, theta=np.pi, speed=8.0, length=3.0, width=2.0)
    scene = _straight_scene(actors=[oncoming], ego_speed=6.0)
    sub = plan_subscores(_cruise_traj(speed=6.0, n=8), scene,
                         expert=expert_policy(scene, scene.ego, 0))
    assert sub.ttc == 0.0


def test_scoring_invariant_to_rigid_transform():
    from wake.microworld import _rigid_transform

    base = generate_scene(5, "stopped-obstacle")
    expert = expert_policy(base, base.ego, 3)
    traj = _cruise_traj(speed=3.0)
    sub_a = plan_subscores(traj, base, expert=expert)

    rot, shift = 1.1, np.array([25.0, -40.0])
    branches = [Centerline(_rigid_transform(b.points.astype(np.float64), rot, shift)
                           .astype(np.float32)) for b in base.branches]
    actors = []
    for a in base.actors:
        p = _rigid_transform(np.array([[a.x, a.y]], dtype=np.float64), rot, shift)[0]
        actors.append(Actor(p[0], p[1], a.theta + rot, a.speed, a.length, a.width))
    ep = _rigid_transform(np.array([[base.ego.x, base.ego.y]], dtype=np.float64),
                          rot, shift)[0]
    moved = Scene(branches=branches, route_idx=base.route_idx,
                  half_width=base.half_width, actors=actors,
                  ego=EgoState(ep[0], ep[1], base.ego.theta + rot, base.ego.speed),
                  scenario=base.scenario, cruise_speed=base.cruise_speed)
    sub_b = plan_subscores(traj, moved, expert=expert)
    assert sub_a.nc == sub_b.nc and sub_a.dac == sub_b.dac
    assert sub_a.ttc == sub_b.ttc and sub_a.comfort == sub_b.comfort
    assert sub_a.ep == pytest.approx(sub_b.ep, abs=1e-4)


def test_trajectory_length_mismatch_rejected():
    scene = _straight_scene()
    with pytest.raises(ContractError):
        plan_subscores(_cruise_traj(n=4), scene, expert=_cruise_traj(n=8))


# -- helpers and report files ---------------------------------------------------------


def test_displacement_error_zero_for_identical():
    traj = _cruise_traj()
    assert displacement_error(traj, traj) == 0.0


def test_constant_velocity_baseline_extends_context():
    from wake.episodes import build_dataset

    recs, _ = build_dataset(3, 8, "train")
    for rec in recs:
        base = constant_velocity_trajectory(rec)
        assert len(base) == len(rec.expert_traj)
        step_len = np.linalg.norm(np.diff(np.vstack([[0, 0], base.positions()]),
                                          axis=0), axis=1)
        assert np.abs(step_len - step_len[0]).max() < 1e-5


def test_report_round_trip(tmp_path):
    report = {"plan.pdms": 0.8125, "depth.absrel": 0.21, "video.psnr": 23.5}
    path = tmp_path / "report.txt"
    write_report(str(path), report)
    assert read_report(str(path)) == pytest.approx(report)
    header = path.read_text().splitlines()[0]
    assert header == "wake-report v1"


def test_report_rejects_unknown_schema(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("wake-report v999\nplan.pdms = 1\n")
    with pytest.raises(InputError):
        read_report(str(path))


def test_evaluate_split_deterministic_and_aggregates(tmp_path):
    from wake.config import RunConfig
    from wake.episodes import build_dataset
    from wake.experts import DepthNormParams
    from wake.metrics import evaluate_split, write_report
    from wake.model import ModelConfig, WorldActionModel
    from wake.backbone import BackboneConfig
    from wake.experts import DepthExpertConfig, VideoExpertConfig, ActionExpertConfig
    from wake.tensor import rng_for

    cfg = RunConfig()
    model = WorldActionModel(ModelConfig(
        backbone=BackboneConfig(d_model=24, n_blocks=1, n_heads=2, patch=8,
                                n_depth_queries=4, n_video_queries=4,
                                n_action_queries=2, frame_height=32, frame_width=64),
        depth=DepthExpertConfig(height=32, width=64, patch=8, d_model=16, n_blocks=1,
                                n_heads=2),
        video=VideoExpertConfig(height=32, width=64, down=8, c_lat=6, horizon=2,
                                d_model=16, n_blocks=1, n_heads=2),
        action=ActionExpertConfig(horizon=8, d_model=16, n_blocks=1, n_heads=2),
        depth_steps=2, video_steps=2, action_steps=2), seed=0)
    model.depth_norm = DepthNormParams(log_lo=1.0, log_hi=4.3)
    recs, _ = build_dataset(3, 9, "test")

    a = evaluate_split(model, recs, "all", cfg, seed=4)
    b = evaluate_split(model, recs, "all", cfg, seed=4)
    path_a, path_b = tmp_path / "a.txt", tmp_path / "b.txt"
    write_report(str(path_a), a)
    write_report(str(path_b), b)
    assert path_a.read_bytes() == path_b.read_bytes()

    # single-episode split: aggregate equals that episode's scores
    single = evaluate_split(model, recs[:1], "plan", cfg, seed=4)
    traj = model.generate_trajectory(
        recs[0], seed=int(rng_for(4, "eval-plan", 0).integers(1 << 31)))
    sub = plan_subscores(traj, recs[0].scene, expert=recs[0].expert_traj)
    assert single["plan.nc"] == sub.nc
    assert single["plan.ep"] == pytest.approx(sub.ep)
    assert single["plan.pdms"] == pytest.approx(pdms(sub).score)

    # mean matches a loop oracle over per-episode plan scores
    joint = evaluate_split(model, recs, "plan", cfg, seed=4)
    scores = []
    for i in range(3):
        t_seed = int(rng_for(4, "eval-plan", i).integers(1 << 31))
        t = model.generate_trajectory(recs[i], seed=t_seed)
        scores.append(pdms(plan_subscores(t, recs[i].scene,
                                          expert=recs[i].expert_traj)).score)
    assert joint["plan.pdms"] == pytest.approx(float(np.mean(scores)), abs=1e-9)
