"""Experts: depth normalization round trips, heading codec, denoiser shape
contracts, gradient checks, and planning-only isolation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wake.backbone import BackboneConfig
from wake.episodes import build_dataset
from wake.experts import (
    ActionExpert,
    ActionExpertConfig,
    DepthExpert,
    DepthExpertConfig,
    DepthNormParams,
    FrameAutoencoder,
    VideoExpert,
    VideoExpertConfig,
    denormalize_depth,
    normalize_depth,
)
from wake.experts.action import scale_states, unscale_states
from wake.flowmatch import SamplerConfig
from wake.model import ModelConfig, WorldActionModel
from wake.tensor import ContractError, ParamStore, check_gradients, constant, rng_for
from wake.trajectory import TrajectoryState, decode_heading, encode_heading


# -- depth normalization ----------------------------------------------------------


def test_normalize_three_point_map():
    d = np.array([[1.0, np.e, np.e ** 2]], dtype=np.float32)
    n, params = normalize_depth(d, p_low=0.0, p_high=100.0)
    assert np.allclose(n, [[-0.5, 0.0, 0.5]], atol=1e-6)
    assert params.log_lo == pytest.approx(0.0, abs=1e-6)
    assert params.log_hi == pytest.approx(2.0, abs=1e-6)


def test_normalize_constant_map_degenerate():
    d = np.full((4, 4), 7.5, dtype=np.float32)
    n, params = normalize_depth(d)
    assert params.degenerate
    assert np.array_equal(n, np.zeros((4, 4), dtype=np.float32))
    back = denormalize_depth(n, params)
    assert np.allclose(back, 7.5, rtol=1e-5)


def test_normalize_rejects_nonpositive():
    with pytest.raises(ContractError):
        normalize_depth(np.array([[1.0, 0.0]]))


def test_denormalize_worked_points():
    params = DepthNormParams(log_lo=1.0, log_hi=3.0)
    assert denormalize_depth(np.array(0.0), params) == pytest.approx(np.exp(2.0), rel=1e-5)
    assert denormalize_depth(np.array(0.5), params) == pytest.approx(np.exp(3.0), rel=1e-5)
    assert denormalize_depth(np.array(-0.5), params) == pytest.approx(np.exp(1.0), rel=1e-5)


def test_round_trip_random_maps():
    rng = np.random.default_rng(0)
    for _ in range(30):
        d = np.exp(rng.uniform(0.0, 4.2, size=(16, 24))).astype(np.float32)
        n, params = normalize_depth(d)
        back = denormalize_depth(n, params)
        logd = np.log(d)
        in_range = (logd > params.log_lo) & (logd < params.log_hi)
        rel = np.abs(back[in_range] - d[in_range]) / d[in_range]
        assert rel.max() < 1e-5


def test_norm_params_validation():
    with pytest.raises(ContractError):
        DepthNormParams(log_lo=2.0, log_hi=1.0)


# -- heading codec -----------------------------------------------------------------


def test_encode_zero_heading():
    state = encode_heading(1.0, 2.0, 0.0)
    assert state == TrajectoryState(1.0, 2.0, 1.0, 0.0)


def test_heading_round_trip_quarter_turn():
    state = encode_heading(0.0, 0.0, np.pi / 2)
    x, y, theta, degenerate = decode_heading(state)
    assert not degenerate
    assert theta == pytest.approx(np.pi / 2, abs=1e-6)


def test_decode_renormalizes_scaled_vector():
    base = TrajectoryState(0.0, 0.0, 0.6, 0.8)
    scaled = TrajectoryState(0.0, 0.0, 1.8, 2.4)
    assert decode_heading(base)[2] == pytest.approx(decode_heading(scaled)[2], abs=1e-7)


def test_decode_zero_vector_flags_degenerate():
    x, y, theta, degenerate = decode_heading(TrajectoryState(1.0, 1.0, 0.0, 0.0))
    assert degenerate and theta == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(0.1, 10.0))
def test_decode_invariant_to_positive_scaling(theta, scale):
    a = decode_heading(TrajectoryState(0, 0, np.cos(theta), np.sin(theta)))[2]
    b = decode_heading(TrajectoryState(0, 0, scale * np.cos(theta),
                                       scale * np.sin(theta)))[2]
    assert a == pytest.approx(b, abs=1e-5)


def test_state_scaling_round_trip():
    rng = np.random.default_rng(1)
    states = rng.standard_normal((8, 4)).astype(np.float32) * 5
    assert np.allclose(unscale_states(scale_states(states)), states, atol=1e-5)


# -- denoiser contracts ------------------------------------------------------------


def _wake_output_head(store: ParamStore, name: str, seed: int = 99) -> None:
    """Output projections are zero-initialized (velocity starts at zero); give
    them trained-model-like values so conditioning visibly reaches the output."""
    w = store[f"{name}.out.w"]
    w.data = rng_for(seed, name).standard_normal(w.shape).astype(np.float32) * 0.2


def _small_depth() -> tuple[DepthExpert, ParamStore]:
    store = ParamStore(seed=0)
    cfg = DepthExpertConfig(height=16, width=16, patch=8, d_model=16, n_blocks=1,
                            n_heads=2)
    expert = DepthExpert(store, cfg, d_cond=12)
    _wake_output_head(store, "depth")
    return expert, store


def test_depth_denoiser_shape_contract():
    expert, _ = _small_depth()
    out = expert.denoise(np.zeros((2, 16, 16), np.float32),
                         np.zeros((2, 16, 16, 3), np.float32),
                         np.array([0.3, 0.7]),
                         constant(np.zeros((2, 5, 12), np.float32)))
    assert out.shape == (2, 16, 16)


def test_depth_denoiser_uses_condition():
    expert, store = _small_depth()
    rng = np.random.default_rng(2)
    noisy = rng.standard_normal((1, 16, 16)).astype(np.float32)
    rgb = rng.random((1, 16, 16, 3)).astype(np.float32)
    cond = rng.standard_normal((1, 5, 12)).astype(np.float32)
    a = expert.denoise(noisy, rgb, np.array([0.5]), constant(cond)).data
    b = expert.denoise(noisy, rgb, np.array([0.5]), constant(np.zeros_like(cond))).data
    assert np.abs(a - b).max() > 0


def test_video_denoiser_shape_and_context():
    store = ParamStore(seed=1)
    cfg = VideoExpertConfig(height=16, width=16, down=8, c_lat=6, horizon=3,
                            d_model=16, n_blocks=1, n_heads=2)
    expert = VideoExpert(store, cfg, d_cond=10)
    _wake_output_head(store, "video")
    rng = np.random.default_rng(3)
    noisy = rng.standard_normal((2, 3, 2, 2, 6)).astype(np.float32)
    current = rng.standard_normal((2, 2, 2, 6)).astype(np.float32)
    cond = constant(rng.standard_normal((2, 4, 10)).astype(np.float32))
    out = expert.denoise(noisy, current, np.array([0.2, 0.9]), cond)
    assert out.shape == (2, 3, 2, 2, 6)
    # clean context tokens matter
    other = expert.denoise(noisy, current + 1.0, np.array([0.2, 0.9]), cond)
    assert np.abs(out.data - other.data).max() > 0


def test_autoencoder_shape_contract_and_divisibility():
    store = ParamStore(seed=2)
    cfg = VideoExpertConfig(height=32, width=64, down=8, c_lat=8, horizon=2,
                            d_model=16, n_blocks=1, n_heads=2)
    ae = FrameAutoencoder(store, cfg)
    frames = np.random.default_rng(0).random((3, 32, 64, 3)).astype(np.float32)
    z = ae.encode(frames)
    assert z.shape == (3, 4, 8, 8)
    out = ae.decode(z)
    assert out.shape == (3, 32, 64, 3)
    from wake.tensor import ShapeError
    with pytest.raises(ShapeError):
        ae.encode(np.zeros((1, 30, 64, 3), np.float32))


def test_visual_condition_contracts():
    store = ParamStore(seed=3)
    cfg = VideoExpertConfig(height=16, width=16, down=8, c_lat=4, horizon=2,
                            d_model=16, n_blocks=1, n_heads=2)
    expert = VideoExpert(store, cfg, d_cond=12)
    f1 = np.random.default_rng(1).random((1, 16, 16, 3)).astype(np.float32)
    c1 = expert.visual_condition(f1)
    assert c1.shape == (1, 1, 12)
    assert np.array_equal(c1.data, expert.visual_condition(f1.copy()).data)
    f2 = f1.copy()
    f2[0, :4, :4] = 0.9
    assert np.abs(expert.visual_condition(f2).data - c1.data).max() > 0


def test_action_denoiser_shape_and_condition():
    store = ParamStore(seed=4)
    cfg = ActionExpertConfig(horizon=6, d_model=16, n_blocks=1, n_heads=2)
    expert = ActionExpert(store, cfg, d_cond=10)
    _wake_output_head(store, "action")
    rng = np.random.default_rng(4)
    noisy = rng.standard_normal((2, 6, 4)).astype(np.float32)
    cond = rng.standard_normal((2, 3, 10)).astype(np.float32)
    out = expert.denoise(noisy, np.array([0.1, 0.8]), constant(cond))
    assert out.shape == (2, 6, 4)
    zeroed = expert.denoise(noisy, np.array([0.1, 0.8]), constant(np.zeros_like(cond)))
    assert np.abs(out.data - zeroed.data).max() > 0


# -- gradient checks ------------------------------------------------------------------


def test_depth_denoiser_gradient_check():
    expert, store = _small_depth()
    rng = rng_for(0, "gc-depth")
    noisy = rng.standard_normal((1, 16, 16)).astype(np.float32)
    rgb = rng.random((1, 16, 16, 3)).astype(np.float32)
    probe = constant(rng.standard_normal((1, 16, 16)).astype(np.float32))
    cond_store = ParamStore(seed=9)
    cond_param = cond_store.add("cond", (1, 4, 12), init="embed")
    for name, p in cond_store.items():
        store.params[name] = p

    def fn(p):
        return (expert.denoise(noisy, rgb, np.array([0.4]), p["cond"]) * probe).sum()

    assert check_gradients(fn, store, eps=3e-3) < 1e-3


def test_action_denoiser_gradient_check():
    store = ParamStore(seed=5)
    cfg = ActionExpertConfig(horizon=4, d_model=16, n_blocks=1, n_heads=2)
    expert = ActionExpert(store, cfg, d_cond=8)
    _wake_output_head(store, "action")
    rng = rng_for(1, "gc-action")
    noisy = rng.standard_normal((1, 4, 4)).astype(np.float32)
    probe = constant(rng.standard_normal((1, 4, 4)).astype(np.float32))
    store.add("cond", (1, 3, 8), init="embed")

    def fn(p):
        return (expert.denoise(noisy, np.array([0.6]), p["cond"]) * probe).sum()

    assert check_gradients(fn, store, eps=3e-3) < 1e-3


def test_video_denoiser_gradient_check():
    store = ParamStore(seed=6)
    cfg = VideoExpertConfig(height=16, width=16, down=8, c_lat=4, horizon=2,
                            d_model=16, n_blocks=1, n_heads=2)
    expert = VideoExpert(store, cfg, d_cond=8)
    _wake_output_head(store, "video")
    rng = rng_for(2, "gc-video")
    noisy = rng.standard_normal((1, 2, 2, 2, 4)).astype(np.float32)
    current = rng.standard_normal((1, 2, 2, 4)).astype(np.float32)
    probe = constant(rng.standard_normal((1, 2, 2, 2, 4)).astype(np.float32))
    store.add("cond", (1, 3, 8), init="embed")

    def fn(p):
        return (expert.denoise(noisy, current, np.array([0.3]), p["cond"]) * probe).sum()

    assert check_gradients(fn, store, eps=3e-3) < 1e-3


# -- generation ------------------------------------------------------------------------


def _tiny_model() -> WorldActionModel:
    cfg = ModelConfig(
        backbone=BackboneConfig(d_model=24, n_blocks=1, n_heads=2, patch=8,
                                n_depth_queries=4, n_video_queries=4,
                                n_action_queries=2, frame_height=32, frame_width=64),
        depth=DepthExpertConfig(height=32, width=64, patch=8, d_model=16, n_blocks=1,
                                n_heads=2),
        video=VideoExpertConfig(height=32, width=64, down=8, c_lat=6, horizon=2,
                                d_model=16, n_blocks=1, n_heads=2),
        action=ActionExpertConfig(horizon=8, d_model=16, n_blocks=1, n_heads=2),
        depth_steps=4, video_steps=4, action_steps=4,
    )
    model = WorldActionModel(cfg, seed=0)
    model.depth_norm = DepthNormParams(log_lo=1.0, log_hi=4.3)
    return model


def test_generation_contracts_and_determinism():
    model = _tiny_model()
    recs, _ = build_dataset(2, 3, "train")
    rec = recs[0]
    d1 = model.generate_depth(rec, seed=7)
    d2 = model.generate_depth(rec, seed=7)
    assert np.array_equal(d1, d2)
    assert d1.shape == (32, 64)
    assert (d1 > 0).all() and (d1 <= model.cfg.depth.d_max).all()
    v1 = model.generate_video(rec, seed=7)
    assert v1.shape == (2, 32, 64, 3)
    assert v1.min() >= 0.0 and v1.max() <= 1.0
    t1 = model.generate_trajectory(rec, seed=7)
    t2 = model.generate_trajectory(rec, seed=7)
    assert np.array_equal(t1.states, t2.states)
    assert np.abs(t1.states[:, 2] ** 2 + t1.states[:, 3] ** 2 - 1.0).max() < 1e-6


def test_planning_only_mode_touches_no_world_denoisers():
    model = _tiny_model()
    recs, _ = build_dataset(2, 4, "train")
    model.reset_counters()
    for rec in recs:
        model.generate_trajectory(rec, seed=1)
    calls = model.denoiser_calls()
    assert calls["depth"] == 0
    assert calls["video"] == 0
    assert calls["action"] == 2 * model.cfg.action_steps


def test_generate_depth_requires_norm_params():
    model = _tiny_model()
    model.depth_norm = None
    recs, _ = build_dataset(1, 5, "train")
    with pytest.raises(ContractError):
        model.generate_depth(recs[0])
