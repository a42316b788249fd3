"""Numerics kernel: ops against loop oracles, exclusion-masked attention,
reverse-mode gradients against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wake import nn
from wake.tensor import (
    AttentionDiagnostics,
    AttentionMask,
    ContractError,
    ParamStore,
    ShapeError,
    Tensor,
    backward,
    check_gradients,
    constant,
    masked_attention,
    masked_softmax,
    rng_for,
)


def loop_attention_oracle(q, k, v, mask):
    """Straight-line softmax attention with explicit loops, exclusion semantics."""
    n, d = q.shape
    m = k.shape[0]
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(n):
        allowed = [j for j in range(m) if mask[i, j]]
        if not allowed:
            continue
        scores = [float(np.dot(q[i], k[j])) / np.sqrt(d) for j in allowed]
        mx = max(scores)
        exps = [np.exp(s - mx) for s in scores]
        z = sum(exps)
        for w, j in zip(exps, allowed):
            out[i] += (w / z) * v[j]
    return out.astype(np.float32)


# -- masked attention -----------------------------------------------------------


def test_single_key_softmax_returns_v():
    q = constant([[0.3, -1.2]])
    k = constant([[5.0, 5.0]])
    v = constant([[7.5, -2.0]])
    out = masked_attention(q, k, v, AttentionMask(np.array([[True]])))
    assert np.array_equal(out.data, np.array([[7.5, -2.0]], dtype=np.float32))


def test_exclusion_ignores_masked_key_entirely():
    q = constant([[1.0, 2.0]])
    v = constant([[1.0, 0.0], [0.0, 1.0]])
    mask = AttentionMask(np.array([[True, False]]))
    for crazy in (0.0, 1e6, -1e6, 3.14):
        k = constant([[0.5, 0.1], [crazy, crazy]])
        out = masked_attention(q, k, v, mask)
        assert np.array_equal(out.data, np.array([[1.0, 0.0]], dtype=np.float32))


def test_attention_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.standard_normal((2, 3)).astype(np.float32)
        k = rng.standard_normal((3, 3)).astype(np.float32)
        v = rng.standard_normal((3, 3)).astype(np.float32)
        mask = np.ones((2, 3), dtype=bool)
        out = masked_attention(constant(q), constant(k), constant(v), AttentionMask(mask))
        expected = loop_attention_oracle(q, k, v, mask)
        assert np.abs(out.data - expected).max() < 1e-6


def test_attention_matches_loop_oracle_random_masks():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n, m, d = rng.integers(1, 6, size=3)
        q = rng.standard_normal((n, d)).astype(np.float32)
        k = rng.standard_normal((m, d)).astype(np.float32)
        v = rng.standard_normal((m, d)).astype(np.float32)
        mask = rng.random((n, m)) < 0.6
        out = masked_attention(constant(q), constant(k), constant(v), AttentionMask(mask))
        expected = loop_attention_oracle(q, k, v, mask)
        assert np.abs(out.data - expected).max() < 1e-6, f"trial {trial}"


def test_empty_row_outputs_zero_and_flags():
    diag = AttentionDiagnostics()
    q = constant([[1.0, 1.0], [2.0, 2.0]])
    k = constant([[1.0, 0.0]])
    v = constant([[3.0, 4.0]])
    mask = AttentionMask(np.array([[False], [True]]))
    out = masked_attention(q, k, v, mask, diag)
    assert np.array_equal(out.data[0], [0.0, 0.0])
    assert diag.empty_rows == 1


def test_attention_shape_errors():
    q = constant(np.zeros((2, 3)))
    k = constant(np.zeros((4, 2)))
    v = constant(np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        masked_attention(q, k, v, AttentionMask(np.ones((2, 4), bool)))
    with pytest.raises(ShapeError):
        masked_attention(q, constant(np.zeros((4, 3))), v,
                         AttentionMask(np.ones((3, 4), bool)))


def test_softmax_rows_sum_to_one_over_allowed():
    rng = np.random.default_rng(3)
    scores = constant(rng.standard_normal((5, 7)).astype(np.float32))
    mask = rng.random((5, 7)) < 0.5
    mask[0] = True  # keep at least one full row
    w = masked_softmax(scores, mask)
    sums = w.data.sum(axis=-1)
    nonempty = mask.any(axis=-1)
    assert np.abs(sums[nonempty] - 1.0).max() < 1e-6
    assert (w.data[~mask] == 0.0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_masked_key_independence_exact(seed):
    rng = np.random.default_rng(seed)
    n, m, d = 3, 4, 5
    q = rng.standard_normal((n, d)).astype(np.float32)
    k = rng.standard_normal((m, d)).astype(np.float32)
    v = rng.standard_normal((m, d)).astype(np.float32)
    mask = rng.random((n, m)) < 0.5
    base = masked_attention(constant(q), constant(k), constant(v), AttentionMask(mask)).data
    j = int(rng.integers(m))
    k2, v2 = k.copy(), v.copy()
    k2[j] += rng.standard_normal(d).astype(np.float32) * 100
    v2[j] += rng.standard_normal(d).astype(np.float32) * 100
    out = masked_attention(constant(q), constant(k2), constant(v2),
                           AttentionMask(mask)).data
    rows_not_seeing_j = ~mask[:, j]
    assert np.array_equal(out[rows_not_seeing_j], base[rows_not_seeing_j])


# -- backward --------------------------------------------------------------------


def test_backward_sum_gives_ones():
    store = ParamStore(seed=0)
    p = store.add("p", (4,), init="embed")
    backward(p.sum(), store)
    assert np.array_equal(p.grad, np.ones(4, dtype=np.float32))


def test_backward_quadratic():
    store = ParamStore(seed=0)
    p = store.add("p", (3,), init="zeros")
    p.data = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    backward((p * p).sum(), store)
    assert np.allclose(p.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    store = ParamStore(seed=0)
    p = store.add("p", (3,), init="ones")
    with pytest.raises(ContractError):
        backward(p * 2.0, store)


def test_backward_accumulates_shared_subexpressions():
    store = ParamStore(seed=0)
    p = store.add("p", (2,), init="zeros")
    p.data = np.array([2.0, -4.0], dtype=np.float32)
    y = p.sum()
    backward(y + y, store)
    assert np.allclose(p.grad, [2.0, 2.0])


def _two_layer_net(seed: int):
    store = ParamStore(seed=seed)
    w1 = store.add("w1", (3, 5))
    b1 = store.add("b1", (5,), init="zeros")
    w2 = store.add("w2", (5, 2))
    x = constant(rng_for(seed, "x").standard_normal((4, 3)).astype(np.float32))
    probe = constant(rng_for(seed, "probe").standard_normal((4, 2)).astype(np.float32))

    def fn(params):
        h = (x @ params["w1"] + params["b1"]).tanh()
        out = h @ params["w2"]
        return (out * probe).sum()

    return fn, store


def test_backward_matches_elementwise_finite_differences():
    fn, store = _two_layer_net(seed=1)
    store.zero_grad()
    backward(fn(store), store)
    eps = 1e-3
    worst = 0.0
    for _, p in store.items():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = float(flat[i])
            flat[i] = np.float32(orig + eps)
            f_plus = fn(store).item()
            flat[i] = np.float32(orig - eps)
            f_minus = fn(store).item()
            flat[i] = np.float32(orig)
            central = (f_plus - f_minus) / (2 * eps)
            worst = max(worst, abs(grad[i] - central) / (abs(central) + 1e-8))
    assert worst < 1e-3


def test_check_gradients_identity_and_affine():
    store = ParamStore(seed=0)
    store.add("x", (6,), init="embed")
    assert check_gradients(lambda p: p["x"].sum(), store, eps=1e-2) < 1e-6
    w = constant(np.arange(1, 7, dtype=np.float32))
    assert check_gradients(lambda p: (p["x"] * w).sum() + 2.0, store, eps=1e-2) < 1e-6


def test_check_gradients_masked_attention_composite():
    rng = np.random.default_rng(5)
    mask = AttentionMask(rng.random((3, 4)) < 0.7)
    store = ParamStore(seed=2)
    store.add("q", (3, 4), init="embed")
    store.add("k", (4, 4), init="embed")
    store.add("v", (4, 4), init="embed")
    probe = constant(rng.standard_normal((3, 4)).astype(np.float32))

    def fn(p):
        return (masked_attention(p["q"], p["k"], p["v"], mask) * probe).sum()

    assert check_gradients(fn, store, eps=3e-3) < 1e-3


def test_check_gradients_rejects_bad_eps():
    store = ParamStore(seed=0)
    store.add("x", (2,), init="ones")
    with pytest.raises(ContractError):
        check_gradients(lambda p: p["x"].sum(), store, eps=0.0)


# -- core ops ------------------------------------------------------------------


def test_matmul_broadcast_and_grads():
    store = ParamStore(seed=0)
    w = store.add("w", (3, 2))
    x = constant(np.random.default_rng(0).standard_normal((2, 4, 3)).astype(np.float32))
    y = x @ w
    assert y.shape == (2, 4, 2)
    backward(y.sum(), store)
    assert w.grad.shape == (3, 2)
    expected = x.data.reshape(-1, 3).sum(axis=0)[:, None] * np.ones((1, 2), np.float32)
    assert np.allclose(w.grad, expected, atol=1e-5)


def test_mean_and_reshape_grads():
    store = ParamStore(seed=0)
    p = store.add("p", (2, 6), init="embed")
    y = p.reshape(3, 4).mean()
    backward(y, store)
    assert np.allclose(p.grad, np.full((2, 6), 1.0 / 12.0), atol=1e-7)


def test_layernorm_normalizes_rows():
    store = ParamStore(seed=0)
    ln = nn.LayerNorm(store, "ln", 8)
    x = constant(np.random.default_rng(1).standard_normal((5, 8)).astype(np.float32) * 3 + 1)
    y = ln(x).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-5
    assert np.abs(y.std(axis=-1) - 1.0).max() < 1e-3


def test_layer_gradcheck_composite_mlp():
    store = ParamStore(seed=4)
    ln = nn.LayerNorm(store, "ln", 6)
    mlp = nn.Mlp(store, "mlp", 6, ratio=2.0)
    x = constant(rng_for(9, "x").standard_normal((3, 6)).astype(np.float32))
    probe = constant(rng_for(9, "p").standard_normal((3, 6)).astype(np.float32))

    def fn(p):
        return (mlp(ln(x)) * probe).sum()

    assert check_gradients(fn, store, eps=3e-3) < 1e-3


# -- determinism -------------------------------------------------------------------


def test_forward_and_gradients_bitwise_deterministic():
    def run():
        fn, store = _two_layer_net(seed=3)
        store.zero_grad()
        loss = fn(store)
        backward(loss, store)
        return loss.data.copy(), {k: v.grad.copy() for k, v in store.items()}

    loss_a, grads_a = run()
    loss_b, grads_b = run()
    assert np.array_equal(loss_a, loss_b)
    for key in grads_a:
        assert np.array_equal(grads_a[key], grads_b[key])


def test_param_init_pure_function_of_seed_and_name():
    a = ParamStore(seed=11).add("layer.w", (4, 4))
    store_b = ParamStore(seed=11)
    store_b.add("other", (2, 2))  # different creation order must not matter
    b = store_b.add("layer.w", (4, 4))
    assert np.array_equal(a.data, b.data)
    c = ParamStore(seed=12).add("layer.w", (4, 4))
    assert not np.array_equal(a.data, c.data)


def test_param_store_rejects_shape_change():
    store = ParamStore(seed=0)
    store.add("w", (2, 2))
    with pytest.raises(ContractError):
        store.add("w", (3, 2))


def test_all_forward_outputs_float32():
    store = ParamStore(seed=0)
    w = store.add("w", (3, 3))
    x = constant(np.ones((2, 3), dtype=np.float32))
    results = [x @ w, (x @ w).tanh(), x.sum(), x.mean(axis=-1), (x * 2.0),
               nn.gelu(x), x.exp(), (x + 1.0) ** 0.5]
    for t in results:
        assert t.data.dtype == np.float32
