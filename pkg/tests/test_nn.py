import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevdrive.nn import (
    Adam,
    AdamState,
    CheckpointError,
    Conv2d,
    CrossAttention,
    Dense,
    LayerSpec,
    NonFiniteError,
    ReLU,
    SelfAttention,
    Sequential,
    adam_step,
    bce_loss,
    bce_with_logits,
    build_layer,
    check_finite,
    check_layer_gradients,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    cross_attention,
    load_checkpoint,
    load_into,
    relative_error,
    save_checkpoint,
    sigmoid,
    softmax,
)

TOL = 1e-4


def random_case(rng):
    """A random layer spec plus matching float64 inputs."""
    kind = rng.choice(["conv2d", "dense", "relu", "sigmoid", "flatten", "self_attention", "cross_attention"])
    n = int(rng.integers(1, 3))
    if kind == "conv2d":
        k = int(rng.choice([1, 3, 4]))
        stride = int(rng.choice([1, 2])) if k != 4 else int(rng.choice([2, 4]))
        padding = (k - 1) // 2 if stride == 1 else int(rng.integers(0, 2))
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        size = int(rng.integers(k + 1, k + 6))
        spec = LayerSpec("conv2d", {"in_ch": c_in, "out_ch": c_out, "kernel": k, "stride": stride,
                                    "padding": padding})
        return spec, [rng.standard_normal((n, c_in, size, size))]
    if kind == "dense":
        i, o = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        return LayerSpec("dense", {"in_dim": i, "out_dim": o}), [rng.standard_normal((n, i))]
    if kind in ("relu", "sigmoid"):
        x = rng.standard_normal((n, 5))
        # keep relu inputs away from the kink where finite differences straddle it
        x[np.abs(x) < 0.05] = 0.3
        return LayerSpec(kind, {}), [x]
    if kind == "flatten":
        return LayerSpec("flatten", {}), [rng.standard_normal((n, 2, 3, 2))]
    heads = int(rng.choice([1, 2]))
    width = heads * int(rng.integers(2, 5))
    t = int(rng.integers(2, 6))
    if kind == "self_attention":
        return LayerSpec(kind, {"width": width, "heads": heads}), [rng.standard_normal((n, t, width))]
    q = int(rng.integers(1, 5))
    return (LayerSpec(kind, {"width": width, "heads": heads}),
            [rng.standard_normal((n, q, width)), rng.standard_normal((n, t, width))])


def test_gradient_suite_random_configurations():
    rng = np.random.default_rng(2024)
    kinds = set()
    for trial in range(100):
        spec, inputs = random_case(rng)
        kinds.add(spec.kind)
        layer = build_layer(spec, rng=np.random.default_rng(trial), dtype=np.float64)
        errors = check_layer_gradients(layer, inputs, seed=trial, max_entries=30)
        worst = max(errors.values())
        assert worst <= TOL, (spec, errors)
    assert kinds == set(LayerSpec.KINDS)


def test_relative_error_floor_treats_tiny_values_as_absolute():
    assert relative_error(np.array([1e-9]), np.array([0.0])) < 1e-3
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, 3, stride=2, padding=1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 2, 7, 7))
    y = conv.forward(x)
    w, b = conv.params["W"], conv.params["b"]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 4))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_backward_without_forward_raises():
    with pytest.raises(RuntimeError):
        Dense(2, 2).backward(np.zeros((1, 2)))


def test_softmax_rows_sum_to_one_and_are_shift_invariant():
    x = np.array([[1000.0, 1001.0, 999.0]])
    p = softmax(x)
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p.sum(-1), 1.0)
    np.testing.assert_allclose(p, softmax(x - 1000.0))


def test_sigmoid_is_stable_at_extremes():
    s = sigmoid(np.array([-1e4, 0.0, 1e4]))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_cross_attention_uniform_keys_average_values():
    q = np.zeros((1, 2, 4))
    k = np.ones((1, 3, 4))
    v = np.arange(12.0).reshape(1, 3, 4)
    out, w = cross_attention(q, k, v, return_weights=True)
    np.testing.assert_allclose(w, 1.0 / 3.0)
    np.testing.assert_allclose(out[0, 0], v[0].mean(0))


def test_cross_attention_layer_returns_query_and_context_grads():
    rng = np.random.default_rng(1)
    layer = CrossAttention(4, 2, rng=rng, dtype=np.float64)
    q, ctx = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 5, 4))
    y = layer.forward(q, ctx)
    assert y.shape == (2, 3, 4)
    dq, dctx = layer.backward(np.ones_like(y))
    assert dq.shape == q.shape and dctx.shape == ctx.shape


def test_self_attention_is_permutation_equivariant():
    rng = np.random.default_rng(2)
    layer = SelfAttention(6, 2, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 5, 6))
    perm = rng.permutation(5)
    np.testing.assert_allclose(layer.forward(x)[:, perm], layer.forward(x[:, perm]), atol=1e-12)


def test_sequential_chains_forward_and_backward():
    rng = np.random.default_rng(3)
    net = Sequential(Dense(3, 4, rng, np.float64), ReLU(), Dense(4, 2, rng, np.float64))
    x = rng.standard_normal((5, 3))
    y = net.forward(x)
    dx = net.backward(np.ones_like(y))
    assert y.shape == (5, 2) and dx.shape == x.shape


# -- losses and optimizer ---------------------------------------------------

def test_bce_oracle_values():
    loss, _ = bce_loss(np.array([0.5]), np.array([1.0]))
    assert loss == pytest.approx(np.log(2.0))
    loss_w, _ = bce_loss(np.array([0.5]), np.array([1.0]), pos_weight=4.0)
    assert loss_w == pytest.approx(4.0 * np.log(2.0))


def test_bce_rejects_pos_weight_below_one():
    with pytest.raises(ValueError):
        bce_loss(np.array([0.5]), np.array([1.0]), pos_weight=0.5)


def test_bce_clamped_predictions_have_zero_gradient():
    _, g = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(g, 0.0)


def test_bce_with_logits_gradient_matches_finite_difference():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((3, 4))
    y = (rng.random((3, 4)) > 0.5).astype(np.float64)
    _, g = bce_with_logits(z, y, 2.0)
    h = 1e-6
    num = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        num[i] = (bce_with_logits(zp, y, 2.0)[0] - bce_with_logits(zm, y, 2.0)[0]) / (2 * h)
    assert relative_error(g, num) < 1e-5


def test_adam_first_step_moves_by_lr_times_sign():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.3, -5.0])}
    state = AdamState()
    adam_step(p, g, state, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-12)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-9)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1, 0.9, 0.999, 1e-8)


def test_adam_clips_global_norm():
    layer = Dense(2, 2, np.random.default_rng(0), np.float64)
    opt = Adam([("d", layer)], lr=1e-3, max_grad_norm=1.0)
    layer.grads["W"][:] = 10.0
    layer.grads["b"][:] = 0.0
    norm = opt.step()
    assert norm == pytest.approx(np.sqrt(4 * 100.0))


def test_check_finite_raises():
    with pytest.raises(NonFiniteError):
        check_finite(np.array([1.0, np.nan]), "x")


# -- checkpoints ------------------------------------------------------------

def _net(seed):
    rng = np.random.default_rng(seed)
    return [("conv", Conv2d(2, 4, 3, rng=rng)), ("fc", Dense(8, 3, rng)),
            ("att", SelfAttention(4, 2, rng=rng))]


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    layers = _net(0)
    path = tmp_path / "m.bvdc"
    save_checkpoint(path, layers, {"note": "x"})
    assert path.read_bytes()[:4] == b"BVDC"
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    target = _net(1)
    load_into(target, loaded)
    for (_, a), (_, b) in zip(layers, target):
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()


def test_checkpoint_rejects_bad_magic_and_truncation():
    data = checkpoint_to_bytes(_net(0))
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(data[:-5])


def test_load_into_rejects_mismatched_spec():
    loaded, _ = checkpoint_from_bytes(checkpoint_to_bytes([("fc", Dense(8, 3))]))
    with pytest.raises(CheckpointError):
        load_into([("fc", Dense(8, 4))], loaded)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("pool", {})
    with pytest.raises(ValueError):
        LayerSpec("self_attention", {"width": 5, "heads": 2})
    spec = LayerSpec("dense", {"in_dim": 3, "out_dim": 2})
    assert LayerSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_dense_is_affine(i, o, seed):
    rng = np.random.default_rng(seed)
    layer = Dense(i, o, rng, np.float64)
    a, b = rng.standard_normal((1, i)), rng.standard_normal((1, i))
    zero = layer.forward(np.zeros((1, i)))
    lhs = layer.forward(a + b) - zero
    rhs = (layer.forward(a) - zero) + (layer.forward(b) - zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
