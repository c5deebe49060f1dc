import numpy as np
import pytest
from scipy.signal import correlate

from attnvo.nn import (
    EVAL,
    TRAIN,
    ConfigError,
    ModelConfig,
    StateError,
    Tape,
    backward,
    bilstm_forward,
    conv_encoder_forward,
    head_forward,
    init_parameters,
    mha_forward,
    model_forward,
    update_running_stats,
)
from attnvo.nn import layers as L

from gradcheck import check_model_gradients


@pytest.fixture
def tiny():
    return init_parameters(ModelConfig.tiny(), 0)


def _zero(params):
    for t in params.tensors.values():
        t[...] = 0.0
    return params


# -- primitives ------------------------------------------------------------------


def test_sigmoid_extremes():
    x = np.array([-1000.0, 0.0, 1000.0])
    np.testing.assert_array_equal(L.sigmoid(x), [0.0, 0.5, 1.0])


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_direct_correlation(rng, stride):
    x = rng.standard_normal((2, 3, 7, 9))
    W = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = L.conv3x3_forward(x, W, b, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for n in range(2):
        for c in range(4):
            ref = sum(correlate(xp[n, ci], W[c, ci], mode="valid") for ci in range(3)) + b[c]
            np.testing.assert_allclose(out[n, c], ref[::stride, ::stride], atol=1e-12)


def test_linear_weight_gradient_is_input_broadcast(rng):
    x = rng.standard_normal((5, 3))
    W = rng.standard_normal((4, 3))
    out, cache = L.linear_forward(x, W, np.zeros(4))
    _, dW, db = L.linear_backward(np.ones_like(out), cache)
    np.testing.assert_allclose(dW, np.tile(x.sum(0), (4, 1)))
    np.testing.assert_allclose(db, np.full(4, 5.0))


def test_batchnorm_train_normalises(rng):
    x = rng.normal(3.0, 2.0, (4, 2, 5, 5))
    out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_dropout_mask_inverted(rng):
    m = L.dropout_mask((200000,), 0.2, rng, np.dtype("float64"))
    assert set(np.unique(m)) == {0.0, 1.25}
    assert abs(m.mean() - 1.0) < 0.01
    assert L.dropout_mask((3,), 0.0, rng, np.dtype("float64")) is None
    assert L.dropout_mask((3,), 0.5, None, np.dtype("float64")) is None


# -- configuration and init --------------------------------------------------------


def test_toy_feature_size():
    cfg = ModelConfig()
    assert cfg.feature_map_size() == (2, 4)
    assert cfg.feature_size == 256


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(lstm_hidden=5, attn_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(conv_channels=(4,), conv_strides=(2, 2))
    with pytest.raises(ConfigError):
        ModelConfig(dropout_p=1.0)


def test_init_deterministic_with_forget_bias():
    cfg = ModelConfig.tiny()
    a, b = init_parameters(cfg, 3), init_parameters(cfg, 3)
    assert all(np.array_equal(a[n], b[n]) for n in a)
    assert not np.array_equal(a["conv0.weight"], init_parameters(cfg, 4)["conv0.weight"])
    h = cfg.lstm_hidden
    for n in a:
        if n.startswith("lstm") and n.endswith(".bias"):
            np.testing.assert_array_equal(a[n][h : 2 * h], 1.0)
            np.testing.assert_array_equal(np.delete(a[n], np.s_[h : 2 * h]), 0.0)
    assert a["bn0.gamma"].dtype == np.float64
    np.testing.assert_array_equal(a["bn1.gamma"], 1.0)
    np.testing.assert_array_equal(a["bn1.beta"], 0.0)


# -- stages ----------------------------------------------------------------------


def test_conv_encoder_shapes_and_errors(tiny, rng):
    x = rng.standard_normal((3, 6, 8, 16))
    assert conv_encoder_forward(x, tiny).shape == (3, 6 * 2 * 4)
    with pytest.raises(ConfigError, match="stage 0"):
        conv_encoder_forward(rng.standard_normal((3, 6, 8, 15)), tiny)
    with pytest.raises(ConfigError, match="stage 0"):
        conv_encoder_forward(rng.standard_normal((3, 3, 8, 16)), tiny)


def test_conv_encoder_zero(tiny):
    p = _zero(tiny)
    for k in range(2):
        p.tensors[f"bn{k}.running_var"][...] = 1.0
    out = conv_encoder_forward(np.zeros((2, 6, 8, 16)), p, TRAIN, np.random.default_rng(0))
    assert np.all(out == 0)


def test_eval_forward_deterministic(rng):
    params = init_parameters(ModelConfig.tiny(dtype="float32"), 1)
    x = rng.standard_normal((2, 5, 3, 8, 16))
    a = model_forward(x, params, EVAL)
    b = model_forward(x, params, EVAL, np.random.default_rng(7))
    assert a.dtype == np.float32
    np.testing.assert_array_equal(a, b)


def test_bilstm_single_step_and_zero(tiny, rng):
    x = rng.standard_normal((2, 1, tiny.config.feature_size))
    assert bilstm_forward(x, tiny).shape == (2, 1, 16)
    z = _zero(tiny.copy())
    assert np.all(bilstm_forward(x, z) == 0)


def test_bilstm_time_reversal(tiny, rng):
    h = tiny.config.lstm_hidden
    x = rng.standard_normal((2, 6, tiny.config.feature_size))
    out = bilstm_forward(x, tiny)
    swapped = tiny.copy()
    for layer in range(tiny.config.lstm_layers):
        for part in ("w_ih", "w_hh", "bias"):
            f, b = f"lstm{layer}.fwd.{part}", f"lstm{layer}.bwd.{part}"
            swapped.tensors[f], swapped.tensors[b] = tiny[b].copy(), tiny[f].copy()
        if layer > 0:
            # the layer input now has its halves swapped too
            for d in ("fwd", "bwd"):
                w = swapped.tensors[f"lstm{layer}.{d}.w_ih"]
                w[...] = np.concatenate([w[:, h:], w[:, :h]], axis=1)
    rev = bilstm_forward(x[:, ::-1], swapped)
    expected = np.concatenate([out[:, ::-1, h:], out[:, ::-1, :h]], axis=-1)
    np.testing.assert_allclose(rev, expected, atol=1e-12)


def test_mha_single_position(tiny, rng):
    x = rng.standard_normal((3, 1, 16))
    out = mha_forward(x, tiny)
    Wqkv, bqkv = tiny["attn0.w_qkv"], tiny["attn0.b_qkv"]
    v = x @ Wqkv[32:].T + bqkv[32:]
    y = x + v @ tiny["attn0.w_out"].T + tiny["attn0.b_out"]
    np.testing.assert_allclose(out, np.where(y > 0, y, 0.1 * y), atol=1e-12)


def test_mha_permutation_equivariant(tiny, rng):
    x = rng.standard_normal((2, 7, 16))
    perm = rng.permutation(7)
    np.testing.assert_allclose(mha_forward(x[:, perm], tiny), mha_forward(x, tiny)[:, perm], atol=1e-12)


def test_attention_weights_are_distributions(rng):
    params = init_parameters(ModelConfig.tiny(attn_layers=2), 0)
    tape = Tape()
    model_forward(rng.standard_normal((2, 6, 3, 8, 16)), params, TRAIN, np.random.default_rng(0), tape)
    for A in tape.attention_weights():
        assert A.shape == (2, 2, 5, 5)
        assert np.all(A >= 0)
        np.testing.assert_allclose(A.sum(-1), 1.0, atol=1e-6)


def test_mha_head_mismatch(rng):
    params = init_parameters(ModelConfig.tiny(), 0)
    with pytest.raises(ConfigError):
        mha_forward(rng.standard_normal((1, 2, 15)), params)


def test_head_zero_and_shape(tiny, rng):
    z = _zero(tiny.copy())
    assert np.all(head_forward(np.zeros((2, 3, 16)), z) == 0)
    assert head_forward(rng.standard_normal((4, 5, 16)), tiny).shape == (4, 5, 6)


def test_head_linear_region(tiny, rng):
    p = _zero(tiny.copy())
    p.tensors["fc1.weight"][...] = np.abs(rng.standard_normal((12, 16)))
    p.tensors["fc2.weight"][...] = rng.standard_normal((6, 12))
    x = np.abs(rng.standard_normal((2, 3, 16)))  # keeps pre-activations positive
    np.testing.assert_allclose(head_forward(2 * x, p), 2 * head_forward(x, p), atol=1e-12)


# -- full model -------------------------------------------------------------------


def test_model_shapes_and_errors(tiny, rng):
    assert model_forward(rng.standard_normal((3, 2, 3, 8, 16)), tiny).shape == (3, 1, 6)
    with pytest.raises(ValueError, match="at least 2"):
        model_forward(rng.standard_normal((3, 1, 3, 8, 16)), tiny)


def test_batch_duplication_eval(rng):
    params = init_parameters(ModelConfig.tiny(dtype="float32"), 2)
    x = rng.standard_normal((3, 5, 3, 8, 16))
    one = model_forward(x, params, EVAL)
    two = model_forward(np.concatenate([x, x]), params, EVAL)
    np.testing.assert_array_equal(two[:3], one)
    np.testing.assert_array_equal(two[3:], one)


def test_backward_requires_forward(tiny):
    with pytest.raises(StateError):
        backward(np.zeros((1, 1, 6)), Tape(), tiny)
    with pytest.raises(StateError):
        backward(np.zeros((1, 1, 6)), None, tiny)


def test_zero_loss_gradient(tiny, rng):
    tape = Tape()
    model_forward(rng.standard_normal((2, 4, 3, 8, 16)), tiny, TRAIN, np.random.default_rng(0), tape)
    grads = backward(np.zeros((2, 3, 6)), tape, tiny)
    assert set(grads) == set(tiny.trainable())
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("mode", [TRAIN, EVAL])
def test_gradients_sampled(mode):
    errors = check_model_gradients(ModelConfig.tiny(), mode, max_entries=6)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, (worst, errors[worst])


def test_running_stats_update(rng):
    params = init_parameters(ModelConfig.tiny(bn_momentum=0.5), 0)
    tape = Tape()
    model_forward(rng.standard_normal((2, 3, 3, 8, 16)) + 2.0, params, TRAIN, None, tape)
    mean, var, m = tape.batch_stats()[0]
    update_running_stats(params, tape)
    np.testing.assert_allclose(params["bn0.running_mean"], 0.5 * mean)
    np.testing.assert_allclose(params["bn0.running_var"], 0.5 + 0.5 * var * m / (m - 1))


def test_parameter_set_helpers():
    p = init_parameters(ModelConfig.tiny(), 0)
    assert "bn0.running_mean" in p.names() and "bn0.running_mean" not in p.trainable()
    q = p.astype("float32")
    assert q.config.dtype == "float32" and q["fc1.weight"].dtype == np.float32
    c = p.copy()
    c.tensors["fc1.bias"][0] = 5
    assert p["fc1.bias"][0] == 0
    assert p.num_parameters() == sum(p[n].size for n in p.trainable())
