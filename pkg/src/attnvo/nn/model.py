"""Attention VO network: pair encoder -> stacked bi-LSTM -> self-attention -> FC head.

Forward passes optionally record a :class:`Tape`; :func:`backward` replays it
in reverse to produce exact gradients for every trainable tensor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from attnvo.nn import layers as L

TRAIN, EVAL = "train", "eval"
OUTPUT_GAIN = 3e-4


class ConfigError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple[int, int] = (32, 64)  # (H, W)
    conv_channels: tuple[int, ...] = (8, 16, 32, 32)
    conv_strides: tuple[int, ...] = (2, 2, 2, 2)
    lstm_hidden: int = 32
    lstm_layers: int = 2
    attn_layers: int = 3
    attn_heads: int = 8
    fc_intermediate: int = 64
    dropout_p: float = 0.2
    leaky_slope: float = 0.1
    bn_momentum: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "conv_strides", tuple(int(v) for v in self.conv_strides))
        if len(self.conv_channels) != len(self.conv_strides) or not self.conv_channels:
            raise ConfigError("conv_channels and conv_strides need the same non-zero length")
        if any(s < 1 for s in self.conv_strides) or min(self.image_size) < 1:
            raise ConfigError("strides and image size must be positive")
        if self.lstm_hidden < 1 or self.lstm_layers < 1 or self.attn_layers < 0:
            raise ConfigError("invalid recurrent/attention depth")
        if self.attn_heads < 1 or (2 * self.lstm_hidden) % self.attn_heads:
            raise ConfigError(
                f"2*lstm_hidden={2 * self.lstm_hidden} not divisible by attn_heads={self.attn_heads}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    @property
    def model_width(self) -> int:
        return 2 * self.lstm_hidden

    def feature_map_size(self) -> tuple[int, int]:
        H, W = self.image_size
        for s in self.conv_strides:
            H, W = L.conv_output_size(H, s), L.conv_output_size(W, s)
        return H, W

    @property
    def feature_size(self) -> int:
        H, W = self.feature_map_size()
        return self.conv_channels[-1] * H * W

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        base = dict(
            image_size=(8, 16),
            conv_channels=(4, 6),
            conv_strides=(2, 2),
            lstm_hidden=8,
            lstm_layers=2,
            attn_layers=1,
            attn_heads=2,
            fc_intermediate=12,
            dtype="float64",
        )
        base.update(kw)
        return cls(**base)


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


@dataclass
class ParameterSet:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self) -> list[str]:
        return [n for n in self.tensors if not is_buffer(n)]

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: str) -> "ParameterSet":
        cfg = dataclasses.replace(self.config, dtype=dtype)
        return ParameterSet(cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(self.tensors[n].size for n in self.trainable())


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 6
    for k, c in enumerate(cfg.conv_channels):
        shapes[f"conv{k}.weight"] = (c, c_in, 3, 3)
        shapes[f"conv{k}.bias"] = (c,)
        for part in ("gamma", "beta", "running_mean", "running_var"):
            shapes[f"bn{k}.{part}"] = (c,)
        c_in = c
    h = cfg.lstm_hidden
    d_in = cfg.feature_size
    for layer in range(cfg.lstm_layers):
        for direction in ("fwd", "bwd"):
            p = f"lstm{layer}.{direction}"
            shapes[f"{p}.w_ih"] = (4 * h, d_in)
            shapes[f"{p}.w_hh"] = (4 * h, h)
            shapes[f"{p}.bias"] = (4 * h,)
        d_in = 2 * h
    d = cfg.model_width
    for layer in range(cfg.attn_layers):
        shapes[f"attn{layer}.w_qkv"] = (3 * d, d)
        shapes[f"attn{layer}.b_qkv"] = (3 * d,)
        shapes[f"attn{layer}.w_out"] = (d, d)
        shapes[f"attn{layer}.b_out"] = (d,)
    shapes["fc1.weight"] = (cfg.fc_intermediate, d)
    shapes["fc1.bias"] = (cfg.fc_intermediate,)
    shapes["fc2.weight"] = (6, cfg.fc_intermediate)
    shapes["fc2.bias"] = (6,)
    return shapes


def init_gain(name: str) -> float:
    """Uniform-init limit is ``sqrt(gain / fan_in)``.

    He for layers feeding a LeakyReLU, LeCun otherwise, and a near-zero output
    layer so the first (rotation-weighted) losses do not saturate Adagrad's
    accumulators.
    """
    if name == "fc2.weight":
        return OUTPUT_GAIN
    return 6.0 if name.startswith(("conv", "fc1")) else 3.0


def init_parameters(cfg: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    h = cfg.lstm_hidden
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith((".weight", ".w_ih", ".w_hh", ".w_qkv", ".w_out")):
            fan_in = int(np.prod(shape[1:]))
            limit = np.sqrt(init_gain(name) / fan_in)
            t = rng.uniform(-limit, limit, size=shape)
        elif name.endswith((".gamma", ".running_var")):
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        if name.startswith("lstm") and name.endswith(".bias"):
            t[h : 2 * h] = 1.0  # forget gate
        tensors[name] = t.astype(cfg.np_dtype)
    return ParameterSet(cfg, tensors)


@dataclass
class Tape:
    """Intermediates recorded by a forward pass, consumed by :func:`backward`."""

    mode: str = TRAIN
    conv: list = field(default_factory=list)
    lstm: list = field(default_factory=list)
    attn: list = field(default_factory=list)
    head: tuple | None = None
    shape: tuple | None = None

    @property
    def recorded(self) -> bool:
        return self.head is not None

    def attention_weights(self) -> list[np.ndarray]:
        return [c[0][4] for c in self.attn]

    def batch_stats(self) -> list[tuple[np.ndarray, np.ndarray, int]]:
        out = []
        for conv_cache, bn_cache, *_ in self.conv:
            xhat = bn_cache[0]
            m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
            out.append((bn_cache[4], bn_cache[5], m))
        return out


def _check_mode(mode):
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == TRAIN


def _dropout_rng(train, rng):
    return rng if train else None


def conv_encoder_forward(pairs, params: ParameterSet, mode=EVAL, rng=None, tape: Tape | None = None):
    """(B, 6, H, W) stacked frame pairs -> (B, F) flattened features."""
    cfg = params.config
    train = _check_mode(mode)
    x = np.asarray(pairs, dtype=cfg.np_dtype)
    if x.ndim != 4 or x.shape[1] != 6 or tuple(x.shape[2:]) != cfg.image_size:
        raise ConfigError(
            f"conv stage 0: expected input (B, 6, {cfg.image_size[0]}, {cfg.image_size[1]}), got {x.shape}"
        )
    drng = _dropout_rng(train, rng)
    for k, stride in enumerate(cfg.conv_strides):
        W = params[f"conv{k}.weight"]
        if x.shape[1] != W.shape[1]:
            raise ConfigError(f"conv stage {k}: {x.shape[1]} input channels, weight expects {W.shape[1]}")
        x, c_conv = L.conv3x3_forward(x, W, params[f"conv{k}.bias"], stride)
        x, c_bn = L.batchnorm_forward(
            x,
            params[f"bn{k}.gamma"],
            params[f"bn{k}.beta"],
            params[f"bn{k}.running_mean"],
            params[f"bn{k}.running_var"],
            train,
        )
        x, c_act = L.leaky_relu_forward(x, cfg.leaky_slope)
        mask = L.dropout_mask(x.shape, cfg.dropout_p, drng, x.dtype)
        x = L.apply_mask(x, mask)
        if tape is not None:
            tape.conv.append((c_conv, c_bn, c_act, mask))
    return x.reshape(x.shape[0], -1)


def _conv_encoder_backward(dfeat, tape: Tape, params: ParameterSet, grads: dict):
    cfg = params.config
    dx = dfeat
    for k in reversed(range(len(tape.conv))):
        c_conv, c_bn, c_act, mask = tape.conv[k]
        dx = dx.reshape(c_bn[0].shape)
        dx = L.apply_mask(dx, mask)
        dx = L.leaky_relu_backward(dx, c_act)
        dx, grads[f"bn{k}.gamma"], grads[f"bn{k}.beta"] = L.batchnorm_backward(dx, c_bn)
        dx, grads[f"conv{k}.weight"], grads[f"conv{k}.bias"] = L.conv3x3_backward(
            dx, c_conv, need_dx=k > 0
        )


def bilstm_forward(features, params: ParameterSet, mode=EVAL, rng=None, tape: Tape | None = None):
    """(B, T, F) -> (B, T, 2h); forward and time-reversed directions concatenated per layer."""
    cfg = params.config
    train = _check_mode(mode)
    x = np.asarray(features, dtype=cfg.np_dtype)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ConfigError(f"bilstm expects (B, T>=1, F), got {x.shape}")
    drng = _dropout_rng(train, rng)
    for layer in range(cfg.lstm_layers):
        p = f"lstm{layer}"
        hf, cf = L.lstm_forward(x, params[f"{p}.fwd.w_ih"], params[f"{p}.fwd.w_hh"], params[f"{p}.fwd.bias"])
        hb, cb = L.lstm_forward(
            x[:, ::-1], params[f"{p}.bwd.w_ih"], params[f"{p}.bwd.w_hh"], params[f"{p}.bwd.bias"]
        )
        x = np.concatenate([hf, hb[:, ::-1]], axis=-1)
        mask = L.dropout_mask(x.shape, cfg.dropout_p, drng, x.dtype)
        x = L.apply_mask(x, mask)
        if tape is not None:
            tape.lstm.append((cf, cb, mask))
    return x


def _bilstm_backward(dout, tape: Tape, params: ParameterSet, grads: dict):
    h = params.config.lstm_hidden
    dx = dout
    for layer in reversed(range(len(tape.lstm))):
        cf, cb, mask = tape.lstm[layer]
        dx = L.apply_mask(dx, mask)
        p = f"lstm{layer}"
        dxf, grads[f"{p}.fwd.w_ih"], grads[f"{p}.fwd.w_hh"], grads[f"{p}.fwd.bias"] = L.lstm_backward(
            np.ascontiguousarray(dx[..., :h]), cf
        )
        dxb, grads[f"{p}.bwd.w_ih"], grads[f"{p}.bwd.w_hh"], grads[f"{p}.bwd.bias"] = L.lstm_backward(
            np.ascontiguousarray(dx[:, ::-1, h:]), cb
        )
        dx = dxf + dxb[:, ::-1]
    return dx


def mha_forward(seq, params: ParameterSet, mode=EVAL, rng=None, tape: Tape | None = None):
    """Stack of self-attention layers, each ``dropout(LeakyReLU(x + MHA(x)))``."""
    cfg = params.config
    train = _check_mode(mode)
    x = np.asarray(seq, dtype=cfg.np_dtype)
    d = x.shape[-1]
    if d % cfg.attn_heads:
        raise ConfigError(f"model width {d} not divisible by {cfg.attn_heads} heads")
    drng = _dropout_rng(train, rng)
    B, T, _ = x.shape
    for layer in range(cfg.attn_layers):
        p = f"attn{layer}"
        a_mask = L.dropout_mask((B, cfg.attn_heads, T, T), cfg.dropout_p, drng, x.dtype)
        z, c_att = L.attention_forward(
            x, params[f"{p}.w_qkv"], params[f"{p}.b_qkv"], params[f"{p}.w_out"], params[f"{p}.b_out"],
            cfg.attn_heads, a_mask,
        )
        y, c_act = L.leaky_relu_forward(x + z, cfg.leaky_slope)
        o_mask = L.dropout_mask(y.shape, cfg.dropout_p, drng, x.dtype)
        x = L.apply_mask(y, o_mask)
        if tape is not None:
            tape.attn.append((c_att, c_act, o_mask))
    return x


def _mha_backward(dout, tape: Tape, params: ParameterSet, grads: dict):
    dx = dout
    for layer in reversed(range(len(tape.attn))):
        c_att, c_act, o_mask = tape.attn[layer]
        p = f"attn{layer}"
        dr = L.leaky_relu_backward(L.apply_mask(dx, o_mask), c_act)
        dxa, grads[f"{p}.w_qkv"], grads[f"{p}.b_qkv"], grads[f"{p}.w_out"], grads[f"{p}.b_out"] = (
            L.attention_backward(dr, c_att)
        )
        dx = dr + dxa
    return dx


def head_forward(vec, params: ParameterSet, mode=EVAL, rng=None, tape: Tape | None = None):
    """(B, T, 2h) -> (B, T, 6): rotation angles in [..., :3], translation in [..., 3:]."""
    cfg = params.config
    train = _check_mode(mode)
    x = np.asarray(vec, dtype=cfg.np_dtype)
    h1, c1 = L.linear_forward(x, params["fc1.weight"], params["fc1.bias"])
    mask = L.dropout_mask(h1.shape, cfg.dropout_p, _dropout_rng(train, rng), x.dtype)
    a, c_act = L.leaky_relu_forward(L.apply_mask(h1, mask), cfg.leaky_slope)
    out, c2 = L.linear_forward(a, params["fc2.weight"], params["fc2.bias"])
    if tape is not None:
        tape.head = (c1, mask, c_act, c2)
    return out


def _head_backward(dout, tape: Tape, params: ParameterSet, grads: dict):
    c1, mask, c_act, c2 = tape.head
    _, grads["fc2.weight"], grads["fc2.bias"] = L.linear_backward(dout, c2)
    da = L.linear_backward_input(dout, params["fc2.weight"])
    dh1 = L.apply_mask(L.leaky_relu_backward(da, c_act), mask)
    _, grads["fc1.weight"], grads["fc1.bias"] = L.linear_backward(dh1, c1)
    return L.linear_backward_input(dh1, params["fc1.weight"])


def stack_pairs(images: np.ndarray) -> np.ndarray:
    """(B, L, 3, H, W) -> (B*(L-1), 6, H, W) consecutive-frame pairs."""
    B, Ln = images.shape[:2]
    pairs = np.concatenate([images[:, :-1], images[:, 1:]], axis=2)
    return pairs.reshape(B * (Ln - 1), 6, *images.shape[3:])


def model_forward(segment_images, params: ParameterSet, mode=EVAL, rng=None, tape: Tape | None = None):
    """(B, L, 3, H, W) frame sequences -> (B, L-1, 6) relative motions."""
    cfg = params.config
    x = np.asarray(segment_images, dtype=cfg.np_dtype)
    if x.ndim != 5 or x.shape[2] != 3:
        raise ConfigError(f"expected (B, L, 3, H, W) images, got {x.shape}")
    B, Ln = x.shape[:2]
    if Ln < 2:
        raise ValueError(f"need at least 2 frames per sequence, got {Ln}")
    if tape is not None:
        tape.mode = mode
        tape.conv.clear(), tape.lstm.clear(), tape.attn.clear()
        tape.head = None
    feats = conv_encoder_forward(stack_pairs(x), params, mode, rng, tape)
    seq = bilstm_forward(feats.reshape(B, Ln - 1, -1), params, mode, rng, tape)
    seq = mha_forward(seq, params, mode, rng, tape)
    out = head_forward(seq, params, mode, rng, tape)
    if tape is not None:
        tape.shape = (B, Ln - 1)
    return out


def backward(loss_grad, tape: Tape | None, params: ParameterSet) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every trainable tensor, given dLoss/dOutput."""
    if tape is None or not tape.recorded:
        raise StateError("backward called without a recorded forward pass")
    grads: dict[str, np.ndarray] = {}
    dout = np.asarray(loss_grad, dtype=params.config.np_dtype)
    dseq = _head_backward(dout, tape, params, grads)
    dseq = _mha_backward(dseq, tape, params, grads)
    dfeat = _bilstm_backward(dseq, tape, params, grads)
    B, T = tape.shape
    _conv_encoder_backward(dfeat.reshape(B * T, -1), tape, params, grads)
    return {n: grads[n] for n in params.trainable()}


def update_running_stats(params: ParameterSet, tape: Tape) -> None:
    """Fold the batch-norm statistics of a train-mode pass into the running buffers (in place)."""
    mom = params.config.bn_momentum
    for k, (mean, var, m) in enumerate(tape.batch_stats()):
        unbiased = var * (m / max(m - 1, 1))
        rm, rv = params.tensors[f"bn{k}.running_mean"], params.tensors[f"bn{k}.running_var"]
        rm *= 1 - mom
        rm += mom * mean
        rv *= 1 - mom
        rv += mom * unbiased
