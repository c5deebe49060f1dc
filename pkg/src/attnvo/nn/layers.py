"""Layer primitives as (forward, backward) function pairs.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes ``(dout, cache)`` and returns the input gradient followed by parameter
gradients. Arrays are plain numpy; the dtype of the parameters decides the
precision of a pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- activations / regularisation --------------------------------------------


def leaky_relu_forward(x, slope):
    pos = x > 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(dout, cache):
    pos, slope = cache
    return np.where(pos, dout, slope * dout)


def dropout_mask(shape, p, rng, dtype):
    """Inverted-dropout mask, or None when dropout is inactive."""
    if p <= 0.0 or rng is None:
        return None
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)


def apply_mask(x, mask):
    return x if mask is None else x * mask


# -- dense -------------------------------------------------------------------


def linear_forward(x, W, b):
    """y = x @ W.T + b over the last axis; W is (out, in)."""
    return x @ W.T + b, x


def linear_backward(dout, x):
    d2 = dout.reshape(-1, dout.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return None, d2.T @ x2, d2.sum(axis=0)


def linear_backward_input(dout, W):
    return dout @ W


# -- convolution ---------------------------------------------------------------


def conv3x3_forward(x, W, b, stride):
    """3x3 convolution, zero padding 1. x: (N, C, H, W); W: (Cout, C, 3, 3)."""
    N, C = x.shape[:2]
    Cout = W.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * 9)
    out = cols @ W.reshape(Cout, -1).T + b
    out = out.reshape(N, Ho, Wo, Cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, W, stride)


def conv3x3_backward(dout, cache, need_dx=True):
    (N, C, H, Wd), cols, W, stride = cache
    Cout, _, _, _ = W.shape
    Ho, Wo = dout.shape[2:]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, Cout)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dcols = (d2 @ W.reshape(Cout, -1)).reshape(N, Ho, Wo, C, 3, 3)
    dxp = np.zeros((N, C, H + 2, Wd + 2), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dW, db


def conv_output_size(n, stride):
    return (n - 1) // stride + 1


# -- batch norm ----------------------------------------------------------------


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    """Per-channel normalisation of (N, C, H, W). In train mode uses batch stats."""
    shape = (1, -1, 1, 1)
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(BN_EPS))
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, train, mean, var)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train, _, _ = cache
    shape = (1, -1, 1, 1)
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    M = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (
        inv_std.reshape(shape)
        / M
        * (
            M * dxhat
            - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
        )
    )
    return dx, dgamma, dbeta


# -- LSTM ----------------------------------------------------------------------


def lstm_forward(x, W_ih, W_hh, b):
    """Unidirectional LSTM over (B, T, D) from zero state; gate order i, f, g, o."""
    B, T, _ = x.shape
    h = W_hh.shape[1]
    xw = x @ W_ih.T + b
    hs = np.zeros((B, T + 1, h), dtype=x.dtype)
    cs = np.zeros((B, T + 1, h), dtype=x.dtype)
    gates = np.empty((B, T, 4 * h), dtype=x.dtype)
    tanh_c = np.empty((B, T, h), dtype=x.dtype)
    for t in range(T):
        a = xw[:, t] + hs[:, t] @ W_hh.T
        i = sigmoid(a[:, :h])
        f = sigmoid(a[:, h : 2 * h])
        g = np.tanh(a[:, 2 * h : 3 * h])
        o = sigmoid(a[:, 3 * h :])
        cs[:, t + 1] = f * cs[:, t] + i * g
        tanh_c[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = o * tanh_c[:, t]
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
    return hs[:, 1:].copy(), (x, W_ih, W_hh, hs, cs, gates, tanh_c)


def lstm_backward(dout, cache):
    x, W_ih, W_hh, hs, cs, gates, tanh_c = cache
    B, T, _ = x.shape
    h = W_hh.shape[1]
    da_all = np.empty((B, T, 4 * h), dtype=x.dtype)
    dW_hh = np.zeros_like(W_hh)
    dh_next = np.zeros((B, h), dtype=x.dtype)
    dc_next = np.zeros((B, h), dtype=x.dtype)
    for t in reversed(range(T)):
        i, f, g, o = np.split(gates[:, t], 4, axis=1)
        dh = dout[:, t] + dh_next
        do = dh * tanh_c[:, t]
        dc = dc_next + dh * o * (1 - tanh_c[:, t] ** 2)
        di = dc * g
        dg = dc * i
        df = dc * cs[:, t]
        dc_next = dc * f
        da = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)], axis=1
        )
        da_all[:, t] = da
        dW_hh += da.T @ hs[:, t]
        dh_next = da @ W_hh
    da2 = da_all.reshape(B * T, 4 * h)
    dW_ih = da2.T @ x.reshape(B * T, -1)
    db = da2.sum(axis=0)
    dx = da_all @ W_ih
    return dx, dW_ih, dW_hh, db


# -- attention -----------------------------------------------------------------


def softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(x, W_qkv, b_qkv, W_out, b_out, heads, attn_mask=None):
    """Multi-head scaled dot-product self-attention without residual/activation.

    ``attn_mask`` is an optional dropout mask applied to the attention weights.
    Returns ``(z, cache)`` with z the output projection, shape (B, T, d).
    """
    B, T, d = x.shape
    dh = d // heads
    qkv = x @ W_qkv.T + b_qkv
    q, k, v = (
        qkv[..., j * d : (j + 1) * d].reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
        for j in range(3)
    )
    scale = x.dtype.type(1.0 / np.sqrt(dh))
    A = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    Ad = apply_mask(A, attn_mask)
    o = (Ad @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    z = o @ W_out.T + b_out
    return z, (x, q, k, v, A, Ad, attn_mask, o, W_qkv, W_out, heads, scale)


def attention_backward(dz, cache):
    x, q, k, v, A, Ad, attn_mask, o, W_qkv, W_out, heads, scale = cache
    B, T, d = x.shape
    dh = d // heads
    dz2 = dz.reshape(-1, d)
    dW_out = dz2.T @ o.reshape(-1, d)
    db_out = dz2.sum(axis=0)
    do = (dz @ W_out).reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    dAd = do @ v.transpose(0, 1, 3, 2)
    dv = Ad.transpose(0, 1, 3, 2) @ do
    dA = apply_mask(dAd, attn_mask)
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
    dq = dS @ k
    dk = dS.transpose(0, 1, 3, 2) @ q
    dqkv = np.concatenate(
        [g.transpose(0, 2, 1, 3).reshape(B, T, d) for g in (dq, dk, dv)], axis=-1
    )
    d2 = dqkv.reshape(-1, 3 * d)
    dW_qkv = d2.T @ x.reshape(-1, d)
    db_qkv = d2.sum(axis=0)
    dx = dqkv @ W_qkv
    return dx, dW_qkv, db_qkv, dW_out, db_out
