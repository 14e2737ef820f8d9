"""Dense-array neural network primitives with explicit backward passes.

Everything is functional: forward returns (output, cache), backward consumes
the cache and the upstream gradient. Convolutions run as im2col + BLAS
matmul; col2im scatters with a kernel-position loop, which is cheap for 3x3
kernels. All ops compute in the dtype of their inputs, so float64 gradient
checks and float32 training share one code path.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------- conv2d

def _im2col(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int, stride: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 1):
    """x: (N,C,H,W), w: (F,C,kh,kw) -> (N,F,OH,OW). No bias (norm follows)."""
    n, c, h, wdt = x.shape
    f, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wdt + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw, oh, ow, stride)
    cols_r = cols.reshape(n, c * kh * kw, oh * ow)
    out = np.matmul(w.reshape(f, -1), cols_r).reshape(n, f, oh, ow)
    cache = (cols_r, x.shape, w.shape, stride, pad, (oh, ow))
    return out, cache


def conv2d_backward(dout: np.ndarray, w: np.ndarray, cache):
    cols_r, x_shape, w_shape, stride, pad, (oh, ow) = cache
    n, c, h, wdt = x_shape
    f, _, kh, kw = w_shape
    dout_r = dout.reshape(n, f, oh * ow)
    dw = np.matmul(dout_r, cols_r.transpose(0, 2, 1)).sum(axis=0).reshape(w_shape)
    dcols = np.matmul(w.reshape(f, -1).T, dout_r).reshape(n, c, kh, kw, oh, ow)
    dxp = np.zeros((n, c, h + 2 * pad, wdt + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + wdt] if pad else dxp
    return dx, dw


# ------------------------------------------------------------- groupnorm

def groupnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      groups: int, eps: float = 1e-5):
    n, c, h, w = x.shape
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv_std).reshape(n, c, h, w)
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, groups)


def groupnorm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma, groups = cache
    n, c, h, w = dout.shape
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxh = (dout * gamma[None, :, None, None]).reshape(n, groups, -1)
    xh = xhat.reshape(n, groups, -1)
    m = dxh.shape[2]
    s1 = dxh.sum(axis=2, keepdims=True)
    s2 = (dxh * xh).sum(axis=2, keepdims=True)
    dx = inv_std * (dxh - s1 / m - xh * s2 / m)
    return dx.reshape(n, c, h, w), dgamma, dbeta


# ------------------------------------------------------------------ relu

def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray):
    return dout * mask


# ---------------------------------------------------------------- linear

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, x


def linear_backward(dout: np.ndarray, w: np.ndarray, x: np.ndarray):
    dw = x.T @ dout
    db = dout.sum(axis=0)
    dx = dout @ w.T
    return dx, dw, db


# --------------------------------------------------------------- dropout

def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator | None,
                    active: bool):
    """Inverted dropout; identity when inactive or rate == 0."""
    if not active or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("active dropout requires an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout: np.ndarray, keep):
    return dout if keep is None else dout * keep


# ------------------------------------------------------- global avg pool

def gap_forward(x: np.ndarray):
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout: np.ndarray, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to(dout[:, :, None, None], x_shape) / (h * w)
