"""numba-compiled kernels; same contracts as ``_numpy``.

Reductions over the channel axis run sequentially in channel order.
"""
import math

import numpy as np
from numba import njit

from ._common import MODE_CIRCULAR, MODE_ZERO, crc64_table
from ._common import source_index as _py_source_index

source_index = njit(cache=True)(_py_source_index)

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def _layer_norm_fwd(x, gamma, beta, eps, y, xhat, rstd):
    B, C, H, W = x.shape
    for b in range(B):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for c in range(C):
                    acc += x[b, c, i, j]
                mean = acc / C
                acc = 0.0
                for c in range(C):
                    t = x[b, c, i, j] - mean
                    acc += t * t
                r = 1.0 / math.sqrt(acc / C + eps)
                rstd[b, 0, i, j] = r
                for c in range(C):
                    xh = (x[b, c, i, j] - mean) * r
                    xhat[b, c, i, j] = xh
                    y[b, c, i, j] = xh * gamma[c] + beta[c]


def layer_norm_fwd(x, gamma, beta, eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty((x.shape[0], 1, x.shape[2], x.shape[3]), dtype=x.dtype)
    _layer_norm_fwd(x, gamma.astype(x.dtype), beta.astype(x.dtype), eps, y, xhat, rstd)
    return y, xhat, rstd


@njit(cache=True)
def _layer_norm_bwd(g, xhat, rstd, gamma, dx, dgamma, dbeta):
    B, C, H, W = g.shape
    for b in range(B):
        for i in range(H):
            for j in range(W):
                m1 = 0.0
                m2 = 0.0
                for c in range(C):
                    dxh = g[b, c, i, j] * gamma[c]
                    m1 += dxh
                    m2 += dxh * xhat[b, c, i, j]
                m1 /= C
                m2 /= C
                r = rstd[b, 0, i, j]
                for c in range(C):
                    dxh = g[b, c, i, j] * gamma[c]
                    dx[b, c, i, j] = r * (dxh - m1 - xhat[b, c, i, j] * m2)
                    dgamma[c] += g[b, c, i, j] * xhat[b, c, i, j]
                    dbeta[c] += g[b, c, i, j]


def layer_norm_bwd(g, xhat, rstd, gamma):
    g = np.ascontiguousarray(g)
    dx = np.empty_like(g)
    dgamma = np.zeros(g.shape[1], dtype=g.dtype)
    dbeta = np.zeros(g.shape[1], dtype=g.dtype)
    _layer_norm_bwd(g, xhat, rstd, gamma.astype(g.dtype), dx, dgamma, dbeta)
    return dx, dgamma, dbeta


@njit(cache=True)
def _gelu_fwd(x, out):
    for n in range(x.size):
        v = x[n]
        out[n] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))


@njit(cache=True)
def _gelu_bwd(x, g, out):
    for n in range(x.size):
        v = x[n]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * v * v)
        out[n] = g[n] * (cdf + v * pdf)


def gelu_fwd(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _gelu_fwd(x.reshape(-1), out.reshape(-1))
    return out


def gelu_bwd(x, g):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    out = np.empty_like(x)
    _gelu_bwd(x.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out


@njit(cache=True)
def _shift_fwd_w(x, s, d, mode, out):
    B, C, H, W = x.shape
    size = (C + s - 1) // s
    half = s // 2
    for b in range(B):
        for c in range(C):
            k = (c // size - half) * d
            for i in range(H):
                for j in range(W):
                    src = source_index(j - k, W, mode)
                    out[b, c, i, j] = x[b, c, i, src] if src >= 0 else 0.0


@njit(cache=True)
def _shift_bwd_w(g, s, d, mode, dx):
    B, C, H, W = g.shape
    size = (C + s - 1) // s
    half = s // 2
    for b in range(B):
        for c in range(C):
            k = (c // size - half) * d
            for i in range(H):
                for j in range(W):
                    src = source_index(j - k, W, mode)
                    if src >= 0:
                        dx[b, c, i, src] += g[b, c, i, j]


def _as_width_major(a, axis):
    # height shifts run through the width kernel on a transposed copy
    return np.ascontiguousarray(a if axis == 3 else a.swapaxes(2, 3))


def shift_fwd(x, axis, s, d, mode):
    xt = _as_width_major(x, axis)
    out = np.empty_like(xt)
    _shift_fwd_w(xt, s, d, mode, out)
    return out if axis == 3 else np.ascontiguousarray(out.swapaxes(2, 3))


def shift_bwd(g, axis, s, d, mode):
    gt = _as_width_major(g, axis)
    dx = np.zeros_like(gt)
    _shift_bwd_w(gt, s, d, mode, dx)
    return dx if axis == 3 else np.ascontiguousarray(dx.swapaxes(2, 3))


_TABLE = crc64_table()


@njit(cache=True)
def _crc64(buf, table):
    crc = np.uint64(0xFFFFFFFFFFFFFFFF)
    for n in range(buf.size):
        crc = table[(crc ^ np.uint64(buf[n])) & np.uint64(0xFF)] ^ (crc >> np.uint64(8))
    return crc ^ np.uint64(0xFFFFFFFFFFFFFFFF)


def crc64(buf):
    arr = np.frombuffer(bytes(buf), dtype=np.uint8)
    return int(_crc64(arr, _TABLE))
