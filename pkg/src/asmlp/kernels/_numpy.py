"""Pure-numpy reference kernels.

Every function here has a twin in ``_numba`` with the same signature. The
numpy versions are the fallback when numba is disabled or missing and serve
as the cross-check in the kernel tests.
"""
import numpy as np
from scipy.special import erf

from ._common import MODE_CIRCULAR, MODE_ZERO, group_offsets, source_index

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def layer_norm_fwd(x, gamma, beta, eps):
    """Normalize ``x[b, C, h, w]`` over the channel axis at every position."""
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    return y, xhat, rstd


def layer_norm_bwd(g, xhat, rstd, gamma):
    dxhat = g * gamma.reshape(1, -1, 1, 1)
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd * (dxhat - m1 - xhat * m2)
    dgamma = (g * xhat).sum(axis=(0, 2, 3))
    dbeta = g.sum(axis=(0, 2, 3))
    return dx, dgamma, dbeta


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def _group_bounds(C, s):
    size = -(-C // s)
    return [(g, g * size, min(C, (g + 1) * size)) for g in range(s) if g * size < C]


def shift_fwd(x, axis, s, d, mode):
    L = x.shape[axis]
    out = np.empty_like(x)
    offsets = group_offsets(s, d)
    for g, c0, c1 in _group_bounds(x.shape[1], s):
        k = offsets[g]
        src = np.array([source_index(j - k, L, mode) for j in range(L)], dtype=np.int64)
        block = np.take(x[:, c0:c1], np.maximum(src, 0), axis=axis)
        if mode == MODE_ZERO:
            shape = [1, 1, 1, 1]
            shape[axis] = L
            block = block * (src >= 0).reshape(shape).astype(x.dtype)
        out[:, c0:c1] = block
    return out


def shift_bwd(g, axis, s, d, mode):
    L = g.shape[axis]
    dx = np.zeros_like(g)
    offsets = group_offsets(s, d)
    for grp, c0, c1 in _group_bounds(g.shape[1], s):
        k = offsets[grp]
        if mode == MODE_CIRCULAR:
            dx[:, c0:c1] = np.roll(g[:, c0:c1], -k, axis=axis)
            continue
        # adjoint of a gather: accumulate each output cell into its source
        moved = np.moveaxis(dx[:, c0:c1], axis, 0)
        gsrc = np.moveaxis(g[:, c0:c1], axis, 0)
        for j in range(L):
            i = source_index(j - k, L, mode)
            if i >= 0:
                moved[i] += gsrc[j]
    return dx


_CRC_TABLE = None


def _crc_table():
    global _CRC_TABLE
    if _CRC_TABLE is None:
        from ._common import crc64_table

        _CRC_TABLE = crc64_table()
    return _CRC_TABLE


def crc64(buf):
    table = _crc_table()
    crc = 0xFFFFFFFFFFFFFFFF
    for b in bytes(buf):
        crc = int(table[(crc ^ b) & 0xFF]) ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF
