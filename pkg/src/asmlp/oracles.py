"""Brute-force reference implementations.

Nothing here calls into the tape or the kernels; every function is written
as explicit loops over indices so it can judge the vectorised code paths.
"""
from __future__ import annotations

import math

import numpy as np


def _extend(row, idx, mode):
    L = len(row)
    if 0 <= idx < L:
        return row[idx]
    if mode == "zero":
        return 0.0
    if mode == "circular":
        return row[idx % L]
    if mode == "replicate":
        return row[0] if idx < 0 else row[L - 1]
    if mode == "reflect":
        return row[-idx] if idx < 0 else row[2 * (L - 1) - idx]
    raise ValueError(mode)


def shift_index_map(x, axis, s, d, mode):
    """Per-element evaluation of the axial shift index map.

    Channel ``c`` belongs to group ``c // ceil(C / s)`` with displacement
    ``k = (group - s // 2) * d``; output position ``j`` reads ``j - k``.
    """
    x = np.asarray(x)
    B, C, H, W = x.shape
    size = math.ceil(C / s)
    out = np.empty_like(x)
    for b in range(B):
        for c in range(C):
            k = (c // size - s // 2) * d
            for i in range(H):
                for j in range(W):
                    if axis in ("width", 3):
                        out[b, c, i, j] = _extend(x[b, c, i, :], j - k, mode)
                    else:
                        out[b, c, i, j] = _extend(x[b, c, :, j], i - k, mode)
    return out


def matmul_channels_loop(x, w, bias):
    B, Cin, H, W = x.shape
    Cout = w.shape[0]
    out = np.zeros((B, Cout, H, W), dtype=np.float64)
    for b in range(B):
        for o in range(Cout):
            for i in range(H):
                for j in range(W):
                    acc = float(bias[o])
                    for c in range(Cin):
                        acc += float(w[o, c]) * float(x[b, c, i, j])
                    out[b, o, i, j] = acc
    return out


def global_mix_loop(x, w_mixer):
    B, C, H, W = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for m in range(H):
                        for n in range(W):
                            acc += w_mixer[i * W + j, m * W + n] * x[b, c, m, n]
                    out[b, c, i, j] = acc
    return out


def axial_mix_loop(x, w_h, w_v):
    B, C, H, W = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for n in range(W):
                        acc += w_h[j, n] * x[b, c, i, n]
                    for m in range(H):
                        acc += w_v[i, m] * x[b, c, m, j]
                    out[b, c, i, j] = acc
    return out


def window_mix_loop(x, w_win, M):
    B, C, H, W = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    wi, wj = (i // M) * M, (j // M) * M
                    t = (i - wi) * M + (j - wj)
                    acc = 0.0
                    for u in range(M):
                        for v in range(M):
                            acc += w_win[t, u * M + v] * x[b, c, wi + u, wj + v]
                    out[b, c, i, j] = acc
    return out


def smoothed_ce_loop(logits, targets, eps):
    logits = np.asarray(logits, dtype=np.float64)
    B, K = logits.shape
    total = 0.0
    for b in range(B):
        m = max(logits[b])
        lse = m + math.log(sum(math.exp(v - m) for v in logits[b]))
        for k in range(K):
            q = eps / K + (1.0 - eps if k == targets[b] else 0.0)
            total -= q * (logits[b, k] - lse)
    return total / B


def minkowski_sum(a, b):
    return {(p[0] + q[0], p[1] + q[1]) for p in a for q in b}


def finite_difference(f, arrays, step=1e-5, coords=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arrays``.

    ``arrays`` are perturbed in place and restored. ``coords[k]`` optionally
    restricts tensor ``k`` to a list of flat indices.
    """
    grads = []
    for k, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        idx = range(flat.size) if coords is None else coords[k]
        g = {}
        for n in idx:
            orig = flat[n]
            flat[n] = orig + step
            fp = f()
            flat[n] = orig - step
            fm = f()
            flat[n] = orig
            g[n] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """``max |a - n| / max(|a|, |n|, floor)`` over the compared entries.

    The floor keeps entries whose true gradient is ~0 from dividing roundoff
    by roundoff.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(abs(a), abs(n), floor)
        worst = max(worst, abs(a - n) / denom)
    return worst
