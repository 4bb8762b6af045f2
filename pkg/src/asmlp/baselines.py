"""Spatial-mixing baselines that replace the axial shift inside the same block.

Global-MLP and Axial-MLP weights are bound to one feature-map resolution;
Window-MLP is bound to a window size. Running any of them at a size they were
not built for raises :class:`ResolutionMismatchError`.
"""
from __future__ import annotations

import numpy as np

from .axial_shift import AxialShiftUnitParams, BlockParams, ShiftConfig
from .layers import LayerNormParams, Module, Projection, gelu, get_default_dtype, parameter, trunc_normal
from .tensor import ShapeError, linear_last, permute, reshape

BASELINE_KINDS = ("global", "axial", "window", "(5,1)", "(1,5)")
WINDOW_SIZE = 7


class ResolutionMismatchError(ShapeError):
    """Token-mixing weights were built for a different spatial size."""


def global_token_mix(x, w_mixer):
    """Mix the flattened ``h * w`` positions of each channel with ``W[hw, hw]``."""
    B, C, H, W = x.shape
    if w_mixer.shape != (H * W, H * W):
        raise ResolutionMismatchError(
            f"global token mixing built for {w_mixer.shape[0]} positions cannot take a {H}x{W} map"
        )
    flat = reshape(x, (B, C, H * W))
    return reshape(linear_last(flat, w_mixer), (B, C, H, W))


def axial_token_mix(x, w_h, w_v):
    """Row mixing by ``w_h[w, w]`` plus column mixing by ``w_v[h, h]``."""
    B, C, H, W = x.shape
    if w_h.shape != (W, W) or w_v.shape != (H, H):
        raise ResolutionMismatchError(
            f"axial token mixing built for {w_v.shape[0]}x{w_h.shape[0]} cannot take a {H}x{W} map"
        )
    rows = linear_last(x, w_h)
    cols = permute(linear_last(permute(x, (0, 1, 3, 2)), w_v), (0, 1, 3, 2))
    return rows + cols


def window_token_mix(x, w_win, window):
    """Mix the ``M * M`` tokens inside each non-overlapping ``M x M`` window."""
    B, C, H, W = x.shape
    M = window
    if w_win.shape != (M * M, M * M):
        raise ResolutionMismatchError(f"window weight {w_win.shape} does not match window size {M}")
    if H % M or W % M:
        raise ResolutionMismatchError(f"window size {M} does not divide the {H}x{W} map")
    t = reshape(x, (B, C, H // M, M, W // M, M))
    t = permute(t, (0, 1, 2, 4, 3, 5))
    t = reshape(t, (B, C, H // M, W // M, M * M))
    t = linear_last(t, w_win)
    t = reshape(t, (B, C, H // M, W // M, M, M))
    t = permute(t, (0, 1, 2, 4, 3, 5))
    return reshape(t, (B, C, H, W))


def _mix_weight(n, rng, init, dtype):
    if init == "zeros" or rng is None:
        return parameter(np.zeros((n, n), dtype=dtype), dtype=dtype)
    return parameter(trunc_normal((n, n), rng, dtype=dtype), dtype=dtype)


class TokenMixUnit(Module):
    """The axial shift unit with its shift + projection core swapped for token mixing."""

    def __init__(self, kind, channels, resolution, window=WINDOW_SIZE, rng=None,
                 init="trunc_normal", dtype=None):
        dtype = dtype or get_default_dtype()
        H, W = resolution
        self.kind = kind
        self.resolution = (H, W)
        self.window = window
        self.norm_pre = LayerNormParams(channels, dtype=dtype)
        self.proj_in = Projection(channels, channels, rng=rng, init=init, dtype=dtype)
        self.norm_in = LayerNormParams(channels, dtype=dtype)
        if kind == "global":
            self.w_mixer = _mix_weight(H * W, rng, init, dtype)
        elif kind == "axial":
            self.w_h = _mix_weight(W, rng, init, dtype)
            self.w_v = _mix_weight(H, rng, init, dtype)
        elif kind == "window":
            if H % window or W % window:
                raise ResolutionMismatchError(f"window size {window} does not divide the {H}x{W} map")
            self.w_win = _mix_weight(window * window, rng, init, dtype)
        else:
            raise ValueError(f"unknown token-mix kind {kind!r}")
        self.norm_out = LayerNormParams(channels, dtype=dtype)
        self.proj_out = Projection(channels, channels, rng=rng, init=init, dtype=dtype)

    def mix(self, x):
        if self.kind == "global":
            return global_token_mix(x, self.w_mixer)
        if self.kind == "axial":
            return axial_token_mix(x, self.w_h, self.w_v)
        return window_token_mix(x, self.w_win, self.window)

    def branch(self, x):
        x = self.norm_pre(x)
        x = gelu(self.norm_in(self.proj_in(x)))
        return self.proj_out(self.norm_out(gelu(self.mix(x))))


def make_baseline_block(kind, resolution, channels, mlp_ratio=4, drop_path_rate=0.0, rng=None,
                        init="trunc_normal", dtype=None, window=WINDOW_SIZE, padding="zero",
                        dilation=1):
    """Build a block whose spatial mixing is one of :data:`BASELINE_KINDS`."""
    kind = kind.replace(" ", "")
    if kind in ("(5,1)", "(1,5)"):
        s_h, s_v = (5, 1) if kind == "(5,1)" else (1, 5)
        cfg = ShiftConfig(s_h=s_h, s_v=s_v, dilation=dilation, padding=padding)
        unit = AxialShiftUnitParams(channels, cfg, rng=rng, init=init, dtype=dtype)
    elif kind in ("global", "axial", "window"):
        unit = TokenMixUnit(kind, channels, resolution, window=window, rng=rng, init=init, dtype=dtype)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    return BlockParams(channels, mlp_ratio=mlp_ratio, drop_path_rate=drop_path_rate, rng=rng,
                       init=init, dtype=dtype, mixer=unit)
