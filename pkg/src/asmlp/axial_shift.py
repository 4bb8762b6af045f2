"""Axial shift, the shift unit and the full block built around it.

Channels are split into ``s`` groups of ``ceil(C / s)`` channels and group
``g`` is rolled by ``(g - s // 2) * d`` cells along one spatial axis, so
output channel ``c`` at position ``j`` reads input position
``j - (c // ceil(C / s) - s // 2) * d``. Cells that fall outside the map are
filled according to the padding mode.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import kernels
from .layers import LayerNormParams, MlpParams, Module, Projection, drop_path, gelu, mlp_forward
from .tensor import (
    ShapeError,
    chunk_channels,
    concat_channels,
    crop_spatial,
    make_result,
    pad_spatial,
    roll,
)

PADDING_MODES = ("zero", "circular", "reflect", "replicate")
CONNECTIONS = ("parallel", "serial")
AXES = {"height": 2, "width": 3}


@dataclass(frozen=True)
class ShiftConfig:
    s_h: int = 5  # horizontal shift size (moves along width)
    s_v: int = 5  # vertical shift size (moves along height)
    dilation: int = 1
    padding: str = "zero"

    def __post_init__(self):
        for name in ("s_h", "s_v"):
            s = getattr(self, name)
            if int(s) != s or s < 1 or s % 2 == 0:
                raise ValueError(f"{name} must be an odd positive integer, got {s}")
        if int(self.dilation) != self.dilation or self.dilation < 1:
            raise ValueError(f"dilation must be a positive integer, got {self.dilation}")
        if self.padding in ("none", "no"):
            object.__setattr__(self, "padding", "circular")
        if self.padding not in PADDING_MODES:
            raise ValueError(f"unknown padding {self.padding!r}; expected one of {PADDING_MODES}")

    def size(self, axis):
        return self.s_h if _axis_index(axis) == 3 else self.s_v


def _axis_index(axis):
    if axis in AXES:
        return AXES[axis]
    if axis in (2, 3):
        return axis
    raise ValueError(f"axis must be 'height' or 'width', got {axis!r}")


def _check_shift(x, ax, s, d, mode):
    if x.ndim != 4:
        raise ShapeError(f"shift expects a [b, C, h, w] tensor, got {x.shape}")
    pad = (s // 2) * d
    if mode == "reflect" and pad >= x.shape[ax]:
        raise ShapeError(
            f"reflect padding needs (s // 2) * d = {pad} < extent {x.shape[ax]} along the shifted axis"
        )
    return pad


def shift(x, axis, cfg, impl="kernel"):
    """Shift channel groups of ``x[b, C, h, w]`` along ``axis`` ("height"/"width").

    ``impl="composed"`` runs the pad / chunk / roll / concat / crop pipeline of
    tape primitives; ``impl="kernel"`` runs the fused gather kernel. Both give
    identical results.
    """
    ax = _axis_index(axis)
    s = cfg.size(ax)
    d = cfg.dilation
    pad = _check_shift(x, ax, s, d, cfg.padding)
    if impl == "composed":
        return _shift_composed(x, ax, s, d, cfg.padding, pad)
    if impl == "kernel":
        return _shift_kernel(x, ax, s, d, cfg.padding)
    raise ValueError(f"unknown shift impl {impl!r}")


def _shift_composed(x, ax, s, d, mode, pad):
    # more groups than channels degenerates to one channel per group
    groups = chunk_channels(x, min(s, x.shape[1]))
    offsets = kernels.group_offsets(s, d)
    if mode == "circular":
        return concat_channels([roll(g, ax, k) for g, k in zip(groups, offsets)])
    padded = [pad_spatial(g, pad, mode, axes=(ax,)) for g in groups]
    rolled = [roll(g, ax, k) for g, k in zip(padded, offsets)]
    return crop_spatial(concat_channels(rolled), pad, axes=(ax,))


def _shift_kernel(x, ax, s, d, mode):
    code = kernels.MODE_CODES[mode]
    out = kernels.shift_fwd(x.data, ax, s, d, code)
    return make_result(out, (x,), lambda g: (kernels.shift_bwd(g, ax, s, d, code),), "shift")


def sampling_locations(cfg):
    """Offsets (di, dj) one parallel axial shift unit reads around an output cell."""
    d = cfg.dilation
    locs = {(k * d, 0) for k in range(-(cfg.s_v // 2), cfg.s_v // 2 + 1)}
    locs |= {(0, k * d) for k in range(-(cfg.s_h // 2), cfg.s_h // 2 + 1)}
    return locs


class AxialShiftUnitParams(Module):
    """Norm, four channel projections and two inner norms of one unit."""

    def __init__(self, channels, shift_cfg=None, connection="parallel", rng=None,
                 init="trunc_normal", dtype=None, shift_impl="kernel"):
        if connection not in CONNECTIONS:
            raise ValueError(f"connection must be one of {CONNECTIONS}, got {connection!r}")
        self.shift = shift_cfg or ShiftConfig()
        self.connection = connection
        self.shift_impl = shift_impl
        self.norm_pre = LayerNormParams(channels, dtype=dtype)
        self.proj_in = Projection(channels, channels, rng=rng, init=init, dtype=dtype)
        self.norm_in = LayerNormParams(channels, dtype=dtype)
        self.proj_h = Projection(channels, channels, rng=rng, init=init, dtype=dtype)
        self.proj_v = Projection(channels, channels, rng=rng, init=init, dtype=dtype)
        self.norm_out = LayerNormParams(channels, dtype=dtype)
        self.proj_out = Projection(channels, channels, rng=rng, init=init, dtype=dtype)


def axial_shift_branch(x, p, connection=None):
    """The unit without its shortcut."""
    connection = connection or p.connection
    x = p.norm_pre(x)
    x = gelu(p.norm_in(p.proj_in(x)))
    if connection == "parallel":
        y_h = gelu(p.proj_h(shift(x, "width", p.shift, p.shift_impl)))
        y_v = gelu(p.proj_v(shift(x, "height", p.shift, p.shift_impl)))
        y = y_h + y_v
    elif connection == "serial":
        y = gelu(p.proj_h(shift(x, "width", p.shift, p.shift_impl)))
        y = gelu(p.proj_v(shift(y, "height", p.shift, p.shift_impl)))
    else:
        raise ValueError(f"connection must be one of {CONNECTIONS}, got {connection!r}")
    return p.proj_out(p.norm_out(y))


def axial_shift_unit(x, p, connection=None):
    return x + axial_shift_branch(x, p, connection)


class BlockParams(Module):
    """Pre-norm residual block: spatial-mixing unit then channel MLP."""

    def __init__(self, channels, shift_cfg=None, connection="parallel", mlp_ratio=4,
                 drop_path_rate=0.0, rng=None, init="trunc_normal", dtype=None,
                 shift_impl="kernel", mixer=None):
        if not 0.0 <= drop_path_rate < 1.0:
            raise ValueError(f"drop path rate must lie in [0, 1), got {drop_path_rate}")
        self.channels = channels
        self.drop_path_rate = drop_path_rate
        self.unit = mixer if mixer is not None else AxialShiftUnitParams(
            channels, shift_cfg, connection, rng=rng, init=init, dtype=dtype, shift_impl=shift_impl
        )
        self.norm_mlp = LayerNormParams(channels, dtype=dtype)
        self.mlp = MlpParams(channels, mlp_ratio, rng=rng, init=init, dtype=dtype)


def mixer_branch(x, unit):
    if isinstance(unit, AxialShiftUnitParams):
        return axial_shift_branch(x, unit)
    return unit.branch(x)


def as_mlp_block(x, p, training=False, rng=None):
    x = x + drop_path(mixer_branch(x, p.unit), p.drop_path_rate, training, rng)
    return x + drop_path(mlp_forward(p.norm_mlp(x), p.mlp), p.drop_path_rate, training, rng)


def block_weight_params(channels, mlp_ratio):
    """Weight-only parameter count of one block: ``(4 + 2r) C^2``."""
    return (4 + 2 * mlp_ratio) * channels * channels
