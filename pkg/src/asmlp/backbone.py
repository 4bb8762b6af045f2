"""The hierarchical backbone: patch partition, embedding, four stages, head."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .axial_shift import BlockParams, ShiftConfig, as_mlp_block
from .baselines import make_baseline_block
from .layers import LayerNormParams, Module, Projection
from .tensor import ShapeError, mac_scope, permute, reduce_mean, reshape

MIXERS = ("axial-shift", "global", "axial", "window", "(5,1)", "(1,5)")


@dataclass(frozen=True)
class VariantConfig:
    name: str = "custom"
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    patch_size: int = 4
    mlp_ratio: int = 4
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    connection: str = "parallel"
    num_classes: int = 1000
    drop_path_max: float = 0.2
    in_chans: int = 3
    mixer: str = "axial-shift"
    window: int = 7

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(n) for n in self.depths))
        if len(self.depths) != 4 or min(self.depths) < 1:
            raise ValueError(f"need four positive stage depths, got {self.depths}")
        if self.embed_dim < 1 or self.patch_size < 1 or self.num_classes < 1:
            raise ValueError("embed_dim, patch_size and num_classes must be positive")
        if not 0.0 <= self.drop_path_max < 1.0:
            raise ValueError("drop_path_max must lie in [0, 1)")
        if self.mixer not in MIXERS:
            raise ValueError(f"unknown mixer {self.mixer!r}")

    def stage_dims(self):
        return [self.embed_dim * 2**i for i in range(4)]

    def stage_resolutions(self, height, width=None):
        width = height if width is None else width
        p = self.patch_size
        return [(height // (p * 2**i), width // (p * 2**i)) for i in range(4)]

    def check_input(self, height, width):
        unit = self.patch_size * 8
        if height <= 0 or width <= 0 or height % unit or width % unit:
            raise ShapeError(f"input {height}x{width} must be positive and divisible by {unit}")


_VARIANTS = {
    "tiny": dict(embed_dim=96, depths=(2, 2, 6, 2), drop_path_max=0.2),
    "small": dict(embed_dim=96, depths=(2, 2, 18, 2), drop_path_max=0.3),
    "base": dict(embed_dim=128, depths=(2, 2, 18, 2), drop_path_max=0.5),
    "mobile": dict(embed_dim=64, depths=(2, 2, 2, 2), drop_path_max=0.1),
}
VARIANT_NAMES = tuple(_VARIANTS)


def make_variant(name, **overrides):
    """Named variant (tiny/small/base/mobile) or ``custom`` built from ``overrides``."""
    if name in _VARIANTS:
        return VariantConfig(name=name, **{**_VARIANTS[name], **overrides})
    if name == "custom":
        return VariantConfig(name="custom", **overrides)
    raise ValueError(f"unknown variant {name!r}; expected one of {VARIANT_NAMES} or 'custom'")


def patch_partition(image, p):
    """``[b, c, H, W] -> [b, c*p*p, H/p, W/p]`` with (channel, row, col) ordering."""
    B, C, H, W = image.shape
    if H % p or W % p:
        raise ShapeError(f"patch size {p} does not divide {H}x{W}")
    t = reshape(image, (B, C, H // p, p, W // p, p))
    t = permute(t, (0, 1, 3, 5, 2, 4))
    return reshape(t, (B, C * p * p, H // p, W // p))


def patch_unpartition(tokens, p, channels=3):
    """Inverse of :func:`patch_partition`."""
    B, K, h, w = tokens.shape
    if K != channels * p * p:
        raise ShapeError(f"{K} token channels do not match {channels} x {p} x {p}")
    t = reshape(tokens, (B, channels, p, p, h, w))
    t = permute(t, (0, 1, 4, 2, 5, 3))
    return reshape(t, (B, channels, h * p, w * p))


class PatchMergingParams(Module):
    def __init__(self, channels, rng=None, init="trunc_normal", dtype=None):
        self.norm = LayerNormParams(4 * channels, dtype=dtype)
        self.reduction = Projection(4 * channels, 2 * channels, bias=False, rng=rng, init=init, dtype=dtype)


def merge_neighbors(x):
    """Concatenate each 2x2 neighbourhood channel-wise: TL, TR, BL, BR."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"patch merging needs even spatial dims, got {H}x{W}")
    t = reshape(x, (B, C, H // 2, 2, W // 2, 2))
    t = permute(t, (0, 3, 5, 1, 2, 4))
    return reshape(t, (B, 4 * C, H // 2, W // 2))


def patch_merging(x, params):
    return params.reduction(params.norm(merge_neighbors(x)))


class StageParams(Module):
    def __init__(self, merge, blocks):
        self.merge = merge
        self.blocks = blocks


class ModelParams(Module):
    def __init__(self, cfg, embed, embed_norm, stages, head_norm, head):
        self.cfg = cfg
        self.embed = embed
        self.embed_norm = embed_norm
        self.stages = stages
        self.head_norm = head_norm
        self.head = head

    def __call__(self, image, training=False, rng=None):
        return forward(image, self, training, rng)


def drop_path_rates(cfg):
    total = sum(cfg.depths)
    if total == 1:
        return [0.0]
    return [float(r) for r in np.linspace(0.0, cfg.drop_path_max, total)]


def build_model(cfg, rng=None, dtype=None, init="trunc_normal", input_size=None, shift_impl="kernel"):
    """Instantiate parameters for ``cfg``.

    ``input_size`` is only needed for resolution-bound baseline mixers.
    ``init="zeros"`` skips random initialisation (cost accounting).
    """
    if rng is None and init != "zeros":
        rng = np.random.default_rng(0)
    dims = cfg.stage_dims()
    rates = iter(drop_path_rates(cfg))
    res = None
    if cfg.mixer not in ("axial-shift", "(5,1)", "(1,5)"):
        if input_size is None:
            raise ValueError(f"mixer {cfg.mixer!r} is bound to a resolution; pass input_size")
        h, w = (input_size, input_size) if np.isscalar(input_size) else input_size
        cfg.check_input(h, w)
        res = cfg.stage_resolutions(h, w)

    embed = Projection(cfg.in_chans * cfg.patch_size**2, dims[0], rng=rng, init=init, dtype=dtype)
    embed_norm = LayerNormParams(dims[0], dtype=dtype)
    stages = []
    for i, (C, depth) in enumerate(zip(dims, cfg.depths)):
        merge = PatchMergingParams(dims[i - 1], rng=rng, init=init, dtype=dtype) if i else None
        blocks = []
        for _ in range(depth):
            rate = next(rates)
            if cfg.mixer == "axial-shift":
                blocks.append(BlockParams(C, cfg.shift, cfg.connection, cfg.mlp_ratio, rate, rng=rng,
                                          init=init, dtype=dtype, shift_impl=shift_impl))
            else:
                blocks.append(make_baseline_block(
                    cfg.mixer, res[i] if res else None, C, cfg.mlp_ratio, rate, rng=rng, init=init,
                    dtype=dtype, window=cfg.window, padding=cfg.shift.padding,
                    dilation=cfg.shift.dilation))
        stages.append(StageParams(merge, blocks))
    head_norm = LayerNormParams(dims[-1], dtype=dtype)
    head = Projection(dims[-1], cfg.num_classes, rng=rng, init=init, dtype=dtype)
    return ModelParams(cfg, embed, embed_norm, stages, head_norm, head)


def forward_features(image, model, training=False, rng=None):
    """Run the four stages; return the list of per-stage feature maps."""
    cfg = model.cfg
    if image.ndim != 4 or image.shape[1] != cfg.in_chans:
        raise ShapeError(f"expected [b, {cfg.in_chans}, H, W] image, got {image.shape}")
    cfg.check_input(image.shape[2], image.shape[3])
    with mac_scope("1/linear-embedding"):
        x = model.embed_norm(model.embed(patch_partition(image, cfg.patch_size)))
    feats = []
    for i, stage in enumerate(model.stages, start=1):
        if stage.merge is not None:
            with mac_scope(f"{i}/patch-merging"):
                x = patch_merging(x, stage.merge)
        with mac_scope(f"{i}/blocks"):
            for block in stage.blocks:
                x = as_mlp_block(x, block, training, rng)
        feats.append(x)
    return feats


def forward(image, model, training=False, rng=None):
    """Image ``[b, 3, H, W]`` to logits ``[b, num_classes]``."""
    x = forward_features(image, model, training, rng)[-1]
    with mac_scope("head"):
        x = reduce_mean(model.head_norm(x), axis=(2, 3), keepdims=True)
        logits = model.head(x)
    return reshape(logits, (logits.shape[0], logits.shape[1]))


def with_shift(cfg, **changes):
    """Copy of ``cfg`` with selected :class:`ShiftConfig` fields replaced."""
    return replace(cfg, shift=replace(cfg.shift, **changes))
