"""Parameter containers and the standard layers the blocks are built from."""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import (
    ShapeError,
    Tensor,
    get_default_dtype,
    make_result,
    matmul_channels,
    mul,
    parameter,
)

LN_EPS = 1e-5
INIT_STD = 0.02


class Module:
    """Minimal parameter tree: Tensor attributes that need grad are parameters."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


def trunc_normal(shape, rng, std=INIT_STD, dtype=None):
    """Normal(0, std) truncated to +-2 std by redrawing outliers."""
    dtype = dtype or get_default_dtype()
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def _init_weight(shape, rng, init, dtype):
    if init == "zeros" or rng is None:
        return np.zeros(shape, dtype=dtype)
    return trunc_normal(shape, rng, dtype=dtype)


class Projection(Module):
    """Channel projection ``C_in -> C_out``; weight stored as ``[C_out, C_in]``."""

    def __init__(self, c_in, c_out, bias=True, rng=None, init="trunc_normal", dtype=None):
        dtype = dtype or get_default_dtype()
        self.weight = parameter(_init_weight((c_out, c_in), rng, init, dtype), dtype=dtype)
        self.bias = parameter(np.zeros(c_out, dtype=dtype), dtype=dtype) if bias else None

    def __call__(self, x):
        return matmul_channels(x, self.weight, self.bias)


class LayerNormParams(Module):
    def __init__(self, channels, eps=LN_EPS, dtype=None):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        dtype = dtype or get_default_dtype()
        self.gamma = parameter(np.ones(channels, dtype=dtype), dtype=dtype)
        self.beta = parameter(np.zeros(channels, dtype=dtype), dtype=dtype)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self)


def layer_norm(x, p):
    """Channel-wise LayerNorm at each position of ``x[b, C, h, w]``."""
    if x.ndim != 4 or x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"layer_norm over {p.gamma.shape[0]} channels got input {x.shape}")
    gamma = p.gamma.data.astype(x.dtype)
    beta = p.beta.data.astype(x.dtype)
    y, xhat, rstd = kernels.layer_norm_fwd(x.data, gamma, beta, p.eps)

    def bw(g):
        dx, dgamma, dbeta = kernels.layer_norm_bwd(g, xhat, rstd, gamma)
        return dx, dgamma.astype(p.gamma.dtype), dbeta.astype(p.beta.dtype)

    return make_result(y, (x, p.gamma, p.beta), bw, "layer_norm")


def gelu(x):
    """Exact (erf) Gaussian error linear unit."""
    xd = x.data.copy()
    return make_result(kernels.gelu_fwd(xd), (x,), lambda g: (kernels.gelu_bwd(xd, g),), "gelu")


class MlpParams(Module):
    """Two-layer feed-forward with inner width ``ratio * C``."""

    def __init__(self, channels, ratio=4, rng=None, init="trunc_normal", dtype=None):
        if ratio < 0 or int(ratio) != ratio:
            raise ValueError("mlp ratio must be a non-negative integer")
        self.ratio = int(ratio)
        hidden = self.ratio * channels
        self.fc1 = Projection(channels, hidden, rng=rng, init=init, dtype=dtype) if hidden else None
        self.fc2 = Projection(hidden, channels, rng=rng, init=init, dtype=dtype) if hidden else None

    def __call__(self, x):
        return mlp_forward(x, self)


def mlp_forward(x, p):
    if p.fc1 is None:
        # r == 0 only occurs in cost-accounting what-ifs
        return x * 0.0
    return p.fc2(gelu(p.fc1(x)))


def drop_path(x, rate, training, rng=None):
    """Stochastic depth: zero whole samples of a residual branch with prob ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop path rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode drop_path needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape[0]) < keep).astype(x.dtype) / keep
    mask = mask.reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return mul(x, Tensor(mask, dtype=x.dtype))
