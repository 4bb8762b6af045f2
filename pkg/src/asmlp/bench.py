"""Wall-clock and MAC measurements for the shift, the unit and the block."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .axial_shift import AxialShiftUnitParams, BlockParams, ShiftConfig, as_mlp_block, axial_shift_unit, shift
from .tensor import ShapeError, Tensor, count_macs, no_grad

OPS = ("axial-shift", "unit", "block")
SWEEP_SIZES = (1, 3, 5, 7, 9)


@dataclass
class Timing:
    op: str
    shape: tuple
    shift_size: int
    macs: int
    median_s: float
    min_s: float
    repeats: int


def parse_shape(text):
    """``"1x96x56x56"`` -> ``(1, 96, 56, 56)``."""
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ShapeError(f"shape must look like BxCxHxW, got {text!r}") from exc
    if len(dims) != 4 or min(dims) < 1:
        raise ShapeError(f"shape must be four positive integers BxCxHxW, got {text!r}")
    return dims


def _make_op(op, shape, s, rng):
    C = shape[1]
    cfg = ShiftConfig(s, s)
    if op == "axial-shift":
        return lambda x: shift(shift(x, "width", cfg), "height", cfg)
    if op == "unit":
        unit = AxialShiftUnitParams(C, cfg, rng=rng)
        return lambda x: axial_shift_unit(x, unit)
    if op == "block":
        block = BlockParams(C, cfg, rng=rng)
        return lambda x: as_mlp_block(x, block)
    raise ValueError(f"unknown op {op!r}; expected one of {OPS}")


def time_op(op, shape, shift_size=5, repeats=10, warmup=2, seed=0):
    rng = np.random.default_rng(seed)
    fn = _make_op(op, shape, shift_size, rng)
    x = Tensor(rng.standard_normal(shape).astype(np.float32))
    with no_grad():
        with count_macs() as counter:
            fn(x)
        for _ in range(warmup):
            fn(x)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(x)
            times.append(time.perf_counter() - t0)
    return Timing(op, tuple(shape), shift_size, counter.total, statistics.median(times), min(times), repeats)


def shift_size_sweep(shape, repeats=10, op="axial-shift", sizes=SWEEP_SIZES, rounds=3):
    """Median time per shift size and the coefficient of variation across sizes.

    Sizes are measured in interleaved rounds so slow drifts of the machine
    affect every size alike; each size keeps its best round's median.
    """
    best = {s: None for s in sizes}
    for _ in range(rounds):
        for s in sizes:
            t = time_op(op, shape, s, repeats)
            if best[s] is None or t.median_s < best[s].median_s:
                best[s] = t
    medians = np.array([best[s].median_s for s in sizes])
    cv = float(medians.std() / medians.mean())
    return [best[s] for s in sizes], cv


def backend_name():
    return kernels.BACKEND
