"""Axial-shift MLP backbone on a small numpy autodiff core."""
from .analysis import complexity_compare, formula_flops, formula_params, measure_model, receptive_field_probe
from .axial_shift import (
    AxialShiftUnitParams,
    BlockParams,
    ShiftConfig,
    as_mlp_block,
    axial_shift_unit,
    sampling_locations,
    shift,
)
from .backbone import VARIANT_NAMES, VariantConfig, build_model, forward, make_variant, with_shift
from .baselines import ResolutionMismatchError, TokenMixUnit, make_baseline_block
from .checkpoint import CheckpointError
from .tensor import (
    NARROW,
    WIDE,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    count_macs,
    no_grad,
    precision,
)
from .training import TrainConfig, adamw_step, lr_schedule, smoothed_cross_entropy, synth_dataset, train

__version__ = "0.1.0"

__all__ = [
    "AxialShiftUnitParams", "BlockParams", "CheckpointError", "NARROW", "NonFiniteError",
    "ResolutionMismatchError", "ShapeError", "ShiftConfig", "Tensor", "TokenMixUnit", "TrainConfig",
    "VARIANT_NAMES", "VariantConfig", "WIDE", "adamw_step", "as_mlp_block", "axial_shift_unit",
    "backward", "build_model", "complexity_compare", "count_macs", "formula_flops", "formula_params",
    "forward", "lr_schedule", "make_baseline_block", "make_variant", "measure_model", "no_grad",
    "precision", "receptive_field_probe", "sampling_locations", "shift", "smoothed_cross_entropy",
    "synth_dataset", "train", "with_shift",
]
