import numpy as np
import pytest

from asmlp.axial_shift import as_mlp_block
from asmlp.backbone import build_model, forward, make_variant
from asmlp.baselines import (
    ResolutionMismatchError,
    TokenMixUnit,
    axial_token_mix,
    global_token_mix,
    make_baseline_block,
    window_token_mix,
)
from asmlp.oracles import axial_mix_loop, global_mix_loop, window_mix_loop
from asmlp.tensor import Tensor, no_grad


def T64(a):
    return Tensor(a, dtype=np.float64)


def test_global_mix_matches_loop(rng):
    x, w = rng.standard_normal((2, 3, 3, 4)), rng.standard_normal((12, 12))
    np.testing.assert_allclose(global_token_mix(T64(x), T64(w)).data, global_mix_loop(x, w), rtol=1e-12, atol=1e-12)


def test_axial_mix_matches_loop(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    wh, wv = rng.standard_normal((5, 5)), rng.standard_normal((4, 4))
    np.testing.assert_allclose(axial_token_mix(T64(x), T64(wh), T64(wv)).data, axial_mix_loop(x, wh, wv),
                               rtol=1e-12, atol=1e-12)


def test_window_mix_matches_loop(rng):
    x, w = rng.standard_normal((1, 2, 6, 4)), rng.standard_normal((4, 4))
    np.testing.assert_allclose(window_token_mix(T64(x), T64(w), 2).data, window_mix_loop(x, w, 2),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind", ["global", "axial"])
def test_resolution_bound_mixers_reject_other_sizes(kind, rng):
    unit = TokenMixUnit(kind, 4, (8, 8), rng=rng)
    with pytest.raises(ResolutionMismatchError):
        unit.branch(Tensor(np.zeros((1, 4, 16, 16), np.float32)))


def test_window_mixer_needs_divisible_map(rng):
    with pytest.raises(ResolutionMismatchError):
        TokenMixUnit("window", 4, (8, 8), window=3, rng=rng)


@pytest.mark.parametrize("kind", ["global", "axial", "window", "(5,1)", "(1,5)"])
def test_baseline_blocks_preserve_shape(kind, rng):
    block = make_baseline_block(kind, (14, 14), 8, rng=rng)
    x = Tensor(rng.standard_normal((1, 8, 14, 14)).astype(np.float32))
    with no_grad():
        assert as_mlp_block(x, block).shape == x.shape


def test_one_axis_shift_baselines_set_sizes(rng):
    assert make_baseline_block("(5,1)", None, 4, rng=rng).unit.shift.s_h == 5
    assert make_baseline_block("(1,5)", None, 4, rng=rng).unit.shift.s_h == 1


def test_global_model_needs_input_size_and_rejects_other_resolution(rng):
    cfg = make_variant("custom", embed_dim=8, depths=(1, 1, 1, 1), num_classes=4, mixer="global")
    with pytest.raises(ValueError):
        build_model(cfg, rng=rng)
    model = build_model(cfg, rng=rng, input_size=32)
    with no_grad():
        assert forward(Tensor(np.zeros((1, 3, 32, 32), np.float32)), model).shape == (1, 4)
        with pytest.raises(ResolutionMismatchError):
            forward(Tensor(np.zeros((1, 3, 64, 64), np.float32)), model)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        make_baseline_block("conv", (8, 8), 4)
