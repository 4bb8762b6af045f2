import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asmlp.backbone import (
    build_model,
    drop_path_rates,
    forward,
    forward_features,
    make_variant,
    merge_neighbors,
    patch_partition,
    patch_unpartition,
    with_shift,
)
from asmlp.tensor import ShapeError, Tensor, no_grad


def toy_cfg(**kw):
    return make_variant("custom", embed_dim=8, depths=(1, 1, 1, 1), num_classes=4, **kw)


@given(b=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(1, 3), w=st.integers(1, 3), p=st.integers(1, 4))
def test_patch_partition_round_trip(b, c, h, w, p):
    x = np.arange(b * c * h * p * w * p, dtype=np.float64).reshape(b, c, h * p, w * p)
    tokens = patch_partition(Tensor(x), p)
    assert tokens.shape == (b, c * p * p, h, w)
    np.testing.assert_array_equal(patch_unpartition(tokens, p, channels=c).data, x)


def test_patch_partition_token_layout():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    t = patch_partition(Tensor(x, dtype=np.float64), 2).data
    np.testing.assert_array_equal(t[0, :, 0, 0], [0, 1, 4, 5])


def test_merge_neighbors_order_and_odd_rejection():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(merge_neighbors(Tensor(x, dtype=np.float64)).data.reshape(-1), [0, 1, 2, 3])
    with pytest.raises(ShapeError):
        merge_neighbors(Tensor(np.ones((1, 1, 3, 2))))


@pytest.mark.parametrize("name,dim,depths", [("tiny", 96, (2, 2, 6, 2)), ("small", 96, (2, 2, 18, 2)),
                                              ("base", 128, (2, 2, 18, 2)), ("mobile", 64, (2, 2, 2, 2))])
def test_variant_table(name, dim, depths):
    cfg = make_variant(name)
    assert cfg.embed_dim == dim and cfg.depths == depths
    assert cfg.stage_dims() == [dim, 2 * dim, 4 * dim, 8 * dim]
    assert cfg.shift.s_h == cfg.shift.s_v == 5


def test_unknown_variant_and_bad_depths():
    with pytest.raises(ValueError):
        make_variant("huge")
    with pytest.raises(ValueError):
        make_variant("custom", depths=(1, 1, 1))


def test_drop_path_rates_are_linear():
    rates = drop_path_rates(make_variant("tiny"))
    assert len(rates) == 12 and rates[0] == 0.0 and rates[-1] == pytest.approx(0.2)
    assert np.allclose(np.diff(rates), 0.2 / 11)


def test_forward_shapes_per_stage(rng):
    model = build_model(toy_cfg(), rng=rng)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
    with no_grad():
        feats = forward_features(x, model)
        logits = forward(x, model)
    assert [f.shape for f in feats] == [(2, 8, 8, 8), (2, 16, 4, 4), (2, 32, 2, 2), (2, 64, 1, 1)]
    assert logits.shape == (2, 4) and np.isfinite(logits.data).all()


@pytest.mark.parametrize("size", [64, 96])
def test_forward_accepts_other_resolutions(size, rng):
    model = build_model(toy_cfg(), rng=rng)
    with no_grad():
        assert forward(Tensor(np.zeros((1, 3, size, size), np.float32)), model).shape == (1, 4)


@pytest.mark.parametrize("shape", [(1, 3, 30, 32), (1, 1, 32, 32), (3, 32, 32)])
def test_forward_rejects_bad_images(shape, rng):
    model = build_model(toy_cfg(), rng=rng)
    with pytest.raises(ShapeError):
        forward(Tensor(np.zeros(shape, np.float32)), model)


def test_with_shift_replaces_fields():
    cfg = with_shift(make_variant("tiny"), s_h=1, s_v=1, padding="reflect")
    assert (cfg.shift.s_h, cfg.shift.s_v, cfg.shift.padding) == (1, 1, "reflect")
    assert make_variant("tiny").shift.s_h == 5


def test_training_forward_is_deterministic_for_seeded_rng(rng):
    model = build_model(toy_cfg(drop_path_max=0.5), rng=rng)
    x = Tensor(rng.standard_normal((4, 3, 32, 32)).astype(np.float32))
    with no_grad():
        a = forward(x, model, training=True, rng=np.random.default_rng(3)).data
        b = forward(x, model, training=True, rng=np.random.default_rng(3)).data
    np.testing.assert_array_equal(a, b)
