import numpy as np
import pytest
from scipy.stats import norm

from asmlp.layers import LayerNormParams, MlpParams, Projection, drop_path, gelu, layer_norm, trunc_normal
from asmlp.tensor import ShapeError, Tensor, backward, count_macs


def test_layer_norm_normalizes_each_position(rng):
    x = Tensor(rng.standard_normal((2, 6, 3, 4)) * 5 + 2, dtype=np.float64)
    y = layer_norm(x, LayerNormParams(6, dtype=np.float64)).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, rtol=1e-3)


def test_layer_norm_applies_affine(rng):
    p = LayerNormParams(3, dtype=np.float64)
    p.gamma.data[:] = [1.0, 2.0, 3.0]
    p.beta.data[:] = [0.5, 0.0, -0.5]
    x = rng.standard_normal((1, 3, 2, 2))
    base = layer_norm(Tensor(x, dtype=np.float64), LayerNormParams(3, dtype=np.float64)).data
    out = layer_norm(Tensor(x, dtype=np.float64), p).data
    np.testing.assert_allclose(out, base * np.array([1, 2, 3.0]).reshape(1, 3, 1, 1)
                               + np.array([0.5, 0, -0.5]).reshape(1, 3, 1, 1))


def test_layer_norm_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((1, 4, 2, 2))), LayerNormParams(3))


def test_layer_norm_rejects_non_positive_eps():
    with pytest.raises(ValueError):
        LayerNormParams(3, eps=0.0)


def test_gelu_matches_normal_cdf_form(rng):
    x = rng.standard_normal(50) * 3
    np.testing.assert_allclose(gelu(Tensor(x, dtype=np.float64)).data, x * norm.cdf(x), rtol=1e-12, atol=1e-15)


def test_gelu_gradient_at_zero_is_half():
    x = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    (g,) = backward(gelu(x).sum(), inputs=[x])
    assert g[0] == pytest.approx(0.5)


def test_projection_macs_and_bias(rng):
    p = Projection(4, 5, rng=rng, dtype=np.float64)
    with count_macs() as c:
        p(Tensor(np.zeros((2, 4, 3, 3)), dtype=np.float64))
    assert c.total == 2 * 9 * 4 * 5
    assert Projection(4, 5, bias=False, rng=rng).bias is None


def test_trunc_normal_is_bounded(rng):
    w = trunc_normal((200, 200), rng, std=0.02, dtype=np.float64)
    assert np.abs(w).max() <= 0.04
    assert w.std() == pytest.approx(0.02 * 0.88, rel=0.05)  # std of N(0,1) truncated at 2


def test_mlp_hidden_width(rng):
    m = MlpParams(8, ratio=4, rng=rng)
    assert m.fc1.weight.shape == (32, 8) and m.fc2.weight.shape == (8, 32)


def test_drop_path_identity_in_eval_and_scaled_in_training(rng):
    x = Tensor(np.ones((1000, 1, 1, 1)), dtype=np.float64)
    assert drop_path(x, 0.3, training=False) is x
    y = drop_path(x, 0.3, training=True, rng=rng).data.reshape(-1)
    assert set(np.unique(np.round(y, 12))) <= {0.0, round(1 / 0.7, 12)}
    assert y.mean() == pytest.approx(1.0, abs=0.1)
    with pytest.raises(ValueError):
        drop_path(x, 1.0, training=True, rng=rng)
