import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asmlp.oracles import finite_difference, max_relative_error, smoothed_ce_loop
from asmlp.tensor import NonFiniteError, ShapeError, Tensor, backward
from asmlp.training import (
    METRICS_HEADER,
    TrainConfig,
    adamw_step,
    config_from_tensors,
    config_tensors,
    init_adamw_state,
    load_model,
    lr_schedule,
    smoothed_cross_entropy,
    synth_dataset,
    train,
)

# -- optimiser


def test_adamw_first_step_moves_against_gradient_sign():
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -0.1, 0.0])]
    new, state = adamw_step(p, g, init_adamw_state(p), lr=0.1, weight_decay=0.0)
    # bias-corrected first step is lr * sign(g)
    np.testing.assert_allclose(new[0], [0.9, -1.9, 3.0], atol=1e-6)
    assert state["step"] == 1


def test_adamw_zero_gradient_contracts_geometrically():
    p = [np.array([2.0, -4.0])]
    state = init_adamw_state(p)
    lr, wd = 0.01, 0.05
    for k in range(1, 6):
        p, state = adamw_step(p, [np.zeros(2)], state, lr=lr, weight_decay=wd)
        np.testing.assert_allclose(np.linalg.norm(p[0]), np.linalg.norm([2.0, -4.0]) * (1 - lr * wd) ** k)


def test_adamw_decay_mask_skips_slots():
    p = [np.ones(2), np.ones(2)]
    new, _ = adamw_step(p, [np.zeros(2)] * 2, init_adamw_state(p), lr=0.1, weight_decay=0.5,
                        decay_mask=[True, False])
    np.testing.assert_allclose(new[0], 0.95)
    np.testing.assert_array_equal(new[1], 1.0)


def test_adamw_converges_on_quadratic():
    target = np.array([3.0, -1.0, 0.5])
    p = [np.zeros(3)]
    state = init_adamw_state(p)
    for _ in range(200):
        p, state = adamw_step(p, [2 * (p[0] - target)], state, lr=0.1, weight_decay=0.0)
    np.testing.assert_allclose(p[0], target, atol=1e-2)


def test_adamw_errors():
    p = [np.ones(2)]
    with pytest.raises(ShapeError):
        adamw_step(p, [np.ones(3)], init_adamw_state(p), lr=0.1)
    with pytest.raises(NonFiniteError):
        adamw_step(p, [np.array([np.nan, 0.0])], init_adamw_state(p), lr=0.1)


def test_adamw_keeps_parameter_dtype():
    p = [np.ones(2, np.float32)]
    new, state = adamw_step(p, [np.ones(2, np.float32)], init_adamw_state(p), lr=0.1)
    assert new[0].dtype == np.float32 and state["m"][0].dtype == np.float64


# -- schedule


def test_lr_schedule_endpoints_and_midpoint():
    assert lr_schedule(0, 100, 10, 1e-3) == 0.0
    assert lr_schedule(10, 100, 10, 1e-3) == pytest.approx(1e-3)
    assert lr_schedule(100, 100, 10, 1e-3) == pytest.approx(0.0)
    assert lr_schedule(55, 100, 10, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2)


@given(total=st.integers(2, 500), frac=st.floats(0, 0.99), base=st.floats(1e-5, 1.0))
def test_lr_schedule_continuous_and_monotone(total, frac, base):
    warm = int(total * frac)
    values = [lr_schedule(s, total, warm, base) for s in range(total + 1)]
    assert all(0.0 <= v <= base * (1 + 1e-12) for v in values)
    after = values[warm:]
    assert all(a >= b - 1e-15 for a, b in zip(after, after[1:]))
    if warm > 0:
        assert abs(values[warm] - values[warm - 1]) <= base / warm + 1e-12


def test_lr_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        lr_schedule(101, 100, 10, 1e-3)
    with pytest.raises(ValueError):
        lr_schedule(5, 100, 101, 1e-3)


# -- loss


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5])
def test_smoothed_ce_uniform_logits_is_log_k(eps):
    loss = smoothed_cross_entropy(Tensor(np.zeros((3, 7)), dtype=np.float64), np.array([0, 3, 6]), eps)
    assert float(loss.data) == pytest.approx(math.log(7), abs=1e-12)


def test_smoothed_ce_confident_correct_logits_approach_zero():
    logits = np.full((2, 4), -50.0)
    logits[[0, 1], [1, 2]] = 50.0
    assert float(smoothed_cross_entropy(Tensor(logits, dtype=np.float64), np.array([1, 2]), 0.0).data) < 1e-12


def test_smoothed_ce_matches_loop_oracle(rng):
    logits, targets = rng.standard_normal((6, 5)) * 3, rng.integers(0, 5, 6)
    got = float(smoothed_cross_entropy(Tensor(logits, dtype=np.float64), targets, 0.1).data)
    assert got == pytest.approx(smoothed_ce_loop(logits, targets, 0.1), abs=1e-12)


def test_smoothed_ce_gradient_matches_finite_differences(rng):
    logits, targets = rng.standard_normal((4, 5)), rng.integers(0, 5, 4)
    t = Tensor(logits, requires_grad=True, dtype=np.float64)
    (g,) = backward(smoothed_cross_entropy(t, targets, 0.1), inputs=[t])
    (num,) = finite_difference(lambda: float(smoothed_cross_entropy(Tensor(logits, dtype=np.float64),
                                                                      targets, 0.1).data), [logits])
    assert max_relative_error([g.reshape(-1)[k] for k in sorted(num)], [num[k] for k in sorted(num)]) < 1e-6


@pytest.mark.parametrize("targets,eps", [([0, 5], 0.1), ([0, -1], 0.1), ([0, 1], 1.0), ([0.5, 1], 0.1)])
def test_smoothed_ce_rejects_invalid(targets, eps):
    with pytest.raises((ValueError, ShapeError)):
        smoothed_cross_entropy(Tensor(np.zeros((2, 5))), np.array(targets), eps)


# -- data


def test_synth_dataset_contract():
    x, y = synth_dataset(4, 512, 32, seed=0)
    assert x.shape == (512, 3, 32, 32) and x.dtype == np.float32
    assert np.bincount(y).tolist() == [128] * 4
    assert set(np.unique(x)) <= {0.0, 1.0}
    assert set((x[:, 0] > 0).sum(axis=(1, 2))) <= {5, 6, 7, 8, 9, 10}  # two lines of five dots, possibly overlapping


def test_synth_dataset_is_deterministic():
    a = synth_dataset(4, 64, 32, seed=5)
    b = synth_dataset(4, 64, 32, seed=5)
    c = synth_dataset(4, 64, 32, seed=6)
    assert a[0].tobytes() == b[0].tobytes() and np.array_equal(a[1], b[1])
    assert a[0].tobytes() != c[0].tobytes()


def _line_dots(img):
    return np.argwhere(img[0] > 0)


def test_synth_dataset_classes_have_their_structure():
    x, y = synth_dataset(4, 64, 32, seed=1)
    for img, label in zip(x, y):
        dots = _line_dots(img)
        cells = {tuple(d // 4) for d in dots}
        rows = {c[0] for c in cells}
        cols = {c[1] for c in cells}
        if label in (0, 2):
            assert len(rows) <= 2  # lines lie along rows
        else:
            assert len(cols) <= 2


@pytest.mark.parametrize("kw", [dict(size=48), dict(classes=5), dict(samples=10)])
def test_synth_dataset_rejects_invalid(kw):
    with pytest.raises(ValueError):
        synth_dataset(**kw)


# -- config and loop


@pytest.mark.parametrize("kw", [dict(warmup_epochs=30), dict(label_smoothing=1.0), dict(batch_size=0),
                                dict(precision="half"), dict(epochs=0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_config_tensors_round_trip():
    cfg = TrainConfig(shift_h=3, shift_v=7, dilation=2, padding="reflect", connection="serial").model_config()
    back = config_from_tensors(config_tensors(cfg))
    assert back.shift == cfg.shift and back.connection == "serial"
    assert back.depths == cfg.depths and back.embed_dim == cfg.embed_dim


def small_cfg(tmp_path, tag, **kw):
    base = dict(embed_dim=8, depths=(1, 1, 1, 1), epochs=4, warmup_epochs=1, samples=32, batch_size=8,
                drop_path_max=0.1, hflip=True,
                metrics_path=str(tmp_path / f"{tag}.csv"), checkpoint_path=str(tmp_path / f"{tag}.ckpt"))
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(tmp_path):
    train(small_cfg(tmp_path, "a"))
    train(small_cfg(tmp_path, "b"))
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert a.decode().splitlines()[0] == METRICS_HEADER
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    full = train(small_cfg(tmp_path, "full"))
    part_cfg = small_cfg(tmp_path, "part")
    train(part_cfg, stop_after=2)
    resumed = train(part_cfg, resume=part_cfg.checkpoint_path)
    assert [r["epoch"] for r in resumed.records] == [3, 4]
    assert (tmp_path / "full.csv").read_bytes() == (tmp_path / "part.csv").read_bytes()
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "part.ckpt").read_bytes()
    for (n, a), (_, b) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), n


def test_resume_rejects_other_seed(tmp_path):
    cfg = small_cfg(tmp_path, "s", epochs=2)
    train(cfg, stop_after=1)
    with pytest.raises(ValueError):
        train(small_cfg(tmp_path, "s", epochs=2, seed=9), resume=cfg.checkpoint_path)


def test_load_model_restores_weights(tmp_path):
    res = train(small_cfg(tmp_path, "m", epochs=2))
    model = load_model(res.checkpoint_path)
    for (n, a), (_, b) in zip(res.model.named_parameters(), model.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), n


def test_non_finite_loss_aborts_with_diagnostic(tmp_path):
    with pytest.raises(NonFiniteError, match="lr="):
        train(small_cfg(tmp_path, "nan", base_lr=1e30, epochs=2, warmup_epochs=0))
