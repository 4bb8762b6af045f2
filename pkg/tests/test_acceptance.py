"""The ten acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary (section "acceptance criteria") and echoed to stdout. Run alone with
``python3 -m pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""
import sys

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from asmlp import checkpoint
from asmlp.analysis import build_for_counting, formula_flops, formula_params, measure_model
from asmlp.axial_shift import ShiftConfig, shift
from asmlp.backbone import build_model, forward, forward_features, make_variant
from asmlp.baselines import ResolutionMismatchError
from asmlp.bench import shift_size_sweep, time_op
from asmlp.tensor import Tensor, count_macs, no_grad
from asmlp.training import TrainConfig, load_model, train
from asmlp.verify import (
    DILATIONS,
    SHIFT_SIZES,
    check_unit_law,
    run_gradcheck_suite,
    run_oracle_suite,
    run_rfield_suite,
    shift_grid,
    unit_law_triples,
)

pytestmark = pytest.mark.acceptance


def record(number, title, passed, detail):
    ACCEPTANCE_LINES.append((number, title, bool(passed), detail))
    print(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
    assert passed, detail


def test_01_shift_matches_index_map_oracle():
    report = run_oracle_suite(seed=0, impls=("composed", "kernel"))
    record(1, "shift oracle equivalence", report.ok and len(shift_grid()) == 160,
           f"{report.summary} (5 seeds each, composed and kernel paths)")


PUBLISHED_PARAMS = {"tiny": (28, 0), "small": (50, 0), "base": (88, 0), "mobile": (9.6, 1)}


def test_02_parameter_counts():
    notes, ok = [], True
    for name, (want, digits) in PUBLISHED_PARAMS.items():
        cfg = make_variant(name)
        model = build_for_counting(cfg)
        aux = measure_model(model, include_aux=True).total_params
        weights = measure_model(model).total_params
        closed = formula_params(cfg).total_params
        rounded = round(aux / 1e6, digits)
        good = rounded == want and weights == closed
        ok &= good
        notes.append(f"{name} {aux:,}->{rounded}M (want {want}M), weights {weights:,}"
                     f"{'=' if weights == closed else '!='}{closed:,}")
    record(2, "parameter counts", ok, "; ".join(notes))


PUBLISHED_FLOPS = {"tiny": 4.4, "small": 8.5, "base": 15.2}


def test_03_flops():
    notes, ok = [], True
    for name, want in PUBLISHED_FLOPS.items():
        cfg = make_variant(name)
        measured = measure_model(build_for_counting(cfg), 224).total_macs
        closed = formula_flops(cfg, 224).total_macs
        rounded = round(measured / 1e9, 1)
        good = measured == closed and rounded == want
        ok &= good
        notes.append(f"{name} {measured:,}{'=' if measured == closed else '!='}closed form, "
                     f"{rounded}G (want {want}G)")
    record(3, "FLOPs at 224", ok, "; ".join(notes))


def test_04_unit_complexity_law():
    bad = []
    triples = unit_law_triples(seed=0)
    for h, w, C in triples:
        want, seen = check_unit_law(h, w, C)
        if seen != {want}:
            bad.append(f"h={h} w={w} C={C}: {sorted(seen)} != {want}")
    record(4, "unit MACs == 4hwC^2", not bad and len(triples) == 10,
           f"{len(triples) - len(bad)}/{len(triples)} shapes exact for s in {SHIFT_SIZES}, d in {DILATIONS}"
           + (f"; {bad[0]}" if bad else ""))


def test_05_gradient_checks():
    report = run_gradcheck_suite(seed=0)
    failing = [c.name for c in report.checks if not c.passed]
    record(5, "gradient checks", report.ok, report.summary + (f"; failing {failing}" if failing else ""))


def test_06_receptive_field():
    report = run_rfield_suite(seed=0)
    record(6, "receptive field probes", report.ok, report.summary)


# -- toy training ---------------------------------------------------------------------


def toy_config(tmp, tag, **kw):
    return TrainConfig(metrics_path=str(tmp / f"{tag}.csv"), checkpoint_path=str(tmp / f"{tag}.ckpt"), **kw)


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("toy")
    first = train(toy_config(tmp, "s5a", shift_h=5, shift_v=5))
    second = train(toy_config(tmp, "s5b", shift_h=5, shift_v=5))
    channel_only = train(toy_config(tmp, "s1", shift_h=1, shift_v=1))
    return tmp, first, second, channel_only


def test_07_toy_training(toy_runs):
    tmp, first, second, channel_only = toy_runs
    same = (tmp / "s5a.csv").read_bytes() == (tmp / "s5b.csv").read_bytes()
    acc5, acc1 = first.final_accuracy, channel_only.final_accuracy
    epochs = len(first.records)
    record(7, "toy training", acc5 > 0.95 and epochs <= 30 and same and acc1 < 0.6,
           f"s=(5,5) train acc {acc5:.4f} (> 0.95) after {epochs} epochs, "
           f"{'identical' if same else 'DIFFERENT'} metrics on rerun; s=(1,1) {acc1:.4f} (< 0.6)")


def test_08_resolution_transfer(toy_runs):
    tmp = toy_runs[0]
    model = load_model(str(tmp / "s5a.ckpt"))
    big = Tensor(np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32))
    with no_grad():
        feats = [f.shape for f in forward_features(big, model)]
        logits = forward(big, model)
    shapes_ok = feats == [(2, 16, 16, 16), (2, 32, 8, 8), (2, 64, 4, 4), (2, 128, 2, 2)] and logits.shape == (2, 4)
    finite = bool(np.isfinite(logits.data).all())
    cfg = make_variant("custom", embed_dim=16, depths=(1, 1, 2, 1), num_classes=4, mixer="global")
    glob = build_model(cfg, rng=np.random.default_rng(0), input_size=32)
    try:
        with no_grad():
            forward(big, glob)
        rejected = "accepted 64x64"
    except ResolutionMismatchError as exc:
        rejected = f"rejected: {exc}"
    record(8, "resolution transfer", shapes_ok and finite and rejected.startswith("rejected"),
           f"axial-shift model at 64x64 -> stages {feats}, logits {logits.shape}; global-mixing model {rejected}")


def test_09_persistence(tmp_path):
    rng = np.random.default_rng(0)
    model = build_model(make_variant("custom", embed_dim=16, depths=(1, 1, 2, 1), num_classes=4), rng=rng)
    state = {k: v for k, v in model.state_dict().items()}
    checkpoint.save(tmp_path / "w.ckpt", state)
    back, _ = checkpoint.load(tmp_path / "w.ckpt")
    bit_exact = list(back) == list(state) and all(
        back[k].dtype == state[k].dtype and back[k].tobytes() == state[k].tobytes() for k in state)

    kw = dict(samples=64, epochs=4, warmup_epochs=1, hflip=True, drop_path_max=0.1)
    full_cfg = toy_config(tmp_path, "full", **kw)
    part_cfg = toy_config(tmp_path, "part", **kw)
    train(full_cfg)
    train(part_cfg, stop_after=2)
    train(part_cfg, resume=part_cfg.checkpoint_path)
    same_metrics = (tmp_path / "full.csv").read_bytes() == (tmp_path / "part.csv").read_bytes()
    same_ckpt = (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "part.ckpt").read_bytes()
    record(9, "persistence", bit_exact and same_metrics and same_ckpt,
           f"{len(state)} tensors round-trip {'bit-exact' if bit_exact else 'WITH DIFFERENCES'}; "
           f"resume at epoch 2 of 4: metrics {'identical' if same_metrics else 'differ'}, "
           f"final checkpoint {'identical' if same_ckpt else 'differs'}")


def test_10_shift_cost():
    shape = (1, 96, 56, 56)
    x = Tensor(np.random.default_rng(0).standard_normal(shape).astype(np.float32))
    macs = {}
    for s in SHIFT_SIZES:
        cfg = ShiftConfig(s, s)
        with count_macs() as c:
            shift(shift(x, "width", cfg), "height", cfg)
        macs[s] = c.total
    timings, cv = shift_size_sweep(shape, repeats=15)
    assert all(time_op("axial-shift", shape, s, repeats=1).macs == 0 for s in SHIFT_SIZES)
    medians = ", ".join(f"s={t.shift_size}: {t.median_s * 1e3:.2f}ms" for t in timings)
    record(10, "shift cost", set(macs.values()) == {0} and cv <= 0.25,
           f"MACs {sorted(set(macs.values()))} for all s; median times {medians}; CV {cv:.3f} (<= 0.25)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
