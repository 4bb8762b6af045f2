"""Property suites shared by the ``verify`` command and the test-suite.

Each suite returns a :class:`SuiteReport` whose ``lines()`` give one line per
check plus a summary; ``ok`` is true iff every check passed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels, oracles
from .analysis import (
    build_for_counting,
    formula_flops,
    formula_params,
    measure_model,
    measured_unit_macs,
    receptive_field_probe,
)
from .axial_shift import (
    PADDING_MODES,
    AxialShiftUnitParams,
    BlockParams,
    ShiftConfig,
    as_mlp_block,
    axial_shift_unit,
    sampling_locations,
    shift,
)
from .backbone import PatchMergingParams, build_model, forward, make_variant, patch_merging
from .baselines import TokenMixUnit
from .layers import LayerNormParams, Projection, gelu
from .tensor import WIDE, Tensor, backward, no_grad, precision, tensor

SHIFT_SIZES = (1, 3, 5, 7, 9)
DILATIONS = (1, 2)
CHANNELS = (3, 5, 8, 16)
SEEDS_PER_CONFIG = 5
RFIELD_CASES = ((3, 1), (5, 1), (7, 1), (3, 2), (5, 2))
LAYER_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteReport:
    suite: str
    checks: list = field(default_factory=list)
    summary: str = ""

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def lines(self):
        out = [f"  [{'ok' if c.passed else 'FAIL'}] {c.name}{': ' + c.detail if c.detail else ''}"
               for c in self.checks]
        return out + [self.summary or f"{self.suite}: {sum(c.passed for c in self.checks)}/{len(self.checks)} passed"]


# -- oracle equivalence -------------------------------------------------------------


def shift_grid():
    return list(itertools.product(SHIFT_SIZES, DILATIONS, PADDING_MODES, CHANNELS))


def oracle_case(s, d, mode, C, seed, impl="composed"):
    """Compare one random input against the index-map oracle on both axes.

    Returns ``None`` on exact agreement, otherwise a description.
    """
    rng = np.random.default_rng(seed)
    b = int(rng.integers(1, 3))
    h, w = (int(v) for v in rng.integers(9, 14, size=2))
    x = rng.standard_normal((b, C, h, w))
    cfg = ShiftConfig(s_h=s, s_v=s, dilation=d, padding=mode)
    for axis in ("width", "height"):
        got = shift(tensor(x, dtype=WIDE), axis, cfg, impl=impl).data
        want = oracles.shift_index_map(x, axis, s, d, mode)
        if not np.array_equal(got, want):
            bad = np.argwhere(got != want)[0]
            return f"axis={axis} shape={x.shape} first mismatch at {tuple(int(i) for i in bad)}"
    return None


def run_oracle_suite(seed=0, impls=("composed",)):
    checks = []
    exact = 0
    grid = shift_grid()
    for n, (s, d, mode, C) in enumerate(grid):
        failures = []
        for impl in impls:
            for k in range(SEEDS_PER_CONFIG):
                msg = oracle_case(s, d, mode, C, [seed, n, k], impl)
                if msg:
                    failures.append(f"{impl} seed#{k}: {msg}")
        if failures:
            checks.append(Check(f"s={s} d={d} padding={mode} C={C}", False, failures[0]))
        else:
            exact += 1
    report = SuiteReport("oracle", checks)
    if not checks:
        checks.append(Check(f"{len(grid)} configs x {SEEDS_PER_CONFIG} seeds, impl {'+'.join(impls)}", True))
    report.summary = f"oracle: {exact}/{len(grid)} configs exact"
    return report


# -- gradient checks ----------------------------------------------------------------


def gradcheck(fn, inputs, step=1e-5, max_coords=12, rng=None):
    """Max relative error between tape gradients and central differences.

    ``fn()`` must return a scalar Tensor built from ``inputs`` (Tensors that
    require grad). At most ``max_coords`` entries per input are probed.
    """
    rng = rng or np.random.default_rng(0)
    loss = fn()
    analytic = backward(loss, inputs=list(inputs))
    coords = []
    for t in inputs:
        n = t.data.size
        coords.append(list(range(n)) if n <= max_coords else sorted(rng.choice(n, max_coords, replace=False)))

    def f():
        with no_grad():
            return float(fn().data)

    numeric = oracles.finite_difference(f, [t.data for t in inputs], step=step, coords=coords)
    a_vals, n_vals = [], []
    for g, num, idx in zip(analytic, numeric, coords):
        flat = g.reshape(-1)
        for i in idx:
            a_vals.append(float(flat[i]))
            n_vals.append(num[i])
    return oracles.max_relative_error(a_vals, n_vals)


def _weighted_sum(out, weights):
    return (out * Tensor(weights)).sum()


def _param_inputs(module, x=None):
    params = module.parameters()
    return ([x] if x is not None else []) + params


def _layer_cases(rng):
    """(name, fn, inputs) triples for the per-layer gradient checks."""
    cases = []

    def xin(shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    x = xin((2, 6, 5, 4))
    ln = LayerNormParams(6)
    ln.gamma.data = rng.uniform(0.5, 1.5, 6)
    ln.beta.data = rng.standard_normal(6)
    r = rng.standard_normal((2, 6, 5, 4))
    cases.append(("layer_norm", lambda: _weighted_sum(ln(x), r), [x, ln.gamma, ln.beta]))

    x2 = xin((2, 6, 5, 4))
    cases.append(("gelu", lambda: _weighted_sum(gelu(x2), r), [x2]))

    x3 = xin((2, 6, 5, 4))
    proj = Projection(6, 7, rng=rng)
    proj.bias.data = rng.standard_normal(7)
    r7 = rng.standard_normal((2, 7, 5, 4))
    cases.append(("projection", lambda: _weighted_sum(proj(x3), r7), [x3, proj.weight, proj.bias]))

    for mode in PADDING_MODES:
        for impl in ("composed", "kernel"):
            xs = xin((1, 5, 6, 7))
            cfg = ShiftConfig(3, 5, dilation=1, padding=mode)
            rs = rng.standard_normal((1, 5, 6, 7))
            cases.append((f"shift[{mode},{impl}]",
                          lambda xs=xs, cfg=cfg, rs=rs, impl=impl:
                          _weighted_sum(shift(shift(xs, "width", cfg, impl), "height", cfg, impl), rs),
                          [xs]))

    for connection in ("parallel", "serial"):
        xu = xin((2, 8, 6, 6))
        unit = AxialShiftUnitParams(8, ShiftConfig(3, 5), connection, rng=rng)
        _randomize_affine(unit, rng)
        ru = rng.standard_normal((2, 8, 6, 6))
        cases.append((f"axial_shift_unit[{connection}]",
                      lambda xu=xu, unit=unit, ru=ru: _weighted_sum(axial_shift_unit(xu, unit), ru),
                      _param_inputs(unit, xu)))

    xb = xin((2, 8, 6, 6))
    block = BlockParams(8, ShiftConfig(5, 3, dilation=2, padding="reflect"), mlp_ratio=2, rng=rng)
    _randomize_affine(block, rng)
    rb = rng.standard_normal((2, 8, 6, 6))
    cases.append(("as_mlp_block", lambda: _weighted_sum(as_mlp_block(xb, block), rb), _param_inputs(block, xb)))

    xm = xin((2, 4, 6, 6))
    merge = PatchMergingParams(4, rng=rng)
    _randomize_affine(merge, rng)
    rm = rng.standard_normal((2, 8, 3, 3))
    cases.append(("patch_merging", lambda: _weighted_sum(patch_merging(xm, merge), rm), _param_inputs(merge, xm)))

    for kind in ("global", "axial", "window"):
        xt = xin((1, 4, 7, 7))
        mix = TokenMixUnit(kind, 4, (7, 7), window=7, rng=rng)
        _randomize_affine(mix, rng)
        rt = rng.standard_normal((1, 4, 7, 7))
        cases.append((f"token_mix[{kind}]", lambda xt=xt, mix=mix, rt=rt: _weighted_sum(mix.branch(xt), rt),
                      _param_inputs(mix, xt)))

    from .training import smoothed_cross_entropy

    logits = xin((5, 4))
    targets = rng.integers(0, 4, size=5)
    cases.append(("smoothed_cross_entropy", lambda: smoothed_cross_entropy(logits, targets, 0.1), [logits]))
    return cases


def _randomize_affine(module, rng):
    """Move LayerNorm/bias parameters off their trivial init so they are exercised."""
    for name, p in module.named_parameters():
        if p.ndim == 1:
            base = 1.0 if name.endswith("gamma") else 0.0
            p.data = (base + 0.3 * rng.standard_normal(p.shape)).astype(p.dtype)
        else:
            p.data = (p.data * 10.0).astype(p.dtype)


def toy_model_case(rng, channels=8, size=32):
    cfg = make_variant("custom", embed_dim=channels, depths=(1, 1, 2, 1), num_classes=4, drop_path_max=0.0)
    model = build_model(cfg, rng=rng)
    _randomize_affine(model, rng)
    image = Tensor(rng.standard_normal((2, 3, size, size)), requires_grad=True)
    targets = rng.integers(0, 4, size=2)
    from .training import smoothed_cross_entropy

    return (lambda: smoothed_cross_entropy(forward(image, model), targets, 0.1)), [image] + model.parameters()


def run_gradcheck_suite(seed=0, include_model=True):
    rng = np.random.default_rng(seed)
    checks = []
    worst_layer = 0.0
    with precision("wide"):
        for name, fn, inputs in _layer_cases(rng):
            err = gradcheck(fn, inputs, rng=rng)
            worst_layer = max(worst_layer, err)
            checks.append(Check(name, err < LAYER_TOL, f"max rel err {err:.2e}"))
        model_err = None
        if include_model:
            fn, inputs = toy_model_case(rng)
            model_err = gradcheck(fn, inputs, max_coords=3, rng=rng)
            checks.append(Check("toy model", model_err < MODEL_TOL, f"max rel err {model_err:.2e}"))
    report = SuiteReport("gradcheck", checks)
    tail = f", toy model {model_err:.2e}" if model_err is not None else ""
    report.summary = f"gradcheck: {sum(c.passed for c in checks)}/{len(checks)} passed, max rel err {worst_layer:.2e} (layers){tail}"
    return report


# -- counts ---------------------------------------------------------------------------


def reconcile_variant(name, size=224):
    cfg = make_variant(name)
    model = build_for_counting(cfg)
    measured = measure_model(model, size)
    aux = measure_model(model, include_aux=True)
    return {
        "weights": (measured.total_params, formula_params(cfg).total_params),
        "aux": (aux.total_params, formula_params(cfg, include_aux=True).total_params),
        "macs": (measured.total_macs, formula_flops(cfg, size).total_macs),
        "stage_macs": [(e.stage, e.component, e.macs, formula_flops(cfg, size).get(e.stage, e.component).macs)
                       for e in measured.entries],
    }


def unit_law_triples(seed, n=10):
    rng = np.random.default_rng(seed)
    triples = []
    for _ in range(n):
        triples.append((int(rng.integers(3, 12)), int(rng.integers(3, 12)), int(rng.integers(9, 24))))
    return triples


def check_unit_law(h, w, C):
    """MACs of one unit for every (s, d) in the grid; all must equal 4hwC^2."""
    want = 4 * h * w * C * C
    seen = set()
    for s, d in itertools.product(SHIFT_SIZES, DILATIONS):
        unit = AxialShiftUnitParams(C, ShiftConfig(s, s, dilation=d, padding="zero"), init="zeros")
        seen.add(measured_unit_macs(unit, (1, C, h, w)))
    return want, seen


def run_counts_suite(seed=0, variants=("tiny", "small", "base")):
    checks = []
    for name in variants:
        r = reconcile_variant(name)
        stage_ok = all(m == f for *_, m, f in r["stage_macs"])
        ok = r["weights"][0] == r["weights"][1] and r["aux"][0] == r["aux"][1] and r["macs"][0] == r["macs"][1] and stage_ok
        checks.append(Check(
            name, ok,
            f"weights {r['weights'][0]:,} (closed form {r['weights'][1]:,}), "
            f"with aux {r['aux'][0]:,} ~ {r['aux'][0] / 1e6:.1f}M, "
            f"MACs {r['macs'][0]:,} (closed form {r['macs'][1]:,}) ~ {r['macs'][0] / 1e9:.1f}G",
        ))
    law_ok = 0
    triples = unit_law_triples(seed)
    for h, w, C in triples:
        want, seen = check_unit_law(h, w, C)
        passed = seen == {want}
        law_ok += passed
        if not passed:
            checks.append(Check(f"unit MACs h={h} w={w} C={C}", False, f"expected {want}, saw {sorted(seen)}"))
    checks.append(Check("unit MACs == 4hwC^2", law_ok == len(triples),
                        f"{law_ok}/{len(triples)} shapes, all s in {SHIFT_SIZES}, d in {DILATIONS}"))
    report = SuiteReport("counts", checks)
    report.summary = f"counts: {sum(c.passed for c in checks)}/{len(checks)} reconcile exactly"
    return report


# -- receptive field ------------------------------------------------------------------


def unit_probe(s, d, channels=21, size=13, seed=0, depth=1):
    """Probe ``depth`` stacked units; return ``(measured, expected)`` offset sets."""
    rng = np.random.default_rng(seed)
    cfg = ShiftConfig(s, s, dilation=d, padding="zero")
    units = [AxialShiftUnitParams(channels, cfg, rng=rng, dtype=WIDE) for _ in range(depth)]
    for u in units:
        _randomize_affine(u, rng)

    def fn(x):
        for u in units:
            x = axial_shift_unit(x, u)
        return x

    centre = (size // 2, size // 2)
    measured = receptive_field_probe(fn, (channels, size, size), centre, rng=rng, dtype=WIDE)
    expected = {(0, 0)}
    for _ in range(depth):
        expected = oracles.minkowski_sum(expected, sampling_locations(cfg))
    return measured, expected


def run_rfield_suite(seed=0):
    checks = []
    for s, d in RFIELD_CASES:
        got, want = unit_probe(s, d, seed=seed)
        checks.append(Check(f"one unit s={s} d={d}", got == want, f"{len(got)} cells (expected {len(want)})"))
    for s, d in ((3, 1), (3, 2)):
        got, want = unit_probe(s, d, seed=seed, depth=2)
        checks.append(Check(f"two units s={s} d={d}", got == want, f"{len(got)} cells (expected {len(want)})"))
    report = SuiteReport("rfield", checks)
    report.summary = f"rfield: {sum(c.passed for c in checks)}/{len(checks)} probes match"
    return report


SUITES = {
    "oracle": run_oracle_suite,
    "gradcheck": run_gradcheck_suite,
    "counts": run_counts_suite,
    "rfield": run_rfield_suite,
}


def run_suite(name, seed=0):
    if name == "all":
        return [fn(seed=seed) for fn in SUITES.values()]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)} or 'all'")
    return [SUITES[name](seed=seed)]


def backend_names():
    return kernels.available_backends()
