"""Frozen fixtures and the documentation lint.

Layout: ``<root>/<suite>/<case>/{inputs,expected,meta}``. ``inputs`` and
``expected`` use the checkpoint container; ``meta`` is JSON with the seed,
generator name, a ``kind`` (``derived`` from an oracle, ``trivial`` from a
closed-form identity) and the comparison tolerance.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np

from . import checkpoint, oracles
from .analysis import complexity_compare, formula_flops, formula_params
from .axial_shift import PADDING_MODES, ShiftConfig, shift
from .backbone import make_variant
from .tensor import WIDE, tensor

DEFAULT_SEED = 20240
FIXTURE_KINDS = ("derived", "trivial")


@dataclass
class FixtureCase:
    suite: str
    name: str
    inputs: dict
    expected: dict
    kind: str
    generator: str
    seed: int | None = None
    tolerance: float = 0.0
    claims: tuple = ()

    def meta(self):
        return {
            "suite": self.suite,
            "case": self.name,
            "kind": self.kind,
            "generator": self.generator,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "claims": list(self.claims),
        }


# -- generators -----------------------------------------------------------------------


def _shift_cases(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 8, 9, 10))
    for s in (1, 3, 5, 7, 9):
        for d in (1, 2):
            for mode in PADDING_MODES:
                expected = {axis: oracles.shift_index_map(x, axis, s, d, mode) for axis in ("width", "height")}
                yield FixtureCase("shift-oracle", f"s{s}-d{d}-{mode}", {"x": x}, expected, "derived",
                                  "oracles.shift_index_map", seed)


def _identity_cases(seed):
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((2, 5, 6, 7))
    for d in (1, 2):
        for mode in PADDING_MODES:
            yield FixtureCase("shift-identity", f"d{d}-{mode}", {"x": x}, {"width": x, "height": x}, "trivial",
                              "s=1 leaves every channel in place", seed + 1)


def _matmul_cases(seed):
    rng = np.random.default_rng(seed + 2)
    x = rng.standard_normal((2, 5, 3, 4))
    w = rng.standard_normal((6, 5))
    b = rng.standard_normal(6)
    yield FixtureCase("matmul", "loop-5to6", {"x": x, "w": w, "b": b},
                      {"y": oracles.matmul_channels_loop(x, w, b)}, "derived", "oracles.matmul_channels_loop",
                      seed + 2, tolerance=1e-12)


def _loss_cases(seed):
    rng = np.random.default_rng(seed + 3)
    logits = rng.standard_normal((6, 4)) * 3.0
    targets = rng.integers(0, 4, size=6)
    eps = 0.1
    loss = oracles.smoothed_ce_loop(logits, targets, eps)
    work = logits.copy()
    grad = oracles.finite_difference(lambda: oracles.smoothed_ce_loop(work, targets, eps), [work], step=1e-5)[0]
    fd = np.array([grad[i] for i in range(work.size)]).reshape(work.shape)
    yield FixtureCase("loss", "smoothed-ce", {"logits": logits, "targets": targets.astype(np.float64),
                                              "smoothing": np.asarray(eps)},
                      {"loss": np.asarray(loss), "grad_fd": fd}, "derived",
                      "oracles.smoothed_ce_loop + central differences", seed + 3, tolerance=1e-8)


def _closed_form_cases():
    for name in ("tiny", "small", "base", "mobile"):
        cfg = make_variant(name)
        weights = formula_params(cfg)
        aux = formula_params(cfg, include_aux=True)
        flops = formula_flops(cfg, 224)
        dims = np.asarray(cfg.stage_dims(), dtype=np.float64)
        expected = {
            "weights_by_entry": np.asarray([e.params for e in weights.entries], dtype=np.float64),
            "weights_total": np.asarray(weights.total_params, dtype=np.float64),
            "aux_total": np.asarray(aux.total_params, dtype=np.float64),
            "macs_by_entry": np.asarray([e.macs for e in flops.entries], dtype=np.float64),
            "macs_total_224": np.asarray(flops.total_macs, dtype=np.float64),
        }
        claims = [f"{weights.total_params:,}", f"{aux.total_params:,}", f"{flops.total_macs:,}",
                  f"{aux.total_params / 1e6:.1f}M", f"{flops.total_macs / 1e9:.1f}G"]
        yield FixtureCase("closed-forms", name,
                          {"embed_dim": dims[:1], "depths": np.asarray(cfg.depths, dtype=np.float64),
                           "mlp_ratio": np.asarray(float(cfg.mlp_ratio))},
                          expected, "derived", "analysis.formula_params / formula_flops", None, claims=claims)


def _complexity_cases():
    h = w = 56
    C, M = 96, 7
    cmp_ = complexity_compare(h, w, C, M)
    yield FixtureCase("complexity", "unit-96x56x56", {"hwcm": np.asarray([h, w, C, M], dtype=np.float64)},
                      {k: np.asarray(v, dtype=np.float64) for k, v in cmp_.items()}, "trivial",
                      "analysis.complexity_compare", None, claims=(f"{cmp_['as']:,}",))


def generate_cases(seed=DEFAULT_SEED):
    yield from _shift_cases(seed)
    yield from _identity_cases(seed)
    yield from _matmul_cases(seed)
    yield from _loss_cases(seed)
    yield from _closed_form_cases()
    yield from _complexity_cases()


# -- library replay -----------------------------------------------------------------


def replay(case):
    """Recompute ``case`` with the library's own code paths (not the oracles)."""
    if case.suite in ("shift-oracle", "shift-identity"):
        s, d, mode = _parse_shift_name(case)
        cfg = ShiftConfig(s, s, dilation=d, padding=mode)
        x = tensor(case.inputs["x"], dtype=WIDE)
        out = {}
        for axis in ("width", "height"):
            composed = shift(x, axis, cfg, impl="composed").data
            fused = shift(x, axis, cfg, impl="kernel").data
            # a disagreement between the two paths surfaces as a mismatch
            out[axis] = composed if np.array_equal(composed, fused) else np.full_like(composed, np.nan)
        return out
    if case.suite == "matmul":
        from .tensor import matmul_channels

        i = case.inputs
        return {"y": matmul_channels(tensor(i["x"], dtype=WIDE), tensor(i["w"], dtype=WIDE),
                                     tensor(i["b"], dtype=WIDE)).data}
    if case.suite == "loss":
        from .tensor import Tensor, backward
        from .training import smoothed_cross_entropy

        logits = Tensor(case.inputs["logits"], requires_grad=True)
        loss = smoothed_cross_entropy(logits, case.inputs["targets"].astype(np.int64),
                                      float(case.inputs["smoothing"]))
        (g,) = backward(loss, inputs=[logits])
        return {"loss": loss.data, "grad_fd": g}
    if case.suite == "closed-forms":
        from .analysis import build_for_counting, measure_model

        model = build_for_counting(make_variant(case.name))
        measured = measure_model(model, 224)
        out = dict(case.expected)
        out["weights_total"] = np.asarray(measured.total_params, dtype=np.float64)
        out["macs_total_224"] = np.asarray(measured.total_macs, dtype=np.float64)
        out["aux_total"] = np.asarray(measure_model(model, include_aux=True).total_params, dtype=np.float64)
        return out
    return case.expected


def _parse_shift_name(case):
    if case.suite == "shift-identity":
        d, mode = re.match(r"d(\d+)-(\w+)", case.name).groups()
        return 1, int(d), mode
    s, d, mode = re.match(r"s(\d+)-d(\d+)-(\w+)", case.name).groups()
    return int(s), int(d), mode


# -- storage --------------------------------------------------------------------------


def case_dir(root, case):
    return os.path.join(root, case.suite, case.name)


def write_case(root, case):
    path = case_dir(root, case)
    os.makedirs(path, exist_ok=True)
    checkpoint.save(os.path.join(path, "inputs"), _as_tensors(case.inputs))
    checkpoint.save(os.path.join(path, "expected"), _as_tensors(case.expected))
    with open(os.path.join(path, "meta"), "w", encoding="utf-8") as fh:
        json.dump(case.meta(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _as_tensors(d):
    return {k: np.asarray(v, dtype=np.float64) for k, v in d.items()}


def _compare(a, b, tol):
    if a.keys() != b.keys():
        return f"keys differ: {sorted(a)} vs {sorted(b)}"
    for k in a:
        x, y = np.asarray(a[k], dtype=np.float64), np.asarray(b[k], dtype=np.float64)
        if x.shape != y.shape:
            return f"{k}: shape {x.shape} vs {y.shape}"
        if tol == 0.0:
            if x.tobytes() != y.tobytes():
                return f"{k}: bytes differ (max |diff| {np.max(np.abs(x - y)):.3g})"
        else:
            err = np.max(np.abs(x - y) / np.maximum(np.abs(y), 1.0)) if x.size else 0.0
            if err > tol:
                return f"{k}: rel diff {err:.3g} > {tol:g}"
    return None


def regenerate_fixtures(root, seed=DEFAULT_SEED, write=False):
    """Rebuild every case and compare with what is stored under ``root``.

    With ``write=True`` missing or differing cases are (re)written instead of
    reported. Returns a list of ``(case_path, problem)``; empty means clean.
    Library replays are checked against the oracle values either way.
    """
    problems = []
    for case in generate_cases(seed):
        path = case_dir(root, case)
        tol = case.tolerance
        replay_tol = tol if case.suite != "loss" else 1e-6
        diff = _compare(replay(case), case.expected, replay_tol)
        if diff:
            problems.append((path, f"library disagrees with oracle: {diff}"))
        if write:
            write_case(root, case)
            continue
        try:
            stored_in, _ = checkpoint.load(os.path.join(path, "inputs"))
            stored_out, _ = checkpoint.load(os.path.join(path, "expected"))
            with open(os.path.join(path, "meta"), encoding="utf-8") as fh:
                meta = json.load(fh)
        except (OSError, ValueError) as exc:
            problems.append((path, f"unreadable: {exc}"))
            continue
        for label, stored, fresh in (("inputs", stored_in, _as_tensors(case.inputs)),
                                     ("expected", stored_out, _as_tensors(case.expected))):
            diff = _compare(fresh, stored, tol)
            if diff:
                problems.append((path, f"{label}: {diff}"))
        if meta != case.meta():
            problems.append((path, "meta differs"))
    return problems


def load_case(root, suite, name):
    path = os.path.join(root, suite, name)
    inputs, _ = checkpoint.load(os.path.join(path, "inputs"))
    expected, _ = checkpoint.load(os.path.join(path, "expected"))
    with open(os.path.join(path, "meta"), encoding="utf-8") as fh:
        meta = json.load(fh)
    return inputs, expected, meta


# -- documentation lint -----------------------------------------------------------------

_CLAIM = re.compile(r"(?<![\w.])(\d{1,3}(?:,\d{3})+|\d+\.\d+[MG]|\d+[MG])(?![\w])")
_TABLE_ROW = re.compile(r"^\|\s*`?([^|`]+?)`?\s*\|\s*([^|]+?)\s*\|")


def lint_document(text, fixture_root):
    """Every numeric claim in ``text`` must be listed in its claims table.

    Claims are comma-grouped integers (``27,431,424``) and ``M``/``G``
    magnitudes (``28.3M``). The table is a Markdown table whose first column
    is the claim and whose second column names its backing: a fixture path
    ``suite/case`` (the claim must appear in that fixture's meta) or
    ``acceptance N``. Returns a list of problems.
    """
    backing = {}
    problems = []
    for line in text.splitlines():
        m = _TABLE_ROW.match(line.strip())
        if not m:
            continue
        claim, source = m.group(1).strip(), m.group(2).strip().strip("`")
        if not _CLAIM.fullmatch(claim):
            continue
        backing[claim] = source
        acc = re.fullmatch(r"acceptance (\d+)", source)
        if acc:
            if not 1 <= int(acc.group(1)) <= 10:
                problems.append(f"{claim}: no acceptance criterion {acc.group(1)}")
            continue
        meta_path = os.path.join(fixture_root, source, "meta")
        if not os.path.exists(meta_path):
            problems.append(f"{claim}: fixture {source} does not exist")
            continue
        with open(meta_path, encoding="utf-8") as fh:
            if claim not in json.load(fh).get("claims", []):
                problems.append(f"{claim}: not recorded in fixture {source}")
    for claim in sorted(set(_CLAIM.findall(text))):
        if claim not in backing:
            problems.append(f"{claim}: orphan claim (not in the claims table)")
    return problems
