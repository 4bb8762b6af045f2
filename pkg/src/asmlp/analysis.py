"""Closed-form parameter / MAC accounting and instrumented cross-checks.

Conventions: one multiply-accumulate counts as one FLOP. The closed forms
count projection weights only; ``include_aux`` adds biases, LayerNorm affine
parameters and the classifier. The classifier's MACs are always reported as
a separate ``head`` entry so that instrumented totals can reconcile exactly.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .backbone import build_model, forward
from .tensor import Tensor, count_macs, no_grad

COMPONENTS = ("linear-embedding", "patch-merging", "blocks", "head")
_SHIFT_MIXERS = ("axial-shift", "(5,1)", "(1,5)")


@dataclass(frozen=True)
class CostEntry:
    stage: int | None
    component: str
    params: int
    macs: int


@dataclass
class CostBreakdown:
    entries: list = field(default_factory=list)
    label: str = ""
    bias_adds: int = 0  # instrumented bias additions, outside the MAC totals

    def __post_init__(self):
        for e in self.entries:
            if e.params < 0 or e.macs < 0:
                raise ValueError(f"negative cost in {e}")

    @property
    def total_params(self):
        return sum(e.params for e in self.entries)

    @property
    def total_macs(self):
        return sum(e.macs for e in self.entries)

    def get(self, stage, component):
        for e in self.entries:
            if e.stage == stage and e.component == component:
                return e
        raise KeyError((stage, component))

    def component_total(self, component, what="params"):
        return sum(getattr(e, what) for e in self.entries if e.component == component)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stage", "component", "params", "macs"])
        for e in self.entries:
            writer.writerow(["-" if e.stage is None else e.stage, e.component, e.params, e.macs])
        writer.writerow(["total", "", self.total_params, self.total_macs])
        return buf.getvalue()

    def to_table(self):
        rows = [("stage", "component", "params", "MACs")]
        for e in self.entries:
            rows.append(("-" if e.stage is None else str(e.stage), e.component, f"{e.params:,}", f"{e.macs:,}"))
        rows.append(("total", "", f"{self.total_params:,}", f"{self.total_macs:,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for n, r in enumerate(rows):
            lines.append(
                "  ".join(
                    r[i].ljust(widths[i]) if i < 2 else r[i].rjust(widths[i]) for i in range(4)
                ).rstrip()
            )
            if n == 0 or n == len(rows) - 2:
                lines.append("  ".join("-" * w for w in widths))
        summary = (
            f"params {self.total_params / 1e6:.1f}M  "
            f"MACs {self.total_macs / 1e9:.2f}G"
        )
        head = [self.label] if self.label else []
        return "\n".join(head + lines + [summary])


def _check_shift_family(cfg):
    if cfg.mixer not in _SHIFT_MIXERS:
        raise ValueError(f"closed forms cover axial-shift blocks only, not mixer {cfg.mixer!r}")


def _block_aux(C, r):
    biases = 4 * C + (r * C + C if r else 0)
    norms = 4 * 2 * C
    return biases + norms


def formula_params(cfg, include_aux=False):
    _check_shift_family(cfg)
    dims = cfg.stage_dims()
    C, p, r = dims[0], cfg.patch_size, cfg.mlp_ratio
    entries = []
    embed = cfg.in_chans * C * p * p
    if include_aux:
        embed += C + 2 * C
    entries.append(CostEntry(1, "linear-embedding", embed, 0))
    for i, (Ci, n) in enumerate(zip(dims, cfg.depths), start=1):
        if i > 1:
            Cp = dims[i - 2]
            merge = 8 * Cp * Cp + (2 * 4 * Cp if include_aux else 0)
            entries.append(CostEntry(i, "patch-merging", merge, 0))
        blocks = n * (4 + 2 * r) * Ci * Ci + (n * _block_aux(Ci, r) if include_aux else 0)
        entries.append(CostEntry(i, "blocks", blocks, 0))
    if include_aux:
        Cf, K = dims[-1], cfg.num_classes
        entries.append(CostEntry(None, "head", Cf * K + K + 2 * Cf, 0))
    return CostBreakdown(entries, f"{cfg.name} closed-form params ({'with aux' if include_aux else 'weights only'})")


def formula_flops(cfg, height=224, width=None, count_bias=False):
    """MACs for one image of ``height x width``.

    ``count_bias=True`` additionally counts one operation per bias addition, the
    convention of common layer-wise profilers.
    """
    _check_shift_family(cfg)
    width = height if width is None else width
    cfg.check_input(height, width)
    dims = cfg.stage_dims()
    res = cfg.stage_resolutions(height, width)
    p, r = cfg.patch_size, cfg.mlp_ratio
    entries = []
    hw = res[0][0] * res[0][1]
    embed = cfg.in_chans * dims[0] * p * p * hw + (dims[0] * hw if count_bias else 0)
    entries.append(CostEntry(1, "linear-embedding", 0, embed))
    for i, (Ci, n) in enumerate(zip(dims, cfg.depths), start=1):
        hw = res[i - 1][0] * res[i - 1][1]
        if i > 1:
            Cp = dims[i - 2]
            entries.append(CostEntry(i, "patch-merging", 0, 8 * Cp * Cp * hw))
        blocks = n * (4 + 2 * r) * Ci * Ci * hw
        if count_bias:
            blocks += n * (4 * Ci + (r * Ci + Ci if r else 0)) * hw
        entries.append(CostEntry(i, "blocks", 0, blocks))
    Cf, K = dims[-1], cfg.num_classes
    entries.append(CostEntry(None, "head", 0, Cf * K + (K if count_bias else 0)))
    return CostBreakdown(entries, f"{cfg.name} closed-form MACs @ {height}x{width}")


def complexity_compare(h, w, C, M):
    """The three token-mixing complexities for an ``h x w x C`` map and window ``M``."""
    if min(h, w, C, M) <= 0:
        raise ValueError("h, w, C and M must be positive")
    hw = h * w
    base = 4 * hw * C * C
    return {
        "msa": base + 2 * hw * hw * C,
        "wmsa": base + 2 * M * M * hw * C,
        "as": base,
    }


def _component_of(name):
    head, _, rest = name.partition(".")
    if head in ("embed", "embed_norm"):
        return 1, "linear-embedding"
    if head in ("head", "head_norm"):
        return None, "head"
    if head == "stages":
        idx, _, sub = rest.partition(".")
        return int(idx) + 1, "patch-merging" if sub.startswith("merge") else "blocks"
    raise KeyError(name)


def _scope_key(scope):
    if scope == "head":
        return None, "head"
    stage, _, component = scope.partition("/")
    return int(stage), component


def measure_model(model, height=None, width=None, include_aux=False):
    """Count stored parameters and, if ``height`` is given, instrumented MACs.

    Weight-only counting keeps the 2-d projection/mixing matrices outside the
    classifier; ``include_aux`` counts every stored parameter.
    """
    params = {}
    for name, p in model.named_parameters():
        key = _component_of(name)
        if not include_aux and (p.ndim != 2 or key[1] == "head"):
            continue
        params[key] = params.get(key, 0) + p.size
    macs = {}
    bias_adds = 0
    if height is not None:
        width = height if width is None else width
        image = Tensor(np.zeros((1, model.cfg.in_chans, height, width), dtype=model.embed.weight.dtype))
        with no_grad(), count_macs() as counter:
            forward(image, model)
        for scope, n in counter.by_scope.items():
            key = _scope_key(scope)
            macs[key] = macs.get(key, 0) + n
        bias_adds = counter.bias_adds
    keys = [k for k in _ordered_keys(model.cfg) if k in params or k in macs]
    keys += [k for k in macs if k not in keys]
    entries = [CostEntry(s, c, params.get((s, c), 0), macs.get((s, c), 0)) for s, c in keys]
    return CostBreakdown(entries, f"{model.cfg.name} measured", bias_adds)


def _ordered_keys(cfg):
    keys = [(1, "linear-embedding"), (1, "blocks")]
    for i in range(2, 5):
        keys += [(i, "patch-merging"), (i, "blocks")]
    return keys + [(None, "head")]


def measured_unit_macs(unit, shape):
    """Instrumented MACs of one axial shift unit on an input of ``shape``."""
    from .axial_shift import axial_shift_unit

    x = Tensor(np.zeros(shape, dtype=unit.proj_in.weight.dtype))
    with no_grad(), count_macs() as counter:
        axial_shift_unit(x, unit)
    return counter.total


def receptive_field_probe(fn, shape, position, rng=None, dtype=np.float64):
    """Offsets of input cells whose perturbation changes ``fn``'s output at ``position``.

    ``fn`` maps a ``[1, C, h, w]`` tensor to a tensor of the same spatial size.
    Every cell is perturbed in its own forward pass and compared bit-exactly
    against the unperturbed output.
    """
    rng = rng or np.random.default_rng(0)
    C, H, W = shape
    ri, rj = position
    if not (0 <= ri < H and 0 <= rj < W):
        raise ValueError(f"position {position} outside the {H}x{W} map")
    x = rng.uniform(-1.0, 1.0, size=(1, C, H, W)).astype(dtype)
    bump = rng.uniform(0.5, 1.5, size=C).astype(dtype)
    with no_grad():
        ref = fn(Tensor(x)).data[0, :, ri, rj].copy()
        found = set()
        for i in range(H):
            for j in range(W):
                xp = x.copy()
                xp[0, :, i, j] += bump
                out = fn(Tensor(xp)).data[0, :, ri, rj]
                if not np.array_equal(out, ref):
                    found.add((i - ri, j - rj))
    return found


def build_for_counting(cfg):
    """Zero-initialised model: cheap to build, enough for counting."""
    return build_model(cfg, init="zeros", dtype=np.float32)
