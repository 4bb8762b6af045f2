"""Command-line entry point: describe, verify, train, bench, probe, fixtures.

Exit codes: 0 success, 1 a verification/check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _parse_bool_arg(text):
    try:
        return _bool(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


# -- config files ---------------------------------------------------------------------


def read_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment. Returns raw strings."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{n}: empty key")
        values[key] = value
    return values


def coerce_train_values(raw):
    """Convert raw strings to typed :class:`TrainConfig` fields; unknown keys are errors."""
    from .training import TrainConfig

    defaults = TrainConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(TrainConfig)}
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}; known keys: {', '.join(sorted(known))}")
        default = known[key]
        try:
            if isinstance(default, bool):
                out[key] = _bool(value)
            elif isinstance(default, int):
                out[key] = int(value)
            elif isinstance(default, float):
                out[key] = float(value)
            elif isinstance(default, tuple):
                out[key] = tuple(int(v) for v in str(value).replace(" ", "").strip("()").split(",") if v)
            else:
                out[key] = str(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {value!r}") from exc
    return out


# -- commands -------------------------------------------------------------------------


def cmd_describe(args, out):
    from .analysis import build_for_counting, formula_flops, formula_params, measure_model
    from .backbone import make_variant

    cfg = make_variant(args.variant)
    size = args.input_size
    try:
        cfg.check_input(size, size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model = build_for_counting(cfg)
    measured = measure_model(model, size, include_aux=args.include_aux)
    measured.label = (f"{cfg.name} @ {size}x{size} "
                      f"({'all parameters' if args.include_aux else 'projection weights only'})")
    closed_p = formula_params(cfg, include_aux=args.include_aux).total_params
    closed_m = formula_flops(cfg, size).total_macs
    if args.csv:
        out.write(measured.to_csv())
    else:
        out.write(measured.to_table() + "\n")
        agree = closed_p == measured.total_params and closed_m == measured.total_macs
        out.write(f"closed form: params {closed_p:,}  MACs {closed_m:,}  "
                  f"({'matches' if agree else 'DIFFERS from'} the instrumented count)\n")
    return EXIT_OK


def cmd_verify(args, out):
    from .verify import run_suite

    ok = True
    for report in run_suite(args.suite, seed=args.seed):
        for line in report.lines():
            out.write(line + "\n")
        ok &= report.ok
    return EXIT_OK if ok else EXIT_FAIL


def _train_config(args):
    from .training import TrainConfig

    raw = read_config_file(args.config) if args.config else {}
    values = coerce_train_values(raw)
    for f in dataclasses.fields(TrainConfig):
        flag = getattr(args, f"set_{f.name}", None)
        if flag is not None:
            values.update(coerce_train_values({f.name: flag}))
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from exc


def cmd_train(args, out):
    from .tensor import NonFiniteError
    from .training import format_record, train

    cfg = _train_config(args)

    def log(rec):
        out.write(format_record(rec) + "\n")
        out.flush()

    try:
        result = train(cfg, resume=args.resume, stop_after=args.stop_after, log=log)
    except NonFiniteError as exc:
        sys.stderr.write(f"training aborted: {exc}\n")
        return EXIT_FAIL
    out.write(f"final train accuracy: {result.final_accuracy:.4f}\n")
    out.write(f"metrics: {cfg.metrics_path}\ncheckpoint: {cfg.checkpoint_path}\n")
    return EXIT_OK


def cmd_bench(args, out):
    from .bench import backend_name, parse_shape, shift_size_sweep, time_op
    from .tensor import ShapeError

    try:
        shape = parse_shape(args.shape)
    except ShapeError as exc:
        raise UsageError(str(exc)) from exc
    main = time_op(args.op, shape, args.shift_size, args.repeats)
    sweep, cv = shift_size_sweep(shape, args.repeats)
    rows = [("op", "shape", "s", "macs", "median_ms", "min_ms")]
    for t in [main] + sweep:
        rows.append((t.op, "x".join(map(str, t.shape)), t.shift_size, t.macs,
                     f"{t.median_s * 1e3:.3f}", f"{t.min_s * 1e3:.3f}"))
    if args.csv:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        out.write(buf.getvalue())
    else:
        widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
        for r in rows:
            out.write("  ".join(str(v).rjust(w) for v, w in zip(r, widths)) + "\n")
    out.write(f"kernel backend: {backend_name()}; shift-only median time across s: "
              f"coefficient of variation {cv:.3f}\n")
    return EXIT_OK


def _parse_position(text):
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"position must be 'row,col', got {text!r}") from exc
    return i, j


def render_grid(cells, size, position):
    rows = []
    ri, rj = position
    for i in range(size):
        row = []
        for j in range(size):
            if (i, j) == (ri, rj):
                row.append("@")
            elif (i - ri, j - rj) in cells:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def cmd_probe(args, out):
    from .analysis import receptive_field_probe
    from .axial_shift import AxialShiftUnitParams, ShiftConfig, axial_shift_unit
    from .tensor import WIDE

    if args.checkpoint:
        from .training import load_model

        model = load_model(args.checkpoint, dtype=WIDE)
        units = [b.unit for b in model.stages[0].blocks][: args.depth]
        if len(units) < args.depth:
            units += [b.unit for st in model.stages[1:] for b in st.blocks
                      if b.unit.proj_in.weight.shape[0] == units[0].proj_in.weight.shape[0]]
            units = units[: args.depth]
        if len(units) < args.depth:
            raise UsageError(f"checkpoint has only {len(units)} units at the first stage width")
        channels = units[0].proj_in.weight.shape[0]
    elif args.random_init:
        rng = np.random.default_rng(args.seed)
        cfg = ShiftConfig(args.shift_size, args.shift_size, dilation=args.dilation, padding=args.padding)
        channels = args.channels
        units = [AxialShiftUnitParams(channels, cfg, rng=rng, dtype=WIDE) for _ in range(args.depth)]
    else:
        raise UsageError("probe needs --checkpoint or --random-init")
    size = args.size
    i, j = args.position
    if not (0 <= i < size and 0 <= j < size):
        raise UsageError(f"position {args.position} outside the {size}x{size} map")

    def fn(x):
        for u in units:
            x = axial_shift_unit(x, u)
        return x

    cells = receptive_field_probe(fn, (channels, size, size), (i, j), np.random.default_rng(args.seed), WIDE)
    grid = render_grid(cells, size, (i, j))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(grid)
        out.write(f"{len(cells)} influencing cells; grid written to {args.output}\n")
    else:
        out.write(grid)
        out.write(f"{len(cells)} influencing cells\n")
    return EXIT_OK


def cmd_fixtures(args, out):
    from .fixtures import lint_document, regenerate_fixtures

    problems = regenerate_fixtures(args.root, seed=args.seed, write=args.write)
    for path, msg in problems:
        out.write(f"{path}: {msg}\n")
    if args.lint:
        try:
            with open(args.lint, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {args.lint}: {exc}") from exc
        lint = lint_document(text, args.root)
        for msg in lint:
            out.write(f"{args.lint}: {msg}\n")
        problems = problems + [(args.lint, m) for m in lint]
    out.write(f"fixtures: {'clean' if not problems else f'{len(problems)} problem(s)'}\n")
    return EXIT_OK if not problems else EXIT_FAIL


# -- parser ---------------------------------------------------------------------------


def build_parser():
    from .backbone import VARIANT_NAMES
    from .bench import OPS
    from .training import TrainConfig
    from .verify import SUITES

    parser = argparse.ArgumentParser(prog="asmlp", description="Axial-shift MLP toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="per-stage parameter and MAC table")
    p.add_argument("--variant", required=True, choices=VARIANT_NAMES)
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--include-aux", type=_parse_bool_arg, default=True, metavar="{true,false}")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", default="all", choices=sorted(SUITES) + ["all"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train on the synthetic dataset")
    p.add_argument("--config", help="key = value file; flags override its values")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this many completed epochs")
    for f in dataclasses.fields(TrainConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"set_{f.name}", default=None, metavar="V")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="time the shift, the unit or the block")
    p.add_argument("--op", default="axial-shift", choices=OPS)
    p.add_argument("--shape", default="1x96x56x56")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--shift-size", type=int, default=5)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("probe", help="receptive-field grid of stacked units")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint")
    src.add_argument("--random-init", action="store_true")
    p.add_argument("--position", type=_parse_position, default=None)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--size", type=int, default=13)
    p.add_argument("--channels", type=int, default=21)
    p.add_argument("--shift-size", type=int, default=5)
    p.add_argument("--dilation", type=int, default=1)
    p.add_argument("--padding", default="zero")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("fixtures", help="regenerate and check the fixture corpus")
    p.add_argument("--root", default="fixtures")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--write", action="store_true", help="write fixtures instead of checking them")
    p.add_argument("--lint", metavar="DOC", help="also lint numeric claims in DOC")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if getattr(args, "command", None) == "probe" and args.position is None:
        args.position = (args.size // 2, args.size // 2)
    if getattr(args, "command", None) == "fixtures" and args.seed is None:
        from .fixtures import DEFAULT_SEED

        args.seed = DEFAULT_SEED
    try:
        return args.func(args, out)
    except UsageError as exc:
        sys.stderr.write(f"asmlp {args.command}: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"asmlp {args.command}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
