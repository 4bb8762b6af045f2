"""Toy-scale optimisation harness: AdamW, warmup + cosine schedule, label
smoothing, a synthetic axial-structure dataset and a resumable training loop."""
from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import checkpoint
from .axial_shift import ShiftConfig
from .backbone import build_model, forward, make_variant
from .tensor import NARROW, WIDE, NonFiniteError, ShapeError, Tensor, backward, make_result, no_grad

PRECISIONS = {"narrow": NARROW, "wide": WIDE}


# -- optimiser ----------------------------------------------------------------------


def init_adamw_state(params):
    # moments are kept in float64 whatever the parameter precision: squared
    # gradients of narrow parameters can exceed the float32 range
    return {
        "step": 0,
        "m": [np.zeros(p.shape) for p in params],
        "v": [np.zeros(p.shape) for p in params],
    }


def adamw_step(params, grads, state, lr, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8,
               decay_mask=None):
    """One AdamW update over lists of arrays.

    Returns ``(new_params, new_state)``; inputs are left untouched. Weight
    decay is decoupled (``p <- p - lr * wd * p``) and skipped where
    ``decay_mask[i]`` is false.
    """
    if len(params) != len(grads) or len(params) != len(state["m"]):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state['m'])} moment slots")
    b1, b2 = betas
    t = state["step"] + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params, grads, state["m"], state["v"])):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"slot {i}: param {p.shape}, grad {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in slot {i}")
        g = g.astype(np.float64)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        if not np.isfinite(v).all():
            raise NonFiniteError(f"second moment overflowed in slot {i}")
        decayed = p if (decay_mask is not None and not decay_mask[i]) else p - lr * weight_decay * p
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append((decayed - step).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return new_p, {"step": t, "m": new_m, "v": new_v}


def lr_schedule(step, total_steps, warmup_steps, base_lr, min_lr=0.0):
    """Linear warmup from 0 to ``base_lr``, then half-cosine down to ``min_lr``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if not 0 <= warmup_steps <= total_steps:
        raise ValueError(f"warmup {warmup_steps} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    span = total_steps - warmup_steps
    if span == 0:
        return base_lr
    progress = (step - warmup_steps) / span
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


# -- loss ---------------------------------------------------------------------------


def smoothed_cross_entropy(logits, targets, smoothing=0.1):
    """Mean cross-entropy against ``(1 - eps) * onehot + eps / K``."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    if logits.ndim != 2:
        raise ShapeError(f"expected [b, K] logits, got {logits.shape}")
    B, K = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (B,) or not np.issubdtype(targets.dtype, np.integer):
        raise ValueError(f"targets must be {B} integer class ids")
    if targets.size and (targets.min() < 0 or targets.max() >= K):
        raise ValueError(f"target ids must lie in [0, {K})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    q = np.full((B, K), smoothing / K, dtype=z.dtype)
    q[np.arange(B), targets] += 1.0 - smoothing
    loss = np.asarray(-(q * logp).sum() / B, dtype=z.dtype)
    probs = np.exp(logp)

    def bw(g):
        return ((probs - q) * (g / B)).astype(z.dtype),

    return make_result(loss, (logits,), bw, "smoothed_cross_entropy")


# -- data ---------------------------------------------------------------------------

DATASET_CLASSES = ("horizontal", "vertical", "horizontal-offset", "vertical-offset")


def synth_dataset(classes=4, samples=512, size=32, seed=0, dtype=NARROW):
    """Balanced images whose label is carried by short dot lines.

    The image is a grid of 4x4 cells on a black background. Two lines of
    five consecutive cells each hold one white pixel, placed along a row
    (``horizontal``) or a column (``vertical``). In the plain classes every
    dot of a line sits at the same spot inside its cell. In the offset
    classes that spot steps by one pixel per cell along the line. A single
    cell looks alike in every class, so the label depends on how dots relate
    across several cells along one axis.
    """
    if size <= 0 or size % 32:
        raise ValueError(f"image size must be a positive multiple of 32, got {size}")
    if not 1 <= classes <= len(DATASET_CLASSES):
        raise ValueError(f"classes must lie in [1, {len(DATASET_CLASSES)}]")
    if samples < classes or samples % classes:
        raise ValueError(f"samples ({samples}) must be a positive multiple of classes ({classes})")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), samples // classes)
    rng.shuffle(labels)
    cells = size // 4
    images = np.zeros((samples, 3, size, size), dtype=dtype)
    for n, label in enumerate(labels):
        images[n] = _draw(DATASET_CLASSES[label], cells, rng)
    return images, labels.astype(np.int64)


LINE_CELLS = 5
LINES_PER_IMAGE = 2


def _draw(kind, cells, rng):
    horizontal = kind.startswith("horizontal")
    step = 1 if kind.endswith("offset") else 0
    img = np.zeros((3, 4 * cells, 4 * cells))
    for _ in range(LINES_PER_IMAGE):
        line = rng.integers(0, cells)
        start = rng.integers(0, cells - LINE_CELLS + 1)
        r0, c0 = rng.integers(0, 4, size=2)
        for t in range(LINE_CELLS):
            if horizontal:
                i, j, r, c = line, start + t, (r0 + step * t) % 4, c0
            else:
                i, j, r, c = start + t, line, r0, (c0 + step * t) % 4
            img[:, 4 * i + r, 4 * j + c] = 1.0
    return img


# -- configuration ------------------------------------------------------------------


@dataclass
class TrainConfig:
    variant: str = "custom"
    embed_dim: int = 16
    depths: tuple = (1, 1, 2, 1)
    mlp_ratio: int = 4
    shift_h: int = 5
    shift_v: int = 5
    dilation: int = 1
    padding: str = "zero"
    connection: str = "parallel"
    drop_path_max: float = 0.0
    epochs: int = 30
    warmup_epochs: int = 2
    base_lr: float = 5e-4
    min_lr: float = 0.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    label_smoothing: float = 0.1
    seed: int = 0
    precision: str = "narrow"
    classes: int = 4
    samples: int = 512
    image_size: int = 32
    data_seed: int = 0
    hflip: bool = False
    metrics_path: str = "metrics.csv"
    checkpoint_path: str = "checkpoint.ckpt"
    log_wallclock: bool = False

    def __post_init__(self):
        self.depths = tuple(int(n) for n in self.depths)
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must lie in [0, epochs)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.base_lr <= 0 or self.min_lr < 0 or self.weight_decay < 0:
            raise ValueError("learning rates and weight decay must be non-negative (base_lr > 0)")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def model_config(self):
        shift = ShiftConfig(s_h=self.shift_h, s_v=self.shift_v, dilation=self.dilation, padding=self.padding)
        common = dict(shift=shift, connection=self.connection, num_classes=self.classes,
                      drop_path_max=self.drop_path_max, mlp_ratio=self.mlp_ratio)
        if self.variant == "custom":
            return make_variant("custom", embed_dim=self.embed_dim, depths=self.depths, **common)
        return make_variant(self.variant, **common)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


# -- training loop ------------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    records: list
    checkpoint_path: str
    metrics_path: str

    @property
    def final_accuracy(self):
        return self.records[-1]["train_acc"] if self.records else float("nan")


def _decays(name, arr):
    return arr.ndim >= 2


def format_record(rec):
    return (f"{rec['epoch']},{rec['lr']:.9g},{rec['train_loss']:.9g},"
            f"{rec['train_acc']:.6f},{rec['wallclock_seconds']:.3f}")


METRICS_HEADER = "epoch,lr,train_loss,train_acc,wallclock_seconds"


_PADDING_CODES = {"zero": 0, "circular": 1, "reflect": 2, "replicate": 3}
_CONNECTION_CODES = {"parallel": 0, "serial": 1}


def config_tensors(model_cfg):
    """Encode the architecture of ``model_cfg`` as float64 tensors."""
    sh = model_cfg.shift
    values = {
        "embed_dim": model_cfg.embed_dim,
        "depths": list(model_cfg.depths),
        "patch_size": model_cfg.patch_size,
        "mlp_ratio": model_cfg.mlp_ratio,
        "shift_h": sh.s_h,
        "shift_v": sh.s_v,
        "dilation": sh.dilation,
        "padding": _PADDING_CODES[sh.padding],
        "connection": _CONNECTION_CODES[model_cfg.connection],
        "num_classes": model_cfg.num_classes,
        "in_chans": model_cfg.in_chans,
    }
    return {f"config/{k}": np.asarray(v, dtype=np.float64) for k, v in values.items()}


def config_from_tensors(tensors):
    """Inverse of :func:`config_tensors` (axial-shift models only)."""
    try:
        get = {k[len("config/"):]: v for k, v in tensors.items() if k.startswith("config/")}
        padding = {v: k for k, v in _PADDING_CODES.items()}[int(get["padding"])]
        connection = {v: k for k, v in _CONNECTION_CODES.items()}[int(get["connection"])]
        shift = ShiftConfig(int(get["shift_h"]), int(get["shift_v"]), int(get["dilation"]), padding)
        return make_variant(
            "custom", embed_dim=int(get["embed_dim"]), depths=tuple(int(n) for n in get["depths"]),
            patch_size=int(get["patch_size"]), mlp_ratio=int(get["mlp_ratio"]), shift=shift,
            connection=connection, num_classes=int(get["num_classes"]), in_chans=int(get["in_chans"]),
            drop_path_max=0.0,
        )
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"checkpoint lacks architecture entry {exc}") from exc


def _state_tensors(cfg, model, opt, epoch):
    out = config_tensors(model.cfg)
    names = [n for n, _ in model.named_parameters()]
    for name, p in model.named_parameters():
        out[f"model/{name}"] = p.data
    for name, m, v in zip(names, opt["m"], opt["v"]):
        out[f"optim/m/{name}"] = m
        out[f"optim/v/{name}"] = v
    out["train/step"] = np.asarray(opt["step"], dtype=np.float64)
    out["train/epoch"] = np.asarray(epoch, dtype=np.float64)
    out["train/seed"] = np.asarray(cfg.seed, dtype=np.float64)
    return out


def save_training_state(path, cfg, model, opt, epoch):
    checkpoint.save(path, _state_tensors(cfg, model, opt, epoch))


def load_training_state(path, cfg, model):
    """Restore ``model`` in place; return ``(optimizer_state, completed_epochs)``."""
    tensors, _ = checkpoint.load(path)
    if int(tensors["train/seed"]) != cfg.seed:
        raise ValueError(f"checkpoint was written with seed {int(tensors['train/seed'])}, config has {cfg.seed}")
    model.load_state_dict({k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")})
    names = [n for n, _ in model.named_parameters()]
    opt = {
        "step": int(tensors["train/step"]),
        "m": [tensors[f"optim/m/{n}"] for n in names],
        "v": [tensors[f"optim/v/{n}"] for n in names],
    }
    return opt, int(tensors["train/epoch"])


def load_model(path, model_cfg=None, dtype=None):
    """Build a model and fill it from a training checkpoint.

    Without ``model_cfg`` the architecture stored in the checkpoint is used.
    """
    tensors, _ = checkpoint.load(path)
    model_cfg = model_cfg or config_from_tensors(tensors)
    weights = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    dtype = dtype or next(iter(weights.values())).dtype
    model = build_model(model_cfg, init="zeros", dtype=dtype)
    model.load_state_dict(weights)
    return model


def evaluate(model, images, labels, batch_size=128):
    """Eval-mode accuracy."""
    correct = 0
    with no_grad():
        for start in range(0, len(labels), batch_size):
            logits = forward(Tensor(images[start:start + batch_size]), model).data
            correct += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / len(labels)


def train(cfg, resume=None, stop_after=None, log=None):
    """Run the loop described by ``cfg``.

    Every epoch draws its batch order and DropPath masks from streams seeded by
    ``(seed, epoch)``, so a run resumed from an end-of-epoch checkpoint replays
    the remaining epochs exactly. ``stop_after`` ends the run early after that
    many completed epochs (the checkpoint is still written).
    """
    dtype = cfg.dtype
    images, labels = synth_dataset(cfg.classes, cfg.samples, cfg.image_size, cfg.data_seed, dtype=dtype)
    model = build_model(cfg.model_config(), rng=np.random.default_rng(cfg.seed), dtype=dtype)
    named = list(model.named_parameters())
    params = [p for _, p in named]
    decay_mask = [_decays(n, p.data) for n, p in named]
    opt = init_adamw_state([p.data for p in params])
    first_epoch = 0
    if resume is not None:
        opt, first_epoch = load_training_state(resume, cfg, model)
    steps_per_epoch = math.ceil(cfg.samples / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    last_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    records = []
    mode = "a" if resume is not None and os.path.exists(cfg.metrics_path) else "w"
    with open(cfg.metrics_path, mode, encoding="utf-8", newline="\n") as fh:
        if mode == "w":
            fh.write(METRICS_HEADER + "\n")
        for epoch in range(first_epoch, last_epoch):
            t0 = time.perf_counter()
            order_rng = np.random.default_rng([cfg.seed, epoch, 0])
            drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
            order = order_rng.permutation(cfg.samples)
            loss_sum, correct, lr, gnorm = 0.0, 0, 0.0, float("nan")
            for start in range(0, cfg.samples, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = images[idx]
                if cfg.hflip:
                    flip = order_rng.random(len(idx)) < 0.5
                    batch = np.where(flip[:, None, None, None], batch[..., ::-1], batch)
                lr = lr_schedule(opt["step"], total_steps, warmup_steps, cfg.base_lr, cfg.min_lr)
                try:
                    logits = forward(Tensor(batch), model, training=True, rng=drop_rng)
                    loss = smoothed_cross_entropy(logits, labels[idx], cfg.label_smoothing)
                except NonFiniteError as exc:
                    raise NonFiniteError(
                        f"non-finite value at epoch {epoch + 1}, step {opt['step']}: {exc} "
                        f"(lr={lr:.3g}, last grad-norm={gnorm:.3g})"
                    ) from exc
                grads = backward(loss, inputs=params)
                gnorm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
                new, opt = adamw_step([p.data for p in params], grads, opt, lr, cfg.weight_decay,
                                      (cfg.beta1, cfg.beta2), cfg.adam_eps, decay_mask)
                for p, arr in zip(params, new):
                    p.data = arr
                loss_sum += float(loss.data) * len(idx)
                correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
            rec = {
                "epoch": epoch + 1,
                "lr": lr,
                "train_loss": loss_sum / cfg.samples,
                "train_acc": correct / cfg.samples,
                "wallclock_seconds": time.perf_counter() - t0 if cfg.log_wallclock else 0.0,
            }
            records.append(rec)
            fh.write(format_record(rec) + "\n")
            fh.flush()
            if log is not None:
                log(rec)
            save_training_state(cfg.checkpoint_path, cfg, model, opt, epoch + 1)
    return TrainResult(model, records, cfg.checkpoint_path, cfg.metrics_path)


def config_dict(cfg):
    return asdict(cfg)
