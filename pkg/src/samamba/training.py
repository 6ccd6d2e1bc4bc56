"""Training, evaluation and sweep drivers.

A run is fully described by a :class:`RunConfig`; the resolved config is
written next to every run's outputs as ``run.cfg`` so the run can be
relaunched from that file alone.  Training logs are append-only lines of
``key=value`` pairs, one per epoch.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics
from .data.augment import augment
from .data.dataset import load_split, to_model_input
from .data.synth import SampleRecord
from .engine import checkpoint
from .engine.optim import AdamState, adam_step, step_lr
from .engine.tensor import Tensor, backward, no_grad
from .losses import total_loss
from .model.config import ModelConfig, coerce
from .model.network import SAMamba

PRECISIONS = {"f32": np.float32, "f64": np.float64}


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending batch identity."""

    def __init__(self, message, epoch, batch, indices, seed):
        super().__init__(message)
        self.epoch, self.batch, self.indices, self.seed = epoch, batch, list(indices), seed


@dataclass
class RunConfig:
    data_root: str = ""
    epochs: int = 300
    batch_size: int = 2
    lr: float = 1e-4
    lr_step: int = 100
    lr_gamma: float = 0.1
    seed: int = 0
    precision: str = "f32"
    out_dir: str = "run"
    augment: bool = True
    # 0 means no cap; otherwise stop after this many optimiser steps
    max_steps: int = 0
    eval_every: int = 1
    train_split: str = "train"
    val_split: str = "val"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = ["# samamba run config"]
        for f in fields(self):
            if f.name == "model":
                continue
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        for line in self.model.to_text().splitlines():
            if line and not line.startswith("#"):
                lines.append("model." + line)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        defaults = cls()
        mdefaults = ModelConfig()
        run_kw, model_kw = {}, {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("model."):
                k = key[len("model.") :]
                if not hasattr(mdefaults, k) or k == "extra":
                    raise ValueError(f"line {lineno}: unknown model key {k!r}")
                model_kw[k] = coerce(value, getattr(mdefaults, k))
            else:
                if key == "model" or not hasattr(defaults, key):
                    raise ValueError(f"line {lineno}: unknown key {key!r}")
                run_kw[key] = coerce(value, getattr(defaults, key))
        return cls(**run_kw, model=ModelConfig(**model_kw))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


@dataclass
class TrainResult:
    model: SAMamba
    history: list[dict] = field(default_factory=list)
    best_val_iou: float = -1.0
    best_epoch: int = -1
    steps: int = 0
    checkpoint: Path | None = None


def batch_seed(seed: int, epoch: int, index: int) -> np.random.SeedSequence:
    """Augmentation randomness keyed by (run seed, epoch, sample index)."""
    return np.random.SeedSequence([int(seed), int(epoch), int(index)])


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0xB47C])).permutation(n)


def build_model(run: RunConfig) -> SAMamba:
    return SAMamba(run.model, dtype=run.dtype)


def predict_logits(model: SAMamba, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
    """Logits (N, H, W) for single-channel images (N, H, W)."""
    x = to_model_input(images, model.dtype)
    out = []
    for i in range(0, len(x), batch_size):
        out.append(model.predict_logits(x[i : i + batch_size])[:, 0])
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:], dtype=model.dtype)


def predict_masks(model: SAMamba, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
    # sigmoid(z) > 0.5 exactly when z > 0
    return (predict_logits(model, images, batch_size) > 0).astype(np.uint8)


def evaluate(model: SAMamba, images: np.ndarray, masks: np.ndarray, batch_size: int = 4) -> dict:
    return metrics.evaluate_masks(predict_masks(model, images, batch_size), masks)


def _log_line(record: dict) -> str:
    parts = []
    for k, v in record.items():
        if isinstance(v, float):
            parts.append(f"{k}={v:.8g}")
        else:
            parts.append(f"{k}={v}")
    return " ".join(parts) + "\n"


def parse_log(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = {}
        for tok in line.split():
            k, v = tok.split("=", 1)
            try:
                rec[k] = int(v)
            except ValueError:
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
        out.append(rec)
    return out


def train(
    run: RunConfig,
    train_images: np.ndarray,
    train_masks: np.ndarray,
    val_images: np.ndarray | None = None,
    val_masks: np.ndarray | None = None,
    out_dir=None,
    model: SAMamba | None = None,
    callback=None,
) -> TrainResult:
    """Epoch loop: augment, forward, total loss, backward, Adam.

    With ``out_dir`` set, writes ``run.cfg``, appends to ``train.log`` and
    keeps the best-validation-IoU weights in ``best.ckpt`` (the last weights
    when no validation data is given).
    """
    dtype = run.dtype
    model = model or build_model(run)
    model.train()
    params = model.parameters(trainable_only=True)
    state = AdamState(lr=run.lr)
    train_images = np.asarray(train_images)
    train_masks = np.asarray(train_masks)
    n = len(train_images)
    if n == 0:
        raise ValueError("no training samples")
    if train_images.shape != train_masks.shape:
        raise ValueError(f"image/mask shapes differ: {train_images.shape} vs {train_masks.shape}")
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        run.save(out / "run.cfg")
        run.model.save(out / "model.cfg")
        log_path = out / "train.log"
        log_path.write_text("")
    result = TrainResult(model)
    records = [SampleRecord(img, msk) for img, msk in zip(train_images, train_masks)]
    steps = 0
    done = False
    for epoch in range(run.epochs):
        state.lr = step_lr(run.lr, epoch, run.lr_step, run.lr_gamma)
        order = epoch_order(run.seed, epoch, n)
        t0 = time.perf_counter()
        losses = []
        for b, start in enumerate(range(0, n, run.batch_size)):
            idx = order[start : start + run.batch_size]
            if run.augment:
                batch = [augment(records[i], batch_seed(run.seed, epoch, i)) for i in idx]
            else:
                batch = [records[i] for i in idx]
            x = to_model_input(np.stack([s.image for s in batch]), dtype)
            y = np.stack([s.mask for s in batch]).astype(dtype)[:, None]
            logits = model(Tensor(x))
            loss = total_loss(logits, y)
            value = float(loss.data)
            if not math.isfinite(value):
                msg = (
                    f"non-finite loss {value} at epoch {epoch} batch {b}; sample indices "
                    f"{[int(i) for i in idx]}; augmentation seed key (seed={run.seed}, epoch={epoch}, index)"
                )
                if out is not None:
                    (out / "nan_dump.kv").write_text(
                        f"epoch={epoch}\nbatch={b}\nindices={','.join(str(int(i)) for i in idx)}\nseed={run.seed}\n"
                    )
                raise TrainingDivergedError(msg, epoch, b, idx, run.seed)
            for p in params:
                p.grad = None
            backward(loss)
            adam_step(params, [p.grad for p in params], state)
            losses.append(value)
            steps += 1
            if run.max_steps and steps >= run.max_steps:
                done = True
                break
        rec = {"epoch": epoch + 1, "step": steps, "lr": state.lr, "loss": float(np.mean(losses))}
        rec["time_s"] = time.perf_counter() - t0
        is_last = done or epoch == run.epochs - 1
        have_val = val_images is not None and len(val_images) > 0
        if have_val and ((epoch + 1) % max(1, run.eval_every) == 0 or is_last):
            rep = evaluate(model, val_images, val_masks)
            model.train()
            rec.update({"val_iou": rep["iou"], "val_niou": rep["niou"], "val_f1": rep["f1"]})
            if rep["iou"] > result.best_val_iou:
                result.best_val_iou = rep["iou"]
                result.best_epoch = epoch + 1
                if out is not None:
                    result.checkpoint = save_checkpoint(model, out / "best.ckpt")
        result.history.append(rec)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(_log_line(rec))
        if callback is not None:
            callback(rec)
        if done:
            break
    result.steps = steps
    if out is not None:
        last = save_checkpoint(model, out / "last.ckpt")
        if result.checkpoint is None:
            result.checkpoint = last
    return result


def save_checkpoint(model: SAMamba, path) -> Path:
    path = Path(path)
    checkpoint.save(path, model.state_dict())
    model.cfg.save(path.with_suffix(".cfg"))
    return path


def load_checkpoint(path, cfg: ModelConfig | None = None, dtype=None) -> SAMamba:
    """Rebuild a model from ``<path>`` and its sibling ``.cfg``.

    When ``cfg`` is given the stored config is ignored; a structural
    mismatch raises :class:`samamba.nn.StateMismatchError`.
    """
    path = Path(path)
    state = checkpoint.load(path)
    if cfg is None:
        cfg_path = path.with_suffix(".cfg")
        cfg = ModelConfig.load(cfg_path) if cfg_path.exists() else ModelConfig()
    if dtype is None:
        dtype = next(iter(state.values())).dtype if state else np.float32
    model = SAMamba(cfg, dtype=dtype)
    model.load_state_dict(state)
    model.eval()
    return model


def train_from_disk(run: RunConfig, out_dir=None) -> TrainResult:
    timgs, tmasks, _ = load_split(run.data_root, run.train_split)
    try:
        vimgs, vmasks, _ = load_split(run.data_root, run.val_split)
    except ValueError:
        vimgs = vmasks = None
    return train(run, timgs, tmasks, vimgs, vmasks, out_dir=out_dir or run.out_dir)


# -- sweeps -------------------------------------------------------------------

SWEEPS = {
    "heads": ("(a) CSI heads", "csi_heads", (1, 2, 4, 8)),
    "segments": ("(b) DPCF segments", "dpcf_segments", (1, 2, 4, 8)),
    "fusion": ("(c) DPCF fusion", "fusion", ("add", "concat", "adaptive")),
}
FUSION_LABELS = {"add": "Addition + Conv", "concat": "Concatenation + Conv", "adaptive": "Adaptive"}
SWEEP_HEADER = ("parameter_type", "configuration", "iou", "niou", "f1", "default")


def sweep(
    run: RunConfig,
    data: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    which=("heads", "segments", "fusion"),
    out_dir=None,
) -> list[dict]:
    """Train one model per setting and report test metrics per sensitivity section.

    ``data`` is ``(train_images, train_masks, test_images, test_masks)``.
    Rows follow the layout of a sensitivity table: a section label, the
    configuration, IoU, nIoU, F1, and whether the setting is the default.
    """
    ti, tm, ei, em = data
    base = run.model
    rows = []
    for key in which:
        title, attr, values = SWEEPS[key]
        for v in values:
            cfg = base.replace(**{attr: v})
            sub = None if out_dir is None else Path(out_dir) / f"{key}_{v}"
            res = train(run.replace(model=cfg), ti, tm, out_dir=sub)
            rep = evaluate(res.model, ei, em)
            label = FUSION_LABELS.get(v, str(v)) if key == "fusion" else str(v)
            rows.append(
                {
                    "parameter_type": title,
                    "configuration": label,
                    "iou": rep["iou"],
                    "niou": rep["niou"],
                    "f1": rep["f1"],
                    "default": getattr(base, attr) == v,
                }
            )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sensitivity.tsv").write_text(format_sweep(rows))
    return rows


def format_sweep(rows: list[dict]) -> str:
    lines = ["\t".join(SWEEP_HEADER)]
    for r in rows:
        lines.append(
            "\t".join(
                [
                    r["parameter_type"],
                    r["configuration"],
                    f"{100 * r['iou']:.2f}",
                    f"{100 * r['niou']:.2f}",
                    f"{100 * r['f1']:.2f}",
                    "*" if r["default"] else "",
                ]
            )
        )
    return "\n".join(lines) + "\n"


ABLATIONS = {
    "full": {},
    "concat-fusion": {"fusion": "concat"},
    "no-csi": {"use_csi": False},
}


def ablation(run: RunConfig, data, variants=ABLATIONS) -> dict[str, dict]:
    """Test metrics for the full model and each component-removed variant."""
    ti, tm, ei, em = data
    out = {}
    for name, change in variants.items():
        res = train(run.replace(model=run.model.replace(**change)), ti, tm)
        out[name] = evaluate(res.model, ei, em)
    return out
