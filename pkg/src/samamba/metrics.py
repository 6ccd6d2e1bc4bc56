"""Pixel-count segmentation metrics: dataset IoU, per-sample-mean nIoU, per-image F1.

Per-sample conventions where a ratio is 0/0 (both masks empty): IoU and F1
count as 1, rewarding a correct rejection.  An F1 denominator of zero with a
non-empty mask scores 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

THRESHOLD = 0.5


def binarize(prob: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(prob) > threshold


def pixel_counts(pred: np.ndarray, target: np.ndarray) -> tuple[int, int, int]:
    """``(TP, T, P)`` for one binary mask pair."""
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if pred.shape != target.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    return int(np.count_nonzero(pred & target)), int(np.count_nonzero(target)), int(np.count_nonzero(pred))


@dataclass
class EvalAccumulator:
    tp: list[int] = field(default_factory=list)
    t: list[int] = field(default_factory=list)
    p: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.tp)

    def add_counts(self, tp: int, t: int, p: int) -> None:
        if not 0 <= tp <= min(t, p):
            raise ValueError(f"inconsistent counts TP={tp}, T={t}, P={p}")
        self.tp.append(int(tp))
        self.t.append(int(t))
        self.p.append(int(p))

    def add(self, pred: np.ndarray, target: np.ndarray) -> None:
        self.add_counts(*pixel_counts(pred, target))

    def update(self, preds, targets) -> None:
        for pr, tg in zip(preds, targets):
            self.add(pr, tg)

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        """Union of two accumulators; metric values do not depend on order."""
        return EvalAccumulator(self.tp + other.tp, self.t + other.t, self.p + other.p)

    def arrays(self):
        return np.array(self.tp, dtype=np.int64), np.array(self.t, dtype=np.int64), np.array(self.p, dtype=np.int64)


def dataset_iou(acc: EvalAccumulator) -> float:
    tp, t, p = acc.arrays()
    union = int((t + p - tp).sum())
    if union == 0:
        warnings.warn("dataset_iou: no positive pixels in any prediction or target; defined as 1", RuntimeWarning)
        return 1.0
    return int(tp.sum()) / union


def per_sample_iou(acc: EvalAccumulator) -> np.ndarray:
    tp, t, p = acc.arrays()
    union = t + p - tp
    out = np.ones(len(tp))
    nz = union > 0
    out[nz] = tp[nz] / union[nz]
    return out


def niou(acc: EvalAccumulator) -> float:
    if acc.n == 0:
        return 1.0
    # fsum is correctly rounded, so the mean does not depend on sample order
    return math.fsum(per_sample_iou(acc)) / acc.n


def per_sample_f1(acc: EvalAccumulator) -> np.ndarray:
    tp, t, p = acc.arrays()
    out = np.zeros(len(tp))
    both_empty = (t == 0) & (p == 0)
    out[both_empty] = 1.0
    # 2PR/(P+R) = 2TP/(T+P)
    ok = (tp > 0) & ~both_empty
    out[ok] = 2.0 * tp[ok] / (t[ok] + p[ok])
    return out


def f1(acc: EvalAccumulator) -> float:
    if acc.n == 0:
        return 1.0
    return math.fsum(per_sample_f1(acc)) / acc.n


def summarize(acc: EvalAccumulator) -> dict[str, float]:
    return {"iou": dataset_iou(acc), "niou": niou(acc), "f1": f1(acc), "n_samples": acc.n}


def evaluate_masks(preds, targets) -> dict[str, float]:
    acc = EvalAccumulator()
    acc.update(preds, targets)
    return summarize(acc)


def format_table(rows: dict[str, dict[str, float]] | dict[str, float], delimiter: str = "\t") -> str:
    """Delimited text table; accepts one report or a mapping name -> report."""
    if rows and all(not isinstance(v, dict) for v in rows.values()):
        rows = {"result": rows}
    header = ["name", "iou", "niou", "f1", "n_samples"]
    lines = [delimiter.join(header)]
    for name, r in rows.items():
        lines.append(
            delimiter.join(
                [name, f"{r['iou']:.6f}", f"{r['niou']:.6f}", f"{r['f1']:.6f}", str(int(r["n_samples"]))]
            )
        )
    return "\n".join(lines) + "\n"


def write_report(report: dict[str, float], directory, stem: str = "metrics") -> tuple[Path, Path]:
    """Write ``<stem>.tsv`` (table) and ``<stem>.kv`` (key=value lines)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = directory / f"{stem}.tsv"
    kv = directory / f"{stem}.kv"
    table.write_text(format_table(report))
    kv.write_text("".join(f"{k}={_kv(report[k])}\n" for k in ("iou", "niou", "f1", "n_samples")))
    return table, kv


def read_kv(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = float(v) if k.strip() != "n_samples" else int(v)
    return out


def _kv(v) -> str:
    return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))
