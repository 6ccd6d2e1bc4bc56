"""Segmentation losses on logits: soft IoU, Dice, focal, and their sum."""
from __future__ import annotations

import numpy as np

from .engine import functional as F
from .engine.tensor import Tensor, mean, sum_

SMOOTH = 1e-6


def _target(target, like: Tensor) -> Tensor:
    if isinstance(target, Tensor):
        return target
    return Tensor(np.asarray(target, dtype=like.dtype))


def soft_iou_loss(logits: Tensor, target, eps: float = SMOOTH) -> Tensor:
    """``1 - (sum p t + eps) / (sum p + sum t - sum p t + eps)``, ``p = sigmoid(logits)``."""
    t = _target(target, logits)
    p = F.sigmoid(logits)
    inter = sum_(p * t)
    union = sum_(p) + sum_(t) - inter
    return 1.0 - (inter + eps) / (union + eps)


def dice_loss(logits: Tensor, target, eps: float = SMOOTH) -> Tensor:
    t = _target(target, logits)
    p = F.sigmoid(logits)
    return 1.0 - (2.0 * sum_(p * t) + eps) / (sum_(p) + sum_(t) + eps)


def focal_loss(logits: Tensor, target, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Pixel mean of ``-alpha_t (1 - p_t)^gamma log p_t`` via log-sigmoid."""
    t = _target(target, logits)
    td = t.data
    # log p_t = log_sigmoid(z) on positives, log_sigmoid(-z) on negatives
    signed = logits * Tensor((2.0 * td - 1.0).astype(logits.dtype))
    log_pt = F.log_sigmoid(signed)
    pt = F.sigmoid(signed)
    alpha_t = Tensor((alpha * td + (1.0 - alpha) * (1.0 - td)).astype(logits.dtype))
    if gamma == 0:
        mod = alpha_t
    else:
        mod = alpha_t * (1.0 - pt) ** gamma
    return mean(-(mod * log_pt))


def total_loss(logits: Tensor, target) -> Tensor:
    """Unweighted sum of soft IoU, Dice and focal losses."""
    if tuple(np.shape(target.data if isinstance(target, Tensor) else target)) != logits.shape:
        raise ValueError("logits and target shapes differ")
    return soft_iou_loss(logits, target) + dice_loss(logits, target) + focal_loss(logits, target)
