"""Feature-selection adapter: similarity-weighted channel maps plus channel mixing."""
from __future__ import annotations

import warnings

import numpy as np

from ..engine import functional as F
from ..engine.tensor import Tensor, clamp_min, sqrt, sum_
from ..nn import Conv2d, Module, Parameter

_EPS2 = 1e-24


def cosine_sim(a, b) -> float:
    """``max(0, a.b / (|a| |b|))``; zero vectors give 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        warnings.warn("cosine_sim: zero-norm operand, similarity defined as 0", RuntimeWarning)
        return 0.0
    return max(0.0, float(a @ b) / (na * nb))


def channel_similarity(tokens: Tensor, xi: Tensor) -> Tensor:
    """Clamped cosine similarity of every channel map with the task map.

    ``tokens`` is (B, HW, C).  Each channel map ``t_i`` (a column, length HW)
    is compared with ``tokens @ xi``, the task embedding projected into the
    same HW space.  Returns (B, 1, C) weights in [0, 1].
    """
    target = tokens @ xi.reshape(-1, 1)  # (B, HW, 1)
    dots = sum_(tokens * target, axis=1, keepdims=True)  # (B, 1, C)
    n_t = sum_(tokens * tokens, axis=1, keepdims=True)
    n_s = sum_(target * target, axis=1, keepdims=True)
    denom = sqrt(clamp_min(n_t * n_s, _EPS2))
    return clamp_min(dots / denom, 0.0)


class FSAdapter(Module):
    """Residual adapter ``x + Conv1x1(reshape(select(x) @ P))``."""

    def __init__(self, channels: int, rng=None, dtype=np.float32, branch_scale: float = 0.1):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        xi = rng.standard_normal(channels)
        self.xi = Parameter((xi / np.linalg.norm(xi)).astype(dtype))
        P = np.eye(channels) + rng.standard_normal((channels, channels)) / np.sqrt(channels) * 0.1
        self.P = Parameter(P.astype(dtype))
        self.conv = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.conv.weight.data *= branch_scale

    def similarity(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        tokens = x.reshape(B, C, H * W).transpose(0, 2, 1)
        return channel_similarity(tokens, self.xi)

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        tokens = x.reshape(B, C, H * W).transpose(0, 2, 1)  # (B, HW, C)
        weighted = tokens * channel_similarity(tokens, self.xi)
        mixed = weighted @ self.P
        spatial = mixed.transpose(0, 2, 1).reshape(B, C, H, W)
        return self.conv(spatial) + x


def fs_adapter(x: Tensor, xi: Tensor, P: Tensor, conv_w: Tensor, conv_b: Tensor | None = None) -> Tensor:
    """Functional form of :class:`FSAdapter` on an NCHW tensor."""
    B, C, H, W = x.shape
    tokens = x.reshape(B, C, H * W).transpose(0, 2, 1)
    weighted = tokens * channel_similarity(tokens, xi)
    spatial = (weighted @ P).transpose(0, 2, 1).reshape(B, C, H, W)
    return F.conv2d(spatial, conv_w, conv_b) + x
