"""Gated fusion of a high-resolution skip map with upsampled decoder context."""
from __future__ import annotations

import numpy as np

from ..engine import functional as F
from ..engine.tensor import Tensor, concat
from ..nn import Conv2d, ConvBlock, Module, Parameter


class DPCF(Module):
    """Fuse ``f_high`` (B, C, H, W) with ``f_low`` (B, C_l, H_l, W_l).

    ``fusion`` selects the combination rule after upsampling and aligning
    ``f_low``:

    * ``"adaptive"``: the channels are cut into ``segments`` equal groups and
      group ``i`` is mixed as ``beta_i * low + (1 - beta_i) * high`` with
      ``beta_i = sigmoid(alpha_i)`` broadcast over space and channels;
    * ``"add"``: ``high + low``;
    * ``"concat"``: channel concatenation (the refinement conv maps 2C -> C).

    A 3x3 conv block refines the result.
    """

    def __init__(self, channels, low_channels, segments=4, fusion="adaptive", alpha_init=0.0, rng=None, dtype=np.float32):
        super().__init__()
        if channels % segments:
            raise ValueError(f"{channels} channels cannot be cut into {segments} segments")
        self.channels = channels
        self.segments = segments
        self.fusion = fusion
        self.align = Conv2d(low_channels, channels, 1, rng=rng, dtype=dtype)
        if fusion == "adaptive":
            self.alpha = Parameter(np.full(segments, alpha_init, dtype=dtype))
        elif fusion not in ("add", "concat"):
            raise ValueError(f"unknown fusion {fusion!r}")
        cin = 2 * channels if fusion == "concat" else channels
        self.refine = ConvBlock(cin, channels, 3, act="silu", rng=rng, dtype=dtype)

    def gate(self, shape) -> Tensor:
        """``beta`` expanded to (1, C, 1, 1): one value per channel segment."""
        seg = self.channels // self.segments
        beta = F.sigmoid(self.alpha).reshape(self.segments, 1)
        ones = Tensor(np.ones((1, seg), dtype=self.alpha.dtype))
        return (beta * ones).reshape(1, self.channels, 1, 1)

    def fuse(self, f_high: Tensor, f_low: Tensor) -> Tensor:
        """Fused map before the refinement block."""
        H, W = f_high.shape[-2:]
        low = self.align(F.bilinear_upsample(f_low, H, W))
        if self.fusion == "add":
            return f_high + low
        if self.fusion == "concat":
            return concat([f_high, low], axis=1)
        beta = self.gate(f_high.shape)
        return beta * low + (1.0 - beta) * f_high

    def forward(self, f_high: Tensor, f_low: Tensor) -> Tensor:
        return self.refine(self.fuse(f_high, f_low))
