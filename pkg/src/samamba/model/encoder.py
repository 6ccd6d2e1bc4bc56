"""Four-stage hierarchical convolutional encoder with adapters before each stage.

Stand-in for a pretrained hierarchical backbone: a stride-4 patch embedding
followed by stages that halve the resolution (after the first) and apply
residual conv blocks.  Stage ``i`` (1-based) emits ``C_i`` channels at
``H / 2**(i+1)``.
"""
from __future__ import annotations

import numpy as np

from ..engine.tensor import ShapeError, Tensor
from ..nn import ConvBlock, Module, ModuleList
from .fs_adapter import FSAdapter


class ResidualBlock(Module):
    def __init__(self, channels, rng=None, dtype=np.float32):
        super().__init__()
        self.body = ConvBlock(channels, channels, 3, act="silu", rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.body(x)


class EncoderStage(Module):
    def __init__(self, cin, cout, downsample: bool, blocks: int, use_adapter: bool, rng=None, dtype=np.float32):
        super().__init__()
        self.down = ConvBlock(cin, cout, 3, stride=2, rng=rng, dtype=dtype) if downsample else None
        self.adapter = FSAdapter(cout, rng=rng, dtype=dtype) if use_adapter else None
        self.blocks = ModuleList(ResidualBlock(cout, rng=rng, dtype=dtype) for _ in range(blocks))

    def forward(self, x: Tensor) -> Tensor:
        if self.down is not None:
            x = self.down(x)
        if self.adapter is not None:
            x = self.adapter(x)
        for blk in self.blocks:
            x = blk(x)
        return x


class HierarchicalEncoder(Module):
    """Returns the 4-level feature pyramid ``[F1, F2, F3, F4]``."""

    def __init__(self, cfg, rng=None, dtype=np.float32):
        super().__init__()
        widths = cfg.stage_channels
        self.stem = ConvBlock(cfg.in_channels, widths[0], 5, stride=4, rng=rng, dtype=dtype)
        stages = []
        for i, c in enumerate(widths):
            cin = widths[i - 1] if i else widths[0]
            stages.append(EncoderStage(cin, c, i > 0, cfg.blocks_per_stage, cfg.use_adapter, rng=rng, dtype=dtype))
        self.stages = ModuleList(stages)
        if cfg.freeze_encoder:
            self.freeze_backbone()

    def backbone_parameters(self):
        return [p for name, p in self.named_parameters() if ".adapter." not in name]

    def adapter_parameters(self):
        return [p for name, p in self.named_parameters() if ".adapter." in name]

    def freeze_backbone(self) -> None:
        for p in self.backbone_parameters():
            p.requires_grad = False

    def forward(self, image: Tensor) -> list[Tensor]:
        H, W = image.shape[-2:]
        if H % 32 or W % 32:
            raise ShapeError(f"encoder input extents must be divisible by 32, got {H}x{W}")
        x = self.stem(image)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats
