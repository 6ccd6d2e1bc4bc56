"""Encoder / skip-interaction / gated-decoder segmentation network."""
from __future__ import annotations

import math

import numpy as np

from ..engine import functional as F
from ..engine.tensor import ShapeError, Tensor, count_macs, no_grad
from ..nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module, ModuleList
from .config import ModelConfig
from .csi import CSI, PlainSkip
from .dpcf import DPCF
from .encoder import HierarchicalEncoder


class SegmentationHead(Module):
    """x4 transposed conv, 3x3 conv block, 1x1 conv to one logit channel."""

    def __init__(self, cin, hidden, prior=0.01, rng=None, dtype=np.float32):
        super().__init__()
        self.up = ConvTranspose2d(cin, hidden, 4, 4, rng=rng, dtype=dtype)
        self.conv = Conv2d(hidden, hidden, 3, bias=False, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(hidden, dtype=dtype)
        self.out = Conv2d(hidden, 1, 1, rng=rng, dtype=dtype)
        self.out.weight.data *= 0.1
        self.out.bias.data[:] = -math.log((1.0 - prior) / prior)

    def forward(self, x: Tensor) -> Tensor:
        x = F.silu(self.up(x))
        x = F.silu(self.norm(self.conv(x)))
        return self.out(x)


class SAMamba(Module):
    """Full network; ``forward`` maps (B, 3, H, W) images to (B, 1, H, W) logits."""

    def __init__(self, cfg: ModelConfig | None = None, dtype=np.float32):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        c = cfg.csi_width
        self.encoder = HierarchicalEncoder(cfg, rng=rng, dtype=dtype)
        skips = []
        for cin in cfg.stage_channels:
            if cfg.use_csi:
                skips.append(
                    CSI(
                        cin,
                        c,
                        cfg.csi_heads,
                        cfg.state_dim,
                        cfg.mlp_ratio,
                        cfg.bidirectional,
                        cfg.positional_embedding,
                        cfg.attention_ratio,
                        cfg.attention_kernel,
                        cfg.attention_pooling,
                        rng=rng,
                        dtype=dtype,
                    )
                )
            else:
                skips.append(PlainSkip(cin, c, rng=rng, dtype=dtype))
        self.skips = ModuleList(skips)
        self.decoder = ModuleList(
            DPCF(c, c, cfg.dpcf_segments, cfg.fusion, rng=rng, dtype=dtype) for _ in range(3)
        )
        self.head = SegmentationHead(c, cfg.head_channels, cfg.prior, rng=rng, dtype=dtype)

    def features(self, image: Tensor) -> list[Tensor]:
        return self.encoder(image)

    def forward(self, image: Tensor) -> Tensor:
        if not isinstance(image, Tensor):
            image = Tensor(np.asarray(image, dtype=self.dtype))
        if image.ndim != 4:
            raise ShapeError(f"expected (B, C, H, W) input, got {image.shape}")
        feats = self.encoder(image)
        skips = [s(f) for s, f in zip(self.skips, feats)]
        d = skips[3]
        # decoder stage k fuses skip level 2-k with the running deeper map
        for k, fuse in enumerate(self.decoder):
            d = fuse(skips[2 - k], d)
        return self.head(d)

    def predict_logits(self, image) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(image).data
        finally:
            self.train(was)


def count_params_flops(model: Module, input_extents: tuple[int, int], batch: int = 1, in_channels: int = 3):
    """Return ``(parameter count, multiply-accumulate count)`` for one forward pass.

    MACs are tallied from per-op formulas (conv: B*Cout*Cin*kh*kw*Hout*Wout,
    matmul: output size * inner extent, scan: sequences * M * N * D).
    """
    H, W = input_extents
    dtype = getattr(model, "dtype", np.float32)
    x = Tensor(np.zeros((batch, in_channels, H, W), dtype=dtype))
    was = model.training
    model.eval()
    try:
        with no_grad(), count_macs() as counter:
            model(x)
    finally:
        model.train(was)
    return model.num_parameters(), counter.total
