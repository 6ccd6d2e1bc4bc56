"""Cross-channel state-space interaction block for skip connections.

Pipeline on a (B, C_in, H, W) map:

1. 1x1 conv to the aligned width ``C``; raster-flatten to a (B, HW, C) sequence.
2. Split channels into ``heads`` groups of ``D = C / heads``; every group runs
   its own ViM block ``MLP(LN(Mamba(m'))) + gamma * m'`` where Mamba is a
   bidirectional selective scan followed by an output projection.
3. Recombine: output channel ``j * heads + i`` takes channel ``j`` of head ``i``.
4. 1x1 conv, batch norm, SiLU, then channel gate and spatial gate.
"""
from __future__ import annotations

import math

import numpy as np

from ..engine import functional as F
from ..engine.tensor import Tensor, concat, flip
from ..nn import BatchNorm2d, ChannelAttention, Conv2d, Module, Parameter, SpatialAttention
from ..ssm import SELECTIVE, SsmParams, init_selective_params, selective_scan


def recombination_index(channels: int, heads: int) -> np.ndarray:
    """``perm`` with ``recombined[..., k] = stacked[..., perm[k]]``.

    ``stacked`` orders channels head-major (``i * D + j``); the recombined
    order is index-major (``j * heads + i``).
    """
    if channels % heads:
        raise ValueError(f"{channels} channels cannot be split over {heads} heads")
    D = channels // heads
    k = np.arange(channels)
    j, i = np.divmod(k, heads)
    return i * D + j


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / max(dim, 1)))
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return out.astype(dtype)


class MambaHeads(Module):
    """``heads`` independent bidirectional selective-scan layers evaluated together.

    Scan parameters are stacked along a leading group axis of size
    ``2 * heads`` (forward heads first, then backward heads) or ``heads``
    when unidirectional.
    """

    def __init__(self, heads, dim, state_dim=16, bidirectional=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads = heads
        self.dim = dim
        self.bidirectional = bidirectional
        groups = 2 * heads if bidirectional else heads
        init = init_selective_params(rng, dim, state_dim, groups=(groups,), dtype=dtype)
        self.A_log = Parameter(init["A_log"])
        self.W_delta = Parameter(init["W_delta"])
        self.delta_bias = Parameter(init["delta_bias"])
        self.W_B = Parameter(init["W_B"])
        self.b_B = Parameter(init["b_B"])
        self.W_C = Parameter(init["W_C"])
        self.b_C = Parameter(init["b_C"])
        s = math.sqrt(3.0 / dim)
        self.W_out = Parameter(rng.uniform(-s, s, size=(heads, dim, dim)).astype(dtype))
        self.b_out = Parameter(np.zeros((heads, dim), dtype=dtype))

    def ssm_params(self) -> SsmParams:
        return SsmParams(
            A_log=self.A_log,
            mode=SELECTIVE,
            W_delta=self.W_delta,
            delta_bias=self.delta_bias,
            W_B=self.W_B,
            b_B=self.b_B,
            W_C=self.W_C,
            b_C=self.b_C,
        )

    def forward(self, x: Tensor) -> Tensor:
        """``x``: (heads, B, M, D) -> (heads, B, M, D)."""
        H = self.heads
        if self.bidirectional:
            xg = concat([x, flip(x, 2)], axis=0)
            y = selective_scan(xg, self.ssm_params())
            y = y[:H] + flip(y[H:], 2)
        else:
            y = selective_scan(x, self.ssm_params())
        D = self.dim
        return y @ self.W_out.reshape(H, 1, D, D) + self.b_out.reshape(H, 1, 1, D)


class ViMHeads(Module):
    """Per-head ``MLP(LN(Mamba(m))) + gamma * m`` with head-stacked weights."""

    def __init__(self, heads, dim, state_dim=16, mlp_ratio=2.0, bidirectional=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads = heads
        self.dim = dim
        hidden = max(int(dim * mlp_ratio), 1)
        self.hidden = hidden
        self.mamba = MambaHeads(heads, dim, state_dim, bidirectional, rng=rng, dtype=dtype)
        self.ln_weight = Parameter(np.ones((heads, dim), dtype=dtype))
        self.ln_bias = Parameter(np.zeros((heads, dim), dtype=dtype))
        s1, s2 = math.sqrt(3.0 / dim), math.sqrt(3.0 / hidden)
        self.W1 = Parameter(rng.uniform(-s1, s1, size=(heads, dim, hidden)).astype(dtype))
        self.b1 = Parameter(np.zeros((heads, hidden), dtype=dtype))
        self.W2 = Parameter(rng.uniform(-s2, s2, size=(heads, hidden, dim)).astype(dtype))
        self.b2 = Parameter(np.zeros((heads, dim), dtype=dtype))
        self.gamma = Parameter(np.ones(heads, dtype=dtype))

    def forward(self, m: Tensor) -> Tensor:
        H, D, Hd = self.heads, self.dim, self.hidden
        z = self.mamba(m)
        z = F.layer_norm(z, self.ln_weight.reshape(H, 1, 1, D), self.ln_bias.reshape(H, 1, 1, D), eps=1e-6)
        z = F.silu(z @ self.W1.reshape(H, 1, D, Hd) + self.b1.reshape(H, 1, 1, Hd))
        z = z @ self.W2.reshape(H, 1, Hd, D) + self.b2.reshape(H, 1, 1, D)
        return z + self.gamma.reshape(H, 1, 1, 1) * m


class CSI(Module):
    def __init__(
        self,
        cin,
        width=32,
        heads=4,
        state_dim=16,
        mlp_ratio=2.0,
        bidirectional=True,
        positional_embedding=False,
        attention_ratio=4,
        attention_kernel=7,
        attention_pooling="avgmax",
        rng=None,
        dtype=np.float32,
    ):
        super().__init__()
        if width % heads:
            raise ValueError(f"CSI width {width} is not divisible by {heads} heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.width = width
        self.heads = heads
        self.positional_embedding = positional_embedding
        self.align = Conv2d(cin, width, 1, rng=rng, dtype=dtype)
        self.vim = ViMHeads(heads, width // heads, state_dim, mlp_ratio, bidirectional, rng=rng, dtype=dtype)
        self.outer = Conv2d(width, width, 1, bias=False, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(width, dtype=dtype)
        self.channel_gate = ChannelAttention(width, attention_ratio, attention_pooling, rng=rng, dtype=dtype)
        self.spatial_gate = SpatialAttention(attention_kernel, attention_pooling, rng=rng, dtype=dtype)

    def head_outputs(self, x: Tensor) -> tuple[Tensor, tuple[int, int]]:
        """Aligned map -> per-head ViM outputs of shape (heads, B, HW, D)."""
        x = self.align(x)
        B, C, H, W = x.shape
        seq = x.reshape(B, C, H * W).transpose(0, 2, 1)
        if self.positional_embedding:
            seq = seq + Tensor(sinusoidal_positions(H * W, C, x.dtype))
        D = C // self.heads
        m_in = seq.reshape(B, H * W, self.heads, D).transpose(2, 0, 1, 3)
        return self.vim(m_in), (H, W)

    def recombine(self, m: Tensor, hw: tuple[int, int]) -> Tensor:
        """(heads, B, HW, D) -> (B, C, H, W) with channel ``j * heads + i``."""
        heads, B, M, D = m.shape
        H, W = hw
        seq = m.transpose(1, 2, 3, 0).reshape(B, M, D * heads)
        return seq.transpose(0, 2, 1).reshape(B, D * heads, H, W)

    def forward(self, x: Tensor) -> Tensor:
        m, hw = self.head_outputs(x)
        fo = F.silu(self.norm(self.outer(self.recombine(m, hw))))
        fc = self.channel_gate(fo) * fo
        return self.spatial_gate(fc) * fc


class PlainSkip(Module):
    """Skip path without state-space interaction: channel alignment only."""

    def __init__(self, cin, width, rng=None, dtype=np.float32):
        super().__init__()
        self.align = Conv2d(cin, width, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.align(x)
