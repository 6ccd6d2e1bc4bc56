"""Parameter containers and reusable network blocks."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .engine import functional as F
from .engine.tensor import Tensor, concat, mean, max_

__all__ = [
    "StateMismatchError",
    "Parameter",
    "Module",
    "ModuleList",
    "Conv2d",
    "ConvTranspose2d",
    "Linear",
    "BatchNorm2d",
    "LayerNorm",
    "MLP",
    "ChannelAttention",
    "SpatialAttention",
    "ConvBlock",
]


class StateMismatchError(KeyError):
    """A state dict does not match a module's parameters and buffers."""

    def __init__(self, missing, unexpected, shapes):
        self.missing, self.unexpected, self.shapes = list(missing), list(unexpected), list(shapes)
        super().__init__(str(self))

    def __str__(self) -> str:
        parts = []
        if self.missing:
            parts.append("missing keys: " + ", ".join(self.missing))
        if self.unexpected:
            parts.append("unexpected keys: " + ", ".join(self.unexpected))
        if self.shapes:
            parts.append("shape mismatches: " + "; ".join(self.shapes))
        return "state mismatch; " + " | ".join(parts)


class Parameter(Tensor):
    """A leaf tensor that is trained unless frozen."""

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


class Module:
    """Minimal module tree: parameters, buffers, train/eval flag."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    # -- traversal -------------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, m in self._modules.items():
            yield from m.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "", trainable_only: bool = False) -> Iterator[tuple[str, Parameter]]:
        for mname, m in self.named_modules(prefix):
            for pname, p in m._params.items():
                if trainable_only and not p.requires_grad:
                    continue
                yield (f"{mname}.{pname}" if mname else pname), p

    def parameters(self, trainable_only: bool = False) -> list[Parameter]:
        return [p for _, p in self.named_parameters(trainable_only=trainable_only)]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for mname, m in self.named_modules():
            for bname, b in m._buffers.items():
                yield (f"{mname}.{bname}" if mname else bname), b

    def num_parameters(self, trainable_only: bool = False) -> int:
        return int(sum(p.size for p in self.parameters(trainable_only)))

    # -- state -----------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update({f"buffer:{name}": b.copy() for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = {f"buffer:{k}": b for k, b in self.named_buffers()}
        targets = {**{k: p.data for k, p in own.items()}, **bufs}
        missing = sorted(set(targets) - set(state))
        extra = sorted(set(state) - set(targets))
        shapes = sorted(
            f"{k} {tuple(state[k].shape)} vs {tuple(targets[k].shape)}"
            for k in set(state) & set(targets)
            if state[k].shape != targets[k].shape
        )
        if missing or extra or shapes:
            raise StateMismatchError(missing, extra, shapes)
        for name, p in own.items():
            p.data[...] = state[name]
        for name, b in bufs.items():
            b[...] = state[name]

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for _, m in self.named_modules():
            for k, b in list(m._buffers.items()):
                m.register_buffer(k, b.astype(dtype))
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._modules)), m)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i):
        return list(self._modules.values())[i]


def _uniform(rng, fan_in, shape, dtype, gain=1.0):
    bound = gain * math.sqrt(3.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=1, stride=1, padding=None, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"kernel extent must be odd, got {kernel}")
        rng = _rng(rng)
        fan_in = cin * kernel * kernel
        self.stride = stride
        self.padding = (kernel - 1) // 2 if padding is None else padding
        self.weight = Parameter(_uniform(rng, fan_in, (cout, cin, kernel, kernel), dtype, gain=math.sqrt(2.0)))
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = _rng(rng)
        self.stride = stride
        self.weight = Parameter(_uniform(rng, cin, (cin, cout, kernel, kernel), dtype, gain=math.sqrt(2.0)))
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride)


class Linear(Module):
    """Affine map over the trailing axis; weight stored as (in, out)."""

    def __init__(self, din, dout, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = _rng(rng)
        self.weight = Parameter(_uniform(rng, din, (din, dout), dtype))
        self.bias = Parameter(np.zeros(dout, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-6, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Two affine layers with an activation between; keeps the trailing extent."""

    def __init__(self, dim, hidden_ratio=2, act="silu", rng=None, dtype=np.float32):
        super().__init__()
        rng = _rng(rng)
        hidden = int(dim * hidden_ratio)
        self.act = act
        self.fc1 = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.activation(self.act, self.fc1(x)))


class ChannelAttention(Module):
    """Channel gate in (0,1)^C from pooled descriptors through a shared MLP.

    ``pooling`` is ``"avgmax"`` (sum of the MLP applied to average- and
    max-pooled vectors) or ``"avg"``.
    """

    def __init__(self, channels, ratio=4, pooling="avgmax", rng=None, dtype=np.float32):
        super().__init__()
        rng = _rng(rng)
        if pooling not in ("avg", "avgmax"):
            raise ValueError(f"unknown pooling {pooling!r}")
        hidden = max(channels // ratio, 1)
        self.pooling = pooling
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def _mlp(self, v):
        return self.fc2(F.relu(self.fc1(v)))

    def forward(self, x: Tensor) -> Tensor:
        B, C = x.shape[:2]
        z = self._mlp(mean(x, axis=(2, 3)))
        if self.pooling == "avgmax":
            z = z + self._mlp(max_(x, axis=(2, 3)))
        return F.sigmoid(z).reshape(B, C, 1, 1)


class SpatialAttention(Module):
    """Spatial gate in (0,1)^{HxW} from channel-pooled maps through a k x k conv."""

    def __init__(self, kernel=7, pooling="avgmax", rng=None, dtype=np.float32):
        super().__init__()
        if pooling not in ("avg", "avgmax"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.pooling = pooling
        cin = 2 if pooling == "avgmax" else 1
        self.conv = Conv2d(cin, 1, kernel, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = mean(x, axis=1, keepdims=True)
        if self.pooling == "avgmax":
            pooled = concat([pooled, max_(x, axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.conv(pooled))


class ConvBlock(Module):
    """conv -> batch norm -> activation, stride 1 with same padding by default."""

    def __init__(self, cin, cout, kernel=3, act="silu", stride=1, rng=None, dtype=np.float32):
        super().__init__()
        self.act = act
        self.conv = Conv2d(cin, cout, kernel, stride=stride, bias=False, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.activation(self.act, self.norm(self.conv(x)))
