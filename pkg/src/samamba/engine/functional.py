"""Differentiable layer primitives: activations, convolutions, norms, resampling."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, record_macs, unbroadcast

__all__ = [
    "sigmoid",
    "silu",
    "relu",
    "softplus",
    "log_sigmoid",
    "softmax",
    "activation",
    "conv2d",
    "conv_transpose2d",
    "layer_norm",
    "batch_norm",
    "bilinear_upsample",
    "bilinear_weights",
    "linear",
]


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow for any input, and exactly 0.5 at 0
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return Tensor._result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _stable_sigmoid(xd)

    def bw(g):
        return (g * (s * (1.0 + xd * (1.0 - s))),)

    return Tensor._result(xd * s, (x,), bw, "silu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0.0, xd).astype(xd.dtype)
    s = _stable_sigmoid(xd)
    return Tensor._result(out, (x,), lambda g: (g * s,), "softplus")


def log_sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = -np.logaddexp(0.0, -xd).astype(xd.dtype)
    s = _stable_sigmoid(xd)
    return Tensor._result(out, (x,), lambda g: (g * (1.0 - s),), "log_sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._result(s, (x,), bw, "softmax")


_ACTIVATIONS = {"sigmoid": sigmoid, "silu": silu, "relu": relu, "softmax": softmax, "identity": lambda x: x}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind.replace("softmax-last-dim", "softmax")]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the trailing axis; ``w`` has shape (in, out)."""
    y = x @ w
    return y + b if b is not None else y


# ---------------------------------------------------------------------------
# convolution (NCHW)


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation of ``x`` (B,Cin,H,W) with ``w`` (Cout,Cin,kh,kw)."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    O, Ci, kh, kw = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Ci} ({x.shape} vs {w.shape})")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    xd, wd = x.data, w.data
    wmat = wd.reshape(O, -1)

    if kh == 1 and kw == 1 and ph == 0 and pw == 0:
        xs = xd[:, :, ::sh, ::sw] if (sh > 1 or sw > 1) else xd
        cols = np.ascontiguousarray(xs.transpose(0, 2, 3, 1)).reshape(-1, C)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
        # (B, C, Ho, Wo, kh, kw) -> (B*Ho*Wo, C*kh*kw)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    out = cols @ wmat.T
    record_macs("conv2d", B * O * C * kh * kw * Ho * Wo)
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        gw = (g2.T @ cols).reshape(wd.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad or x._node is not None:
            gcols = g2 @ wmat
            if kh == 1 and kw == 1 and ph == 0 and pw == 0:
                gs = gcols.reshape(B, Ho, Wo, C).transpose(0, 3, 1, 2)
                if sh > 1 or sw > 1:
                    gx = np.zeros_like(xd)
                    gx[:, :, ::sh, ::sw][:, :, :Ho, :Wo] = gs
                else:
                    gx = np.ascontiguousarray(gs)
            else:
                gc = np.ascontiguousarray(gcols.reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2))
                gxp = np.zeros((B, C, Hp, Wp), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] += gc[:, :, i, j]
                gx = gxp[:, :, ph : ph + H, pw : pw + W]
                gx = np.ascontiguousarray(gx)
        return (gx, gw) if b is None else (gx, gw, gb)

    return Tensor._result(out, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed convolution; ``w`` has shape (Cin, Cout, k, k), no padding.

    Output extents are ``(H - 1) * stride + k``.
    """
    B, C, H, W = x.shape
    Ci, O, kh, kw = w.shape
    if Ci != C:
        raise ShapeError(f"conv_transpose2d: input has {C} channels, kernel expects {Ci}")
    s = stride
    Ho, Wo = (H - 1) * s + kh, (W - 1) * s + kw
    xd, wd = x.data, w.data
    rows = np.ascontiguousarray(xd.transpose(0, 2, 3, 1)).reshape(-1, C)
    wmat = wd.reshape(C, O * kh * kw)
    contrib = (rows @ wmat).reshape(B, H, W, O, kh, kw)
    record_macs("conv_transpose2d", B * C * O * kh * kw * H * W)
    out = np.zeros((B, O, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + s * H : s, j : j + s * W : s] += contrib[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if b is not None:
        out += b.data.reshape(1, O, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gcon = np.empty((B, H, W, O, kh, kw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcon[:, :, :, :, i, j] = g[:, :, i : i + s * H : s, j : j + s * W : s].transpose(0, 2, 3, 1)
        gcon = gcon.reshape(-1, O * kh * kw)
        gw = (rows.T @ gcon).reshape(wd.shape) if w.requires_grad else None
        gx = (gcon @ wmat.T).reshape(B, H, W, C).transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        gx = np.ascontiguousarray(gx)
        return (gx, gw) if b is None else (gx, gw, gb)

    return Tensor._result(out, parents, bw, "conv_transpose2d")


# ---------------------------------------------------------------------------
# normalisation


def layer_norm(x: Tensor, scale: Tensor | None, shift: Tensor | None, eps: float = 1e-6) -> Tensor:
    """Normalise over the trailing axis, then apply ``scale`` and ``shift``."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    sd = scale.data if scale is not None else None
    out = xhat * sd if sd is not None else xhat.copy()
    if shift is not None:
        out = out + shift.data
    parents = tuple(t for t in (x, scale, shift) if t is not None)

    def bw(g):
        gs = unbroadcast(g * xhat, scale.shape) if scale is not None else None
        gb = unbroadcast(g, shift.shape) if shift is not None else None
        gh = g * sd if sd is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        res = [gx]
        if scale is not None:
            res.append(gs)
        if shift is not None:
            res.append(gb)
        return tuple(res)

    return Tensor._result(out, parents, bw, "layer_norm")


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation of an NCHW tensor.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional); in evaluation mode
    the running buffers are used.
    """
    if eps <= 0:
        raise ValueError("batch_norm: eps must be positive")
    xd = x.data
    axes = (0, 2, 3)
    shp = (1, -1, 1, 1)
    sd = scale.data.reshape(shp)
    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        m = xd.size // xd.shape[1]
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(-1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = xhat * sd + shift.data.reshape(shp)

        def bw(g):
            gs = (g * xhat).sum(axis=axes)
            gb = g.sum(axis=axes)
            gh = g * sd
            gx = inv * (gh - gh.mean(axis=axes, keepdims=True) - xhat * (gh * xhat).mean(axis=axes, keepdims=True))
            return gx, gs.reshape(scale.shape), gb.reshape(shift.shape)

    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype).reshape(shp)
        xhat = (xd - running_mean.astype(xd.dtype).reshape(shp)) * inv
        out = xhat * sd + shift.data.reshape(shp)

        def bw(g):
            gs = (g * xhat).sum(axis=axes)
            gb = g.sum(axis=axes)
            return g * sd * inv, gs.reshape(scale.shape), gb.reshape(shift.shape)

    return Tensor._result(np.ascontiguousarray(out), (x, scale, shift), bw, "batch_norm")


# ---------------------------------------------------------------------------
# resampling


def bilinear_weights(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix (n_out, n_in) for the half-pixel (align_corners=False) rule."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the trailing two axes by separable linear interpolation."""
    H, W = x.shape[-2:]
    if out_h < H or out_w < W:
        raise ShapeError(f"bilinear_upsample: target {out_h}x{out_w} smaller than input {H}x{W}")
    if (out_h, out_w) == (H, W):
        return x
    wh = bilinear_weights(H, out_h, x.dtype)
    ww = bilinear_weights(W, out_w, x.dtype)
    out = np.ascontiguousarray(wh @ x.data @ ww.T)

    def bw(g):
        return (np.ascontiguousarray(wh.T @ g @ ww),)

    return Tensor._result(out, (x,), bw, "bilinear_upsample")
