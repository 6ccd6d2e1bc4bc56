"""Slow, loop-based reference implementations used as oracles.

Nothing here is vectorised beyond the innermost dot product; each function
follows its defining formula literally so it can be trusted by inspection.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, padding=0):
    """Direct cross-correlation: x (B, Cin, H, W), w (Cout, Cin, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = float((patch * w[o]).sum())
            if b is not None:
                out[n, o] += b[o]
    return out


def conv_transpose2d(x, w, b=None, stride=1):
    """Scatter form: every input pixel adds ``x * w`` into a k x k output patch."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    B, C, H, W = x.shape
    _, O, k, _ = w.shape
    out = np.zeros((B, O, (H - 1) * stride + k, (W - 1) * stride + k))
    for n in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[n, :, i * stride : i * stride + k, j * stride : j * stride + k] += x[n, c, i, j] * w[c]
    if b is not None:
        out += np.asarray(b)[None, :, None, None]
    return out


def selective_scan(x, delta, A, Bt, Ct):
    """Step-by-step scan for one sequence: x, delta (M, D); A (D, N); Bt, Ct (M, N)."""
    M, D = x.shape
    N = A.shape[1]
    h = np.zeros((D, N))
    y = np.zeros((M, D))
    for t in range(M):
        for d in range(D):
            for n in range(N):
                h[d, n] = math.exp(delta[t, d] * A[d, n]) * h[d, n] + delta[t, d] * Bt[t, n] * x[t, d]
            y[t, d] = sum(Ct[t, n] * h[d, n] for n in range(N))
    return y


def mask_counts(pred, target):
    """(TP, T, P) by visiting every pixel."""
    tp = t = p = 0
    for a, b in zip(np.asarray(pred).ravel(), np.asarray(target).ravel()):
        a, b = bool(a), bool(b)
        tp += a and b
        t += b
        p += a
    return tp, t, p


def metrics(preds, targets):
    """Dataset IoU, mean per-sample IoU, mean per-sample F1 (empty/empty = 1)."""
    tps, ts, ps = zip(*(mask_counts(p, t) for p, t in zip(preds, targets)))
    union = sum(t + p - tp for tp, t, p in zip(tps, ts, ps))
    iou = 1.0 if union == 0 else sum(tps) / union
    per_iou, per_f1 = [], []
    for tp, t, p in zip(tps, ts, ps):
        u = t + p - tp
        per_iou.append(1.0 if u == 0 else tp / u)
        if t == 0 and p == 0:
            per_f1.append(1.0)
        elif tp == 0:
            per_f1.append(0.0)
        else:
            # harmonic mean of precision tp/p and recall tp/t, over counts
            per_f1.append(2 * tp / (t + p))
    return iou, math.fsum(per_iou) / len(per_iou), math.fsum(per_f1) / len(per_f1)


def bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centre linear interpolation matrix (n_out, n_in), one row at a time."""
    W = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        f = src - lo
        W[i, lo] += 1 - f
        W[i, hi] += f
    return W


def adam(grads, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    """Scalar Adam trajectory for a fixed gradient sequence."""
    p, m, v = p0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(p)
    return out


def conv_macs(B, cin, cout, k, hout, wout):
    return B * cout * cin * k * k * hout * wout
