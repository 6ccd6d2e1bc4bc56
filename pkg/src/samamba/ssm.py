"""Diagonal state-space sequence models.

Two parameterisations share one discretisation rule:

* LTI: fixed ``B``, ``C`` and step ``delta``.  The recurrence
  ``h_t = Abar h_{t-1} + Bbar x_t, y_t = C h_t`` can then be unrolled into a
  causal convolution with kernel ``K[k] = C Abar^k Bbar``.
* selective: ``B_t``, ``C_t`` and ``delta_t`` are affine functions of ``x_t``
  (``delta`` passed through softplus), so the transition varies per step.

The continuous transition is diagonal and kept negative by storing a raw value
``A_log`` and using ``A = -exp(A_log)``.  Each of the ``D`` input channels owns
its own ``N``-dimensional state.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .engine import functional as F
from .engine.tensor import Tensor, flip, is_grad_enabled, record_macs

__all__ = [
    "SsmParams",
    "ModeError",
    "discretize",
    "scan_recurrent",
    "build_kernel",
    "scan_convolutional",
    "selective_scan",
    "selective_scan_core",
    "bidirectional_scan",
    "init_selective_params",
]

LTI = "lti"
SELECTIVE = "selective"


class ModeError(ValueError):
    """Operation not defined for the parameter mode."""


@dataclass
class SsmParams:
    """Parameters of a diagonal SSM over ``D`` channels with state size ``N``.

    ``A_log`` has shape (N,) or (D, N).  In LTI mode ``B`` and ``C`` have
    shape (N,) and ``delta`` is a scalar or (D,).  In selective mode the
    projections map a D-vector to N (``W_B``, ``W_C``) or D (``W_delta``);
    they may carry leading group axes for batched multi-head use, and may be
    numpy arrays or :class:`Tensor` parameters.
    """

    A_log: object
    mode: str = LTI
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    delta: float | np.ndarray = 1.0
    W_B: object = None
    b_B: object = None
    W_C: object = None
    b_C: object = None
    W_delta: object = None
    delta_bias: object = None
    zoh: str = "simplified"
    meta: dict = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return _data(self.A_log).shape[-1]

    @property
    def A(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return -np.exp(_data(self.A_log))

    @classmethod
    def lti(cls, A, B, C, delta=1.0, zoh="simplified") -> "SsmParams":
        """Build LTI params from continuous-time (negative) ``A`` values."""
        A = np.asarray(A, dtype=np.float64)
        if np.any(A > 0):
            raise ValueError("continuous A must be non-positive for a stable diagonal SSM")
        with np.errstate(divide="ignore"):
            A_log = np.log(-A)
        return cls(A_log=A_log, mode=LTI, B=np.asarray(B, float), C=np.asarray(C, float), delta=delta, zoh=zoh)

    @classmethod
    def from_discrete(cls, A_bar, B_bar, C) -> "SsmParams":
        """LTI params whose simplified discretisation at ``delta=1`` gives ``A_bar``, ``B_bar``."""
        A_bar = np.asarray(A_bar, dtype=np.float64)
        if np.any(A_bar < 0) or np.any(A_bar > 1):
            raise ValueError("discrete transition must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            A_log = np.log(-np.log(A_bar))
        return cls(A_log=A_log, mode=LTI, B=np.asarray(B_bar, float), C=np.asarray(C, float), delta=1.0)

    @classmethod
    def random_lti(cls, rng: np.random.Generator, N: int, D: int = 1) -> "SsmParams":
        return cls(
            A_log=rng.uniform(-2.0, 1.0, size=(D, N)),
            mode=LTI,
            B=rng.standard_normal(N),
            C=rng.standard_normal(N),
            delta=np.exp(rng.uniform(np.log(1e-2), np.log(0.5), size=D)),
        )


def _data(v):
    return v.data if isinstance(v, Tensor) else np.asarray(v)


# ---------------------------------------------------------------------------
# LTI path (numpy, float64)


def discretize(A, delta, B, zoh: str = "simplified") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Abar, Bbar)`` for continuous diagonal ``A`` and step ``delta``.

    ``A`` and ``delta`` broadcast against each other; ``B`` broadcasts over
    the state axis.  ``zoh="exact"`` uses ``Bbar = (exp(delta A) - 1) / A * B``
    (with the ``A -> 0`` limit ``delta B``).
    """
    A = np.asarray(A, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError(f"discretize: step must be positive, got min {delta.min()}")
    if np.any(A == 0):
        warnings.warn("discretize: A has zero entries; Abar = 1 is only marginally stable", RuntimeWarning)
    with np.errstate(invalid="ignore", over="ignore"):
        dA = delta * A
        dA = np.where(np.isnan(dA), -np.inf, dA)
        A_bar = np.exp(dA)
    if zoh == "simplified":
        B_bar = delta * B
    elif zoh == "exact":
        with np.errstate(divide="ignore", invalid="ignore"):
            B_bar = np.where(A == 0, delta * B, np.expm1(dA) / np.where(A == 0, 1.0, A) * B)
    else:
        raise ValueError(f"unknown zoh rule {zoh!r}")
    return A_bar, B_bar


def _lti_discrete(params: SsmParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if params.mode != LTI:
        raise ModeError("operation requires LTI parameters")
    A = params.A
    delta = np.asarray(params.delta, dtype=np.float64)
    if delta.ndim == 1 and A.ndim == 2:
        delta = delta[:, None]
    A_bar, B_bar = discretize(A, delta, params.B, params.zoh)
    return A_bar, B_bar, np.asarray(params.C, dtype=np.float64)


def _as_channels(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(_data(x), dtype=np.float64)
    if x.ndim == 1:
        return x[:, None], True
    return x, False


def scan_recurrent(x, params: SsmParams) -> np.ndarray:
    """Run the LTI recurrence over ``x`` of shape (M,) or (M, D) with ``h_0 = 0``."""
    A_bar, B_bar, C = _lti_discrete(params)
    xs, squeeze = _as_channels(x)
    M, D = xs.shape
    A_bar = np.broadcast_to(A_bar, (D, A_bar.shape[-1]))
    B_bar = np.broadcast_to(B_bar, A_bar.shape)
    h = np.zeros(A_bar.shape)
    y = np.empty((M, D))
    for t in range(M):
        h = A_bar * h + B_bar * xs[t][:, None]
        y[t] = h @ C
    return y[:, 0] if squeeze else y


def build_kernel(params: SsmParams, M: int) -> np.ndarray:
    """``K[k] = C Abar^k Bbar`` for k < M; shape (M,) or (M, D) for per-channel A."""
    if params.mode != LTI:
        raise ModeError("the convolution kernel only exists for LTI parameters")
    if M < 1:
        raise ValueError("kernel length must be positive")
    A_bar, B_bar, C = _lti_discrete(params)
    k = np.arange(M)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        if A_bar.ndim == 1:
            powers = A_bar[None, :] ** k
            return (powers * B_bar) @ C
        powers = A_bar[None, :, :] ** k[:, :, None]
        return (powers * B_bar[None]) @ C


def scan_convolutional(x, params: SsmParams) -> np.ndarray:
    """Causal convolution ``y = x * K``; equals :func:`scan_recurrent` for LTI params."""
    xs, squeeze = _as_channels(x)
    M, D = xs.shape
    K = build_kernel(params, M)
    if K.ndim == 1:
        K = np.broadcast_to(K[:, None], (M, D))
    y = np.empty((M, D))
    for d in range(D):
        y[:, d] = np.convolve(xs[:, d], K[:, d])[:M]
    return y[:, 0] if squeeze else y


# ---------------------------------------------------------------------------
# selective path (autograd)


@numba.njit(cache=True, fastmath=True)
def _scan_fwd(x, dt, A, Bt, Ct, y, hs):  # pragma: no cover - compiled
    G, L, M, D = x.shape
    N = A.shape[2]
    for g in range(G):
        for b in range(L):
            h = np.zeros((D, N), dtype=x.dtype)
            for t in range(M):
                for d in range(D):
                    dtv = dt[g, b, t, d]
                    u = dtv * x[g, b, t, d]
                    acc = 0.0
                    for n in range(N):
                        hv = math.exp(dtv * A[g, d, n]) * h[d, n] + u * Bt[g, b, t, n]
                        h[d, n] = hv
                        hs[g, b, t, d, n] = hv
                        acc += Ct[g, b, t, n] * hv
                    y[g, b, t, d] = acc


@numba.njit(cache=True, fastmath=True)
def _scan_fwd_infer(x, dt, A, Bt, Ct, y):  # pragma: no cover - compiled
    G, L, M, D = x.shape
    N = A.shape[2]
    for g in range(G):
        for b in range(L):
            h = np.zeros((D, N), dtype=x.dtype)
            for t in range(M):
                for d in range(D):
                    dtv = dt[g, b, t, d]
                    u = dtv * x[g, b, t, d]
                    acc = 0.0
                    for n in range(N):
                        hv = math.exp(dtv * A[g, d, n]) * h[d, n] + u * Bt[g, b, t, n]
                        h[d, n] = hv
                        acc += Ct[g, b, t, n] * hv
                    y[g, b, t, d] = acc


@numba.njit(cache=True, fastmath=True)
def _scan_bwd(x, dt, A, Bt, Ct, hs, gy, gx, gdt, gA, gB, gC):  # pragma: no cover - compiled
    G, L, M, D = x.shape
    N = A.shape[2]
    for g in range(G):
        for b in range(L):
            gh = np.zeros((D, N), dtype=x.dtype)
            for t in range(M - 1, -1, -1):
                for d in range(D):
                    dtv = dt[g, b, t, d]
                    xv = x[g, b, t, d]
                    gyv = gy[g, b, t, d]
                    gdt_acc = 0.0
                    gx_acc = 0.0
                    for n in range(N):
                        ghv = gh[d, n] + Ct[g, b, t, n] * gyv
                        gC[g, b, t, n] += gyv * hs[g, b, t, d, n]
                        a = math.exp(dtv * A[g, d, n])
                        hprev = hs[g, b, t - 1, d, n] if t > 0 else 0.0
                        ga = ghv * hprev * a
                        gdt_acc += ga * A[g, d, n] + ghv * Bt[g, b, t, n] * xv
                        gA[g, d, n] += ga * dtv
                        gB[g, b, t, n] += ghv * dtv * xv
                        gx_acc += ghv * dtv * Bt[g, b, t, n]
                        gh[d, n] = ghv * a
                    gdt[g, b, t, d] = gdt_acc
                    gx[g, b, t, d] = gx_acc


def selective_scan_core(x: Tensor, delta: Tensor, A: Tensor, Bt: Tensor, Ct: Tensor) -> Tensor:
    """Input-dependent diagonal scan.

    Shapes: ``x`` and ``delta`` (G, L, M, D); ``A`` (G, D, N) continuous
    (negative) transition; ``Bt`` and ``Ct`` (G, L, M, N).  Returns ``y`` of
    shape (G, L, M, D) with
    ``h_t = exp(delta_t A) h_{t-1} + delta_t B_t x_t`` and ``y_t = h_t C_t``.
    Runs in O(G L M D N) time.
    """
    dtype = x.dtype
    xd, dd, Ad, Bd, Cd = (np.ascontiguousarray(t.data, dtype=dtype) for t in (x, delta, A, Bt, Ct))
    G, L, M, D = xd.shape
    N = Ad.shape[-1]
    y = np.empty_like(xd)
    record_macs("selective_scan", G * L * M * D * N)
    parents = (x, delta, A, Bt, Ct)
    if not (is_grad_enabled() and any(t.requires_grad for t in parents)):
        # inference: keep only the running state, not the full history
        _scan_fwd_infer(xd, dd, Ad, Bd, Cd, y)
        return Tensor(y)
    hs = np.empty((G, L, M, D, N), dtype=dtype)
    _scan_fwd(xd, dd, Ad, Bd, Cd, y, hs)

    def bw(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        gx = np.empty_like(xd)
        gdt = np.empty_like(dd)
        gA = np.zeros_like(Ad)
        gB = np.zeros_like(Bd)
        gC = np.zeros_like(Cd)
        _scan_bwd(xd, dd, Ad, Bd, Cd, hs, g, gx, gdt, gA, gB, gC)
        return gx, gdt, gA, gB, gC

    return Tensor._result(y, parents, bw, "selective_scan")


def _t(v, dtype) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=dtype))


def selective_scan(x: Tensor, params: SsmParams) -> Tensor:
    """Selective scan of ``x`` with shape (..., M, D).

    If the parameters carry a leading group axis of size G (e.g. heads), ``x``
    must have shape (G, ..., M, D); each group uses its own parameters.
    """
    if params.mode != SELECTIVE:
        raise ModeError("selective_scan requires selective parameters")
    x = _t(x, np.float64)
    dt = x.dtype
    A_log = _t(params.A_log, dt)
    grouped = A_log.ndim == 3
    shape = x.shape
    M, D = shape[-2:]
    if grouped:
        G = shape[0]
        x4 = x.reshape(G, -1, M, D)
    else:
        x4 = x.reshape(1, -1, M, D)
        G = 1

    def w(v):
        v = _t(v, dt)
        return v if grouped else v.reshape((1,) + v.shape)

    Wd, bd, WB, bB, WC, bC = (w(getattr(params, k)) for k in ("W_delta", "delta_bias", "W_B", "b_B", "W_C", "b_C"))
    Ag = w(A_log)
    delta = F.softplus(x4 @ Wd.reshape(G, 1, D, D) + bd.reshape(G, 1, 1, D))
    Bt = x4 @ WB.reshape(G, 1, D, -1) + bB.reshape(G, 1, 1, -1)
    Ct = x4 @ WC.reshape(G, 1, D, -1) + bC.reshape(G, 1, 1, -1)
    A = -(Ag.exp())
    y = selective_scan_core(x4, delta, A, Bt, Ct)
    return y.reshape(shape)


def bidirectional_scan(x, fwd: SsmParams, bwd: SsmParams):
    """Forward scan plus the time-reversed scan of the reversed input."""
    if fwd.mode == LTI:
        xs = np.asarray(_data(x), dtype=np.float64)
        return scan_recurrent(xs, fwd) + scan_recurrent(xs[::-1], bwd)[::-1]
    x = _t(x, np.float64)
    axis = x.ndim - 2
    return selective_scan(x, fwd) + flip(selective_scan(flip(x, axis), bwd), axis)


def init_selective_params(
    rng: np.random.Generator, D: int, N: int = 16, groups: tuple[int, ...] = (), dtype=np.float64
) -> dict[str, np.ndarray]:
    """Mamba-style initial values: ``A = -(1..N)``, delta in [1e-3, 1e-1]."""
    g = tuple(groups)
    A_log = np.broadcast_to(np.log(np.arange(1, N + 1, dtype=np.float64)), g + (D, N)).copy()
    dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=g + (D,)))
    delta_bias = dt0 + np.log(-np.expm1(-dt0))  # softplus^-1
    s = 1.0 / math.sqrt(D)
    out = {
        "A_log": A_log,
        "W_delta": rng.uniform(-s, s, size=g + (D, D)),
        "delta_bias": delta_bias,
        "W_B": rng.uniform(-s, s, size=g + (D, N)),
        "b_B": np.zeros(g + (N,)),
        "W_C": rng.uniform(-s, s, size=g + (D, N)),
        "b_C": np.zeros(g + (N,)),
    }
    return {k: v.astype(dtype) for k, v in out.items()}
