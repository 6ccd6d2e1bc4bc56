"""Dense tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous numpy array.  Every differentiable
operation that touches a tensor requiring gradients records a :class:`Node`
holding its parents and a closure mapping the output gradient to parent
gradients.  :func:`backward` orders the reachable nodes into a :class:`Tape`
(reverse topological order), runs the closures once each and accumulates
into leaf ``.grad`` buffers.  The tape is consumed by the pass: calling
``backward`` again on the same graph raises :class:`StaleTapeError`.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "Tape",
    "ShapeError",
    "StaleTapeError",
    "NonFiniteError",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "verification_mode",
    "is_verification",
    "as_tensor",
    "unbroadcast",
    "count_macs",
    "record_macs",
]


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class StaleTapeError(RuntimeError):
    """Raised when ``backward`` runs over a graph that was already consumed."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf produced while verification mode is active."""


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.verify = False
        self.macs: "MacCounter | None" = None


_state = _State()


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def is_verification() -> bool:
    return _state.verify


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def verification_mode(enabled: bool = True):
    """Treat any non-finite forward value as a hard error."""
    prev = _state.verify
    _state.verify = enabled
    try:
        yield
    finally:
        _state.verify = prev


class MacCounter:
    """Running multiply-accumulate total, filled while :func:`count_macs` is active."""

    def __init__(self) -> None:
        self.total = 0
        self.by_op: dict[str, int] = {}


@contextlib.contextmanager
def count_macs():
    """Tally analytic multiply-accumulate counts of linear ops in the block."""
    prev = _state.macs
    counter = MacCounter()
    _state.macs = counter
    try:
        yield counter
    finally:
        _state.macs = prev


def record_macs(op: str, n: int) -> None:
    counter = _state.macs
    if counter is not None:
        counter.total += int(n)
        counter.by_op[op] = counter.by_op.get(op, 0) + int(n)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _state.verify and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by {op!r}")


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along the axes that were broadcast."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One recorded operation: parents plus the vector-Jacobian closure."""

    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(
        self,
        op: str,
        parents: tuple["Tensor", ...],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> None:
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tape:
    """Reverse-topological ordering of the nodes reachable from an output."""

    def __init__(self, order: list["Tensor"]) -> None:
        # ``order`` is topological: parents precede children.
        self.order = order
        self.index = {id(t): i for i, t in enumerate(order)}

    @classmethod
    def from_output(cls, out: "Tensor") -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for p in t._node.parents:
                    if id(p) not in seen and (p._node is not None or p.requires_grad):
                        stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.order)

    def reversed_nodes(self) -> Iterable["Tensor"]:
        return reversed(self.order)


def _to_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and arr.dtype.kind in "biu":
        arr = arr.astype(np.float64)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    return np.ascontiguousarray(arr) if arr.ndim else arr


class Tensor:
    """Dense float array with an optional gradient slot and graph link."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _to_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: Node | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward_fn, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        need = _state.grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = need
        out._node = Node(op, parents, backward_fn) if need else None
        return out

    @classmethod
    def zeros(cls, shape, dtype=np.float64, requires_grad=False) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, dtype=np.float64, requires_grad=False) -> "Tensor":
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    # -- basic properties ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        src = self.data.dtype

        def bw(g):
            return (g.astype(src),)

        return Tensor._result(self.data.astype(dtype), (self,), bw, "astype")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self, grad=None) -> None:
        backward(self, grad)

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    if _state.verify and np.any(bd == 0):
        raise NonFiniteError("div: division by zero")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    out = ad**p

    def bw(g):
        return (g * p * ad ** (p - 1),)

    return Tensor._result(out, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return Tensor._result(out, (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """``max(lo, a)``; the gradient is passed only where ``a > lo``."""
    ad = a.data
    mask = ad > lo
    return Tensor._result(np.where(mask, ad, lo).astype(ad.dtype), (a,), lambda g: (g * mask,), "clamp_min")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    a, b = _binary_operands(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return unbroadcast(np.where(cond, g, 0), a.shape), unbroadcast(np.where(cond, 0, g), b.shape)

    return Tensor._result(out, (a, b), bw, "where")


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum_(a, axes, keepdims) * (1.0 / n)


def max_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Maximum along ``axis``; ties split the gradient evenly."""
    axes = _norm_axis(axis, a.ndim)
    ad = a.data
    m = ad.max(axis=axes, keepdims=True)
    mask = ad == m
    counts = mask.sum(axis=axes, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axes)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (mask * (g / counts),)

    return Tensor._result(np.asarray(out), (a,), bw, "max")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor._result(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def flip(a: Tensor, axis: int) -> Tensor:
    out = np.ascontiguousarray(np.flip(a.data, axis))
    return Tensor._result(out, (a,), lambda g: (np.ascontiguousarray(np.flip(g, axis)),), "flip")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    out = np.ascontiguousarray(a.data[idx])

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g) if _is_advanced(idx) else full.__setitem__(idx, g)
        return (full,)

    return Tensor._result(out, (a,), bw, "getitem")


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return Tensor._result(out, tuple(tensors), bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(len(tensors)))

    return Tensor._result(out, tuple(tensors), bw, "stack")


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"split: extent {n} on axis {axis} not divisible by {sections}")
    step = n // sections
    out = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(idx)))
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return Tensor._result(out, (a,), lambda g: (unbroadcast(g, src),), "broadcast_to")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ in {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
        record_macs("matmul", out.size * ad.shape[-1])
    except ValueError:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, grad=None) -> Tape:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Returns the tape that was executed.  Leaves that are not reachable keep
    whatever buffer they had (use ``zero_grad`` before the pass to get zeros).
    """
    if grad is None:
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = grad.copy() if loss.grad is None else loss.grad + grad
            return Tape([loss])
        raise RuntimeError("backward: output does not depend on any tensor requiring grad")
    tape = Tape.from_output(loss)
    for t in tape.order:
        if t._node is not None and t._node.consumed:
            raise StaleTapeError(
                f"backward: graph node {t._node.op!r} was already consumed; re-run the forward pass"
            )
    grads: dict[int, np.ndarray] = {id(loss): grad}
    for t in tape.reversed_nodes():
        g = grads.pop(id(t), None)
        node = t._node
        if node is None:
            if t.requires_grad and g is not None:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        node.consumed = True
        fn = node.backward_fn
        node.backward_fn = None
        if g is None:
            continue
        pgrads = fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not (p.requires_grad or p._node is not None):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape
