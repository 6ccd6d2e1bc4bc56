"""Central finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class NonDeterministicError(RuntimeError):
    """The checked function gave different values for identical inputs."""


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    tol: float
    worst: str = ""
    details: list[tuple[str, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _scalar(f: Callable[[], Tensor]) -> float:
    out = f()
    return float(out.data.sum())


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-8,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare the reverse-mode gradient of ``sum(f(x))`` against central differences.

    Every coordinate of ``x`` is perturbed unless ``max_coords`` limits it to a
    random subset.
    """
    if x.dtype != np.float64:
        raise TypeError("finite_diff_check requires float64 inputs")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if float(out.data.sum()) != float(f(x).data.sum()):
        raise NonDeterministicError("function is not deterministic under repeated evaluation")
    if out.size != 1:
        out = out.sum()
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    coords = _pick_coords(x.size, max_coords, rng)
    flat = x.data.reshape(-1)
    worst, worst_r, worst_a = "", 0.0, 0.0
    details = []
    for k in coords:
        orig = flat[k]
        flat[k] = orig + h
        fp = _scalar(lambda: f(x))
        flat[k] = orig - h
        fm = _scalar(lambda: f(x))
        flat[k] = orig
        num = (fp - fm) / (2 * h)
        ana = analytic.reshape(-1)[k]
        r = rel_err(ana, num, floor)
        details.append((str(np.unravel_index(k, x.shape)), r))
        if r > worst_r:
            worst_r, worst = r, str(np.unravel_index(k, x.shape))
        worst_a = max(worst_a, abs(ana - num))
    return GradCheckReport(worst_r, worst_a, len(coords), tol, worst, details)


def _pick_coords(n: int, max_coords: int | None, rng) -> np.ndarray:
    if max_coords is None or max_coords >= n:
        return np.arange(n)
    rng = rng or np.random.default_rng(0)
    return np.sort(rng.choice(n, size=max_coords, replace=False))


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    coords_per_param: int = 2,
    seed: int = 0,
    floor: float = 1e-7,
) -> GradCheckReport:
    """Finite-difference check of every named parameter of a scalar loss.

    Each parameter tensor is probed along one random unit direction (covering
    all of its entries at once) plus ``coords_per_param`` random coordinates.
    """
    rng = np.random.default_rng(seed)
    for _, p in params:
        p.grad = np.zeros_like(p.data)
    loss = loss_fn()
    backward(loss)
    grads = {name: p.grad.copy() for name, p in params}
    details = []
    worst, worst_r, worst_a, n = "", 0.0, 0.0, 0
    for name, p in params:
        flat = p.data.reshape(-1)
        g = grads[name].reshape(-1)
        direction = rng.standard_normal(flat.size)
        direction /= np.linalg.norm(direction)
        probes = [("dir", direction)]
        for k in rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False):
            e = np.zeros(flat.size)
            e[k] = 1.0
            probes.append((f"[{k}]", e))
        for tag, d in probes:
            orig = flat.copy()
            flat += h * d
            fp = float(loss_fn().data)
            flat[:] = orig - h * d
            fm = float(loss_fn().data)
            flat[:] = orig
            num = (fp - fm) / (2 * h)
            ana = float(g @ d)
            r = rel_err(ana, num, floor)
            n += 1
            details.append((f"{name}{tag}", r))
            if r > worst_r:
                worst_r, worst = r, f"{name}{tag}"
            worst_a = max(worst_a, abs(ana - num))
    return GradCheckReport(worst_r, worst_a, n, tol, worst, details)
