"""Synthetic infrared small-target scenes.

Each scene is a smooth cluttered background plus a few dim anisotropic
Gaussian blobs.  The ground-truth mask marks the pixels where a blob's own
contribution exceeds half of its peak, so a blob with standard deviations
``(s1, s2)`` covers about ``2 pi ln2 s1 s2`` pixels.  Every sample draws its
own random stream from ``(seed, index)``, which makes serial and parallel
generation identical.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

BACKGROUNDS = ("gradient", "blob-clutter", "banded-noise")
_HALF_PEAK_AREA = 2.0 * math.pi * math.log(2.0)


class PlacementError(RuntimeError):
    """Targets could not be placed within the retry budget."""


@dataclass(frozen=True)
class SceneConfig:
    height: int = 256
    width: int = 256
    targets: tuple[int, int] = (1, 3)
    area_cap: float = 0.0015
    # target pixel areas are drawn log-uniformly from this range before the cap
    target_area: tuple[float, float] = (1.0, 30.0)
    contrast: tuple[float, float] = (0.2, 0.4)
    background: str = "blob-clutter"
    noise_sigma: float = 0.02
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ValueError(f"scene extents must be >= 32, got {self.height}x{self.width}")
        lo, hi = self.targets
        if not 0 <= lo <= hi:
            raise ValueError(f"bad targets range {self.targets}")
        if not 0 < self.area_cap <= 1:
            raise ValueError(f"area_cap must be in (0, 1], got {self.area_cap}")
        if not 0 < self.target_area[0] <= self.target_area[1]:
            raise ValueError(f"bad target_area range {self.target_area}")
        if not 0 < self.contrast[0] <= self.contrast[1] <= 1:
            raise ValueError(f"bad contrast range {self.contrast}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def max_target_pixels(self) -> int:
        return int(math.floor(self.area_cap * self.height * self.width))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for k in ("targets", "target_area", "contrast"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class TargetInfo:
    centroid: tuple[float, float]
    area: int
    peak: float


@dataclass
class SampleRecord:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    targets: list[TargetInfo] = field(default_factory=list)
    seed: int = 0
    index: int = 0
    labels: np.ndarray | None = None  # (H, W) int32, k+1 on target k

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def total_area(self) -> int:
        return int(sum(t.area for t in self.targets))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _smooth_noise(rng, h, w, scale):
    """Low-pass noise: coarse lattice upsampled bilinearly, normalised to [0, 1]."""
    gh = max(2, int(math.ceil(h / scale)) + 1)
    gw = max(2, int(math.ceil(w / scale)) + 1)
    grid = rng.standard_normal((gh, gw))
    ys = np.linspace(0, gh - 1, h)
    xs = np.linspace(0, gw - 1, w)
    y0 = np.minimum(ys.astype(int), gh - 2)
    x0 = np.minimum(xs.astype(int), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    out = (1 - fy) * ((1 - fx) * g00 + fx * g01) + fy * ((1 - fx) * g10 + fx * g11)
    return _unit(out)


def _unit(a):
    lo, hi = a.min(), a.max()
    if hi - lo < 1e-12:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def background(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Background in roughly [0.05, 0.55], leaving headroom for targets."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if kind == "gradient":
        theta = rng.uniform(0, 2 * math.pi)
        ramp = _unit(math.cos(theta) * xx + math.sin(theta) * yy)
        base = 0.7 * ramp + 0.3 * _smooth_noise(rng, h, w, max(h, w) / 4)
    elif kind == "blob-clutter":
        base = np.zeros((h, w))
        n = int(rng.integers(6, 16))
        for _ in range(n):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            s = rng.uniform(0.04, 0.2) * max(h, w)
            base += rng.uniform(0.3, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        base = 0.75 * _unit(base) + 0.25 * _smooth_noise(rng, h, w, 16)
    elif kind == "banded-noise":
        theta = rng.uniform(0, math.pi)
        period = rng.uniform(12, 48)
        u = math.cos(theta) * xx + math.sin(theta) * yy
        bands = 0.5 + 0.5 * np.sin(2 * math.pi * u / period + rng.uniform(0, 2 * math.pi))
        base = 0.5 * bands + 0.5 * _smooth_noise(rng, h, w, 8)
    else:
        raise ValueError(f"unknown background kind {kind!r}")
    lo = rng.uniform(0.05, 0.2)
    return lo + (0.55 - lo) * _unit(base)


def _blob(shape, cy, cx, s1, s2, theta):
    """Unit-peak rotated Gaussian evaluated on a local window; returns (values, window slices)."""
    h, w = shape
    r = int(math.ceil(4.0 * max(s1, s2))) + 1
    y0, y1 = max(0, cy - r), min(h, cy + r + 1)
    x0, x1 = max(0, cx - r), min(w, cx + r + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(theta), math.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    g = np.exp(-0.5 * ((u / s1) ** 2 + (v / s2) ** 2))
    return g, (slice(y0, y1), slice(x0, x1))


def generate_scene(cfg: SceneConfig, index: int) -> SampleRecord:
    rng = sample_rng(cfg.seed, index)
    h, w = cfg.height, cfg.width
    img = background(cfg.background, h, w, rng)
    labels = np.zeros((h, w), dtype=np.int32)
    # one-pixel guard band so neighbouring targets never touch
    occupied = np.zeros((h, w), dtype=bool)
    cap = min(cfg.max_target_pixels, int(math.floor(cfg.target_area[1])))
    if cap < 1 and cfg.targets[1] > 0:
        raise PlacementError(f"area cap admits no pixel in a {h}x{w} scene")
    amax = min(cfg.target_area[1], float(cap))
    amin = min(cfg.target_area[0], amax)
    n = int(rng.integers(cfg.targets[0], cfg.targets[1] + 1))
    targets: list[TargetInfo] = []
    signal = np.zeros((h, w))
    margin = 2
    for k in range(n):
        for attempt in range(cfg.max_retries):
            shrink = 0.5 ** (attempt // 20)
            area = math.exp(rng.uniform(math.log(amin), math.log(amax))) * shrink
            aspect = math.exp(rng.uniform(-math.log(2.5), math.log(2.5)))
            prod = area / _HALF_PEAK_AREA
            s1 = math.sqrt(prod * aspect)
            s2 = math.sqrt(prod / aspect)
            theta = rng.uniform(0, math.pi)
            cy = int(rng.integers(margin, h - margin))
            cx = int(rng.integers(margin, w - margin))
            g, win = _blob((h, w), cy, cx, s1, s2, theta)
            region = g > 0.5
            npx = int(region.sum())
            if npx == 0 or npx > cap:
                continue
            if occupied[win][region].any():
                continue
            break
        else:
            raise PlacementError(
                f"could not place target {k + 1}/{n} in a {h}x{w} scene (seed={cfg.seed}, index={index}) "
                f"after {cfg.max_retries} attempts"
            )
        peak = float(rng.uniform(*cfg.contrast))
        signal[win] += peak * g
        labels[win][region] = k + 1
        ys, xs = np.nonzero(region)
        y0, x0 = win[0].start, win[1].start
        grow = np.zeros((h, w), dtype=bool)
        grow[ys + y0, xs + x0] = True
        grow[1:] |= grow[:-1].copy()
        grow[:-1] |= grow[1:].copy()
        grow[:, 1:] |= grow[:, :-1].copy()
        grow[:, :-1] |= grow[:, 1:].copy()
        occupied |= grow
        targets.append(TargetInfo((float(ys.mean() + y0), float(xs.mean() + x0)), npx, peak))
    img = img + signal
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, size=(h, w))
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    mask = (labels > 0).astype(np.uint8)
    return SampleRecord(img, mask, targets, cfg.seed, index, labels)
