"""Random rescale plus crop/pad back to the original extents."""
from __future__ import annotations

import numpy as np

from .synth import SampleRecord, TargetInfo

SCALE_RANGE = (0.75, 1.25)


def _source_coords(n_out: int, n_src: int, scale: float, offset: float) -> np.ndarray:
    # pixel centres: out index i sits at (i + 0.5) in output space; the scaled
    # image is shifted by ``offset`` output pixels
    return (np.arange(n_out) + 0.5 - offset) / scale - 0.5


def _bilinear(img, sy, sx):
    h, w = img.shape
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    y0 = np.minimum(np.floor(sy).astype(int), h - 2 if h > 1 else 0)
    x0 = np.minimum(np.floor(sx).astype(int), w - 2 if w > 1 else 0)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = img[y0][:, x0]
    b = img[y0][:, x1]
    c = img[y1][:, x0]
    d = img[y1][:, x1]
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)


def _nearest(lbl, sy, sx):
    h, w = lbl.shape
    iy = np.floor(sy + 0.5).astype(int)
    ix = np.floor(sx + 0.5).astype(int)
    vy = (iy >= 0) & (iy < h)
    vx = (ix >= 0) & (ix < w)
    out = lbl[np.clip(iy, 0, h - 1)][:, np.clip(ix, 0, w - 1)]
    return np.where(vy[:, None] & vx[None, :], out, 0)


def apply_transform(sample: SampleRecord, scale: float, offset: tuple[float, float]) -> SampleRecord:
    """Rescale by ``scale`` and place the result at ``offset`` (output pixels).

    The image is resampled bilinearly with edge replication outside the
    source; labels and mask use nearest neighbour and are zero outside.
    """
    h, w = sample.image.shape
    sy = _source_coords(h, h, scale, offset[0])
    sx = _source_coords(w, w, scale, offset[1])
    if scale == 1.0 and offset == (0.0, 0.0):
        img = sample.image.copy()
        labels = None if sample.labels is None else sample.labels.copy()
        mask = sample.mask.copy()
    else:
        img = _bilinear(sample.image.astype(np.float64), sy, sx).astype(sample.image.dtype)
        if sample.labels is not None:
            labels = _nearest(sample.labels, sy, sx).astype(sample.labels.dtype)
            mask = (labels > 0).astype(np.uint8)
        else:
            labels = None
            mask = (_nearest(sample.mask, sy, sx) > 0).astype(np.uint8)
    targets = _retarget(sample, labels, mask)
    return SampleRecord(img, mask, targets, sample.seed, sample.index, labels)


def _retarget(sample, labels, mask):
    if labels is None:
        area = int(mask.sum())
        if area == 0:
            return []
        ys, xs = np.nonzero(mask)
        return [TargetInfo((float(ys.mean()), float(xs.mean())), area, 0.0)]
    out = []
    for k, t in enumerate(sample.targets):
        ys, xs = np.nonzero(labels == k + 1)
        if len(ys):
            out.append(TargetInfo((float(ys.mean()), float(xs.mean())), int(len(ys)), t.peak))
    return out


def draw_transform(h: int, w: int, rng: np.random.Generator, scale_range=SCALE_RANGE):
    scale = float(rng.uniform(*scale_range))
    # scaled extent vs. output extent: crop (negative offset) or pad (positive)
    ey, ex = h * scale - h, w * scale - w
    oy = -float(rng.uniform(min(0.0, ey), max(0.0, ey))) if ey > 0 else float(rng.uniform(0.0, -ey))
    ox = -float(rng.uniform(min(0.0, ex), max(0.0, ex))) if ex > 0 else float(rng.uniform(0.0, -ex))
    return scale, (float(np.round(oy)), float(np.round(ox)))


def augment(sample: SampleRecord, seed, scale: float | None = None, scale_range=SCALE_RANGE) -> SampleRecord:
    """Random scale in ``scale_range`` then crop or pad back to the input extents.

    ``seed`` is anything accepted by ``numpy.random.default_rng``.  Passing
    ``scale=1.0`` gives the centred identity transform.
    """
    h, w = sample.image.shape
    if scale is not None:
        s = float(scale)
        off = (float(np.round((h - h * s) / 2)), float(np.round((w - w * s) / 2)))
        return apply_transform(sample, s, off)
    rng = np.random.default_rng(seed)
    s, off = draw_transform(h, w, rng, scale_range)
    return apply_transform(sample, s, off)
