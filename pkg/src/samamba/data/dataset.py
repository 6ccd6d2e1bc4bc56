"""On-disk datasets: PGM image/mask trees plus a tab-separated manifest.

Layout under ``root``::

    images/<split>_<index>.pgm
    masks/<split>_<index>.pgm
    manifest.tsv   split, image path, mask path, n_targets, total_area_px
    scene.json     generator settings

Paths in the manifest are relative to ``root``.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pgm import load_image, load_mask, save_pgm
from .synth import SampleRecord, SceneConfig, generate_scene

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.tsv"
SCENE_FILE = "scene.json"


@dataclass(frozen=True)
class ManifestEntry:
    split: str
    image: str
    mask: str
    n_targets: int
    total_area: int

    def line(self) -> str:
        return f"{self.split}\t{self.image}\t{self.mask}\t{self.n_targets}\t{self.total_area}\n"


def worker_count() -> int:
    raw = os.environ.get("SAMAMBA_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n if n > 0 else (os.cpu_count() or 1))


def split_indices(n_train: int, n_val: int, n_test: int) -> dict[str, range]:
    """Consecutive, disjoint index ranges per split."""
    for n in (n_train, n_val, n_test):
        if n < 0:
            raise ValueError("split sizes must be non-negative")
    return {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n_train + n_val + n_test),
    }


def sample_name(split: str, index: int) -> str:
    return f"{split}_{index:06d}.pgm"


def build_dataset(
    cfg: SceneConfig,
    n_train: int,
    n_val: int,
    n_test: int,
    root,
    force: bool = False,
    workers: int | None = None,
) -> Path:
    """Generate all splits under ``root`` and return the manifest path."""
    root = Path(root)
    if root.exists() and not root.is_dir():
        raise FileExistsError(f"{root} exists and is not a directory")
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(f"{root} is not empty; pass force=True to overwrite")
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    jobs = [(split, i) for split, rng in split_indices(n_train, n_val, n_test).items() for i in rng]

    def work(job):
        split, i = job
        s = generate_scene(cfg, i)
        name = sample_name(split, i)
        save_pgm(root / "images" / name, s.image, "image")
        save_pgm(root / "masks" / name, s.mask, "mask")
        return ManifestEntry(split, f"images/{name}", f"masks/{name}", s.n_targets, s.total_area)

    n_workers = workers or worker_count()
    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            entries = list(pool.map(work, jobs))
    else:
        entries = [work(j) for j in jobs]
    manifest = root / MANIFEST
    manifest.write_text("".join(e.line() for e in entries))
    (root / SCENE_FILE).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        split, img, msk, n, area = parts
        entries.append(ManifestEntry(split, img, msk, int(n), int(area)))
    return entries


def manifest_hash(path) -> str:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_scene_config(root) -> SceneConfig:
    return SceneConfig.from_dict(json.loads((Path(root) / SCENE_FILE).read_text()))


def load_split(root, split: str) -> tuple[np.ndarray, np.ndarray, list[ManifestEntry]]:
    """Stack one split as ``(images (N, H, W) float32, masks (N, H, W) uint8, entries)``."""
    root = Path(root)
    entries = [e for e in read_manifest(root) if e.split == split]
    if not entries:
        raise ValueError(f"split {split!r} is empty or missing in {root / MANIFEST}")
    images = np.stack([load_image(root / e.image) for e in entries])
    masks = np.stack([load_mask(root / e.mask) for e in entries])
    return images, masks, entries


def to_model_input(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(N, H, W) single-channel maps -> (N, 3, H, W) by channel replication."""
    images = np.asarray(images, dtype=dtype)
    if images.ndim == 2:
        images = images[None]
    if images.ndim == 3:
        return np.repeat(images[:, None], 3, axis=1)
    if images.ndim == 4 and images.shape[1] == 1:
        return np.repeat(images, 3, axis=1)
    if images.ndim == 4 and images.shape[1] == 3:
        return images
    raise ValueError(f"cannot convert array of shape {images.shape} to (N, 3, H, W)")


def records_to_arrays(records: list[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([r.image for r in records]), np.stack([r.mask for r in records])
