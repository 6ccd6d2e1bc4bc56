from .augment import SCALE_RANGE, apply_transform, augment, draw_transform
from .dataset import (
    ManifestEntry,
    build_dataset,
    load_scene_config,
    load_split,
    manifest_hash,
    read_manifest,
    records_to_arrays,
    split_indices,
    to_model_input,
    worker_count,
)
from .pgm import PGMError, decode, encode, load_image, load_mask, load_pgm, quantize, save_pgm
from .synth import BACKGROUNDS, PlacementError, SampleRecord, SceneConfig, TargetInfo, generate_scene

__all__ = [
    "BACKGROUNDS",
    "SCALE_RANGE",
    "ManifestEntry",
    "PGMError",
    "PlacementError",
    "SampleRecord",
    "SceneConfig",
    "TargetInfo",
    "apply_transform",
    "augment",
    "build_dataset",
    "decode",
    "draw_transform",
    "encode",
    "generate_scene",
    "load_image",
    "load_mask",
    "load_pgm",
    "load_scene_config",
    "load_split",
    "manifest_hash",
    "quantize",
    "read_manifest",
    "records_to_arrays",
    "save_pgm",
    "split_indices",
    "to_model_input",
    "worker_count",
]
