"""Infrared small-target segmentation with state-space skip interaction."""
from .estimator import SAMambaSegmenter
from .model import ModelConfig, SAMamba, count_params_flops

__version__ = "0.1.0"

__all__ = ["SAMambaSegmenter", "ModelConfig", "SAMamba", "count_params_flops", "__version__"]
