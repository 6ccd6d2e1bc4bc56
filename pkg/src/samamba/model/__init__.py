from .config import DESK_CHANNELS, FULL_CHANNELS, ModelConfig
from .csi import CSI, MambaHeads, PlainSkip, ViMHeads, inverse_permutation, recombination_index
from .dpcf import DPCF
from .encoder import HierarchicalEncoder
from .fs_adapter import FSAdapter, channel_similarity, cosine_sim, fs_adapter
from .network import SAMamba, SegmentationHead, count_params_flops

__all__ = [
    "ModelConfig",
    "DESK_CHANNELS",
    "FULL_CHANNELS",
    "CSI",
    "MambaHeads",
    "ViMHeads",
    "PlainSkip",
    "DPCF",
    "FSAdapter",
    "HierarchicalEncoder",
    "SAMamba",
    "SegmentationHead",
    "channel_similarity",
    "cosine_sim",
    "count_params_flops",
    "fs_adapter",
    "inverse_permutation",
    "recombination_index",
]
