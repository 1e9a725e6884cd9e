"""Micro-expression recognition with motion-difference encoding and adaptive temporal graph convolution."""

from .config import RunConfig, build_config, load_config
from .data import SyntheticSpec, load_dataset, load_manifest, preprocess, synthesize
from .gcn import VARIANTS, ModelConfig, forward_model, init_params
from .graph import angular_similarity, assemble_adjacency, build_topology, decayed_weight
from .motion import FrameSequence, encode_motion, pair_frames, temporal_encoding
from .numerics import Tape, Tensor, backward, check_gradients, no_grad
from .training import TrainConfig, compute_metrics, loso_split, run_loso, train

__version__ = "0.1.0"

__all__ = [
    "FrameSequence",
    "ModelConfig",
    "RunConfig",
    "SyntheticSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VARIANTS",
    "angular_similarity",
    "assemble_adjacency",
    "backward",
    "build_config",
    "build_topology",
    "check_gradients",
    "compute_metrics",
    "decayed_weight",
    "encode_motion",
    "forward_model",
    "init_params",
    "load_config",
    "load_dataset",
    "load_manifest",
    "loso_split",
    "no_grad",
    "pair_frames",
    "preprocess",
    "run_loso",
    "synthesize",
    "temporal_encoding",
    "train",
]
