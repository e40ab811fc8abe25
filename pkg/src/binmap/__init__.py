"""Task-aware binary map compression with histogram-filter localization.

A learned embedding of a 2D intensity map is binarized through a grouped
softmax, losslessly coded (RLE + canonical Huffman), and decoded on demand
inside a histogram Bayes filter that localizes a simulated vehicle by FFT
cross-correlation matching. Training the compressor against the matching
task preserves localization accuracy at a fraction of the bits per pixel of
reconstruction-driven or raw lossless coding.

Module map:
    geometry    SE(2) poses, grids, rasterization
    rng         deterministic random streams
    autograd    float32 tensors + reverse-mode differentiation
    embednet    U-Net embedders, grouped-softmax compressor, decoder
    codec       RLE + canonical Huffman coding, .bmc/.imap formats
    matcher     rotation set + FFT correlation score volumes
    histfilter  recursive Bayes histogram filter and sessions
    synthworld  procedural worlds, drives, datasets
    training    losses and the two-stage schedule
    bench       metrics and condition comparisons
    cli         command-line pipeline
"""

from .geometry import GridSpec, MapRaster, Pose, VelocityObs, pose_compose
from .codec import CompressedMap, GroupedCode, decode_map, encode_map
from .embednet import NetConfig, ParamStore, init_params
from .matcher import RotationSet, ScoreVolume
from .histfilter import BeliefGrid, FilterConfig, LocalizationSession
from .synthworld import Drive, SampleConfig, WorldConfig
from .training import LossConfig, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "MapRaster", "Pose", "VelocityObs", "pose_compose",
    "CompressedMap", "GroupedCode", "decode_map", "encode_map",
    "NetConfig", "ParamStore", "init_params",
    "RotationSet", "ScoreVolume",
    "BeliefGrid", "FilterConfig", "LocalizationSession",
    "Drive", "SampleConfig", "WorldConfig",
    "LossConfig", "TrainConfig", "train",
    "__version__",
]
