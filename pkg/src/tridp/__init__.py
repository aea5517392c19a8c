"""Heart-sound to ECG translation with a distortion/perception objective,
direct and indirect downstream paths, and loss-weight sweep tooling."""

from .dpsweep import SweepGrid, SweepPoint, detect_phases, fid_from_embeddings, precision_recall, run_sweep
from .estimators import DownstreamEstimator, ECGGenerator
from .exceptions import (
    ConfigurationError, DivergenceError, InputError, NonFiniteError, StageOrderError, TriDPError,
)
from .losses import LossWeights, composite_loss, distortion_loss, perceptual_loss, recon_loss
from .netblocks import BlockGraph
from .protocol import ProtocolConfig, run_protocol
from .signalio import FilterSpec, RawRecord, WindowSet, preprocess
from .synthgen import SynthConfig, generate, synthetic_splits

__version__ = "0.1.0"

__all__ = [
    "BlockGraph", "ConfigurationError", "DivergenceError", "DownstreamEstimator", "ECGGenerator", "FilterSpec",
    "InputError", "LossWeights", "NonFiniteError", "ProtocolConfig", "RawRecord", "StageOrderError", "SweepGrid",
    "SweepPoint", "SynthConfig", "TriDPError", "WindowSet", "composite_loss", "detect_phases", "distortion_loss",
    "fid_from_embeddings", "generate", "perceptual_loss", "precision_recall", "preprocess", "recon_loss",
    "run_protocol", "run_sweep", "synthetic_splits",
]
