"""Tree extraction from 3D volumes: blob measurements, RTS branch tracking
and covariance-based branch validation."""

from .blobs import BlobConfig, Measurement, detect_blobs, principal_axis
from .config import PipelineConfig, load_config
from .errors import ConfigError, IsotropicPointError, NumericalError, VolumeFormatError
from .evaluation import CenterlineMetrics, branch_recall, centerline_distance, region_grow
from .phantom import PhantomSpec, PhantomTree, corrupt, generate_tree, rasterize
from .smoother import GateParams, gate_threshold, rts_smooth, run_filter
from .statespace import GaussianState, initial_state, make_models
from .tracker import Branch, TrackerConfig, track_all
from .volume import Volume, load_volume, save_volume

__version__ = "0.1.0"

__all__ = [
    "BlobConfig", "Branch", "CenterlineMetrics", "ConfigError", "GateParams", "GaussianState",
    "IsotropicPointError", "Measurement", "NumericalError", "PhantomSpec", "PhantomTree",
    "PipelineConfig", "TrackerConfig", "Volume", "VolumeFormatError", "branch_recall",
    "centerline_distance", "corrupt", "detect_blobs", "gate_threshold", "generate_tree",
    "initial_state", "load_config", "load_volume", "make_models", "principal_axis", "rasterize",
    "region_grow", "rts_smooth", "run_filter", "save_volume", "track_all",
]
