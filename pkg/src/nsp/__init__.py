"""Neural shortest-path surface reconstruction from unorganized point clouds."""

__version__ = "0.1.0"

from .estimator import ShortestPathReconstructor, check_cloud
from .extraction import ExtractionConfig, NoSurfaceError, extract
from .field import MlpConfig, NeuralField, init_params, load_checkpoint, save_checkpoint
from .geometry import Domain, GridSpec, PointCloud, TriangleMesh, normalize_cloud
from .losses import LossWeights, total_loss
from .metrics import MetricReport, chamfer, hausdorff
from .trainer import TrainConfig, train

__all__ = [
    "Domain", "ExtractionConfig", "GridSpec", "LossWeights", "MetricReport", "MlpConfig", "NeuralField",
    "NoSurfaceError", "PointCloud", "ShortestPathReconstructor", "TrainConfig", "TriangleMesh", "chamfer",
    "check_cloud", "extract", "hausdorff", "init_params", "load_checkpoint", "normalize_cloud",
    "save_checkpoint", "total_loss", "train",
]
