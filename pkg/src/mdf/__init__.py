"""Twin-encoder classification of paired EO/SAR views with sliced-Wasserstein
latent alignment and least-squares output fusion."""

__version__ = "0.1.0"

from .data import ClassProfile, DatasetBundle, ShiftParams, curate, generate  # noqa: E402
from .estimator import LeastSquaresFusion, MDFClassifier  # noqa: E402
from .fuse import FusionWeights, ensemble, fit_fusion, fuse_predict  # noqa: E402
from .losses import FocalConfig, LossBreakdown, SwdConfig, focal_loss, mdf_loss, swd  # noqa: E402
from .model import TwinModel, init_twin  # noqa: E402
from .train import TrainConfig, evaluate, train_mdf  # noqa: E402

__all__ = [
    "ClassProfile", "DatasetBundle", "ShiftParams", "curate", "generate",
    "LeastSquaresFusion", "MDFClassifier",
    "FusionWeights", "ensemble", "fit_fusion", "fuse_predict",
    "FocalConfig", "LossBreakdown", "SwdConfig", "focal_loss", "mdf_loss", "swd",
    "TwinModel", "init_twin",
    "TrainConfig", "evaluate", "train_mdf",
]
