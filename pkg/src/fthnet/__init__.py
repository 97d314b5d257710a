"""Quality scoring for retinal fundus images.

A windowed-attention backbone feeds a distortion perception network and
a parameter hypernetwork; the generated target network regresses a
0-100 quality score. The package covers training, evaluation metrics,
synthetic data generation, a scoring/annotation HTTP service, and a CLI.
"""

from .config import FthnetConfig, profile
from .estimator import FthnetQualityRegressor
from .metrics import EvalReport, plcc, rmse, srcc
from .model import FTHNet, build_model, count_flops, count_params

__version__ = "0.1.0"

__all__ = [
    "FthnetConfig",
    "FthnetQualityRegressor",
    "FTHNet",
    "EvalReport",
    "build_model",
    "count_flops",
    "count_params",
    "plcc",
    "profile",
    "rmse",
    "srcc",
    "__version__",
]
