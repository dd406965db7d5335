"""gaitkit: desk-scale gait representation toolkit.

Silhouette and skeleton-map preprocessing, deep gait baselines on a minimal
autodiff engine, metric-learning objectives, and probe/gallery retrieval
evaluation.
"""

from .autodiff import Tensor, no_grad
from .errors import ConfigError, ContractError, DataError, GaitkitError, ShapeError
from .models import ModelConfig, build_model
from .optim import MilestoneSchedule, ParamSet, sgd_step

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "ModelConfig", "build_model",
    "ParamSet", "sgd_step", "MilestoneSchedule",
    "GaitkitError", "ShapeError", "ContractError", "DataError", "ConfigError",
    "__version__",
]
