"""SDR to HDR translation with a pixel-wise global colour transform and a light local enhancer."""
from .checkpoint import load_model
from .errors import CheckpointError, DataError, NonFiniteError, ShapeError, UsageError
from .estimator import SdrToHdrRegressor
from .model import ModelConfig, build_model, predict_image

__version__ = "0.1.0"

__all__ = ["SdrToHdrRegressor", "ModelConfig", "build_model", "predict_image", "load_model",
           "CheckpointError", "DataError", "NonFiniteError", "ShapeError", "UsageError"]
