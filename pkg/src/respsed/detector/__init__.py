from .baseline import BaselineConfig, baseline_detect
from .model import (
    ModelParams,
    SegmentProbabilities,
    ShapeError,
    forward,
    forward_batch,
    init_model,
    loss_and_grad,
    param_shapes,
)
from .model_io import ModelFormatError, load_model, save_model
from .training import (
    Adam,
    EarlyStopping,
    Example,
    FoldData,
    TrainConfig,
    TrainResult,
    TrainScenario,
    fine_tune,
    train,
    train_model,
)

__all__ = [
    "Adam", "BaselineConfig", "EarlyStopping", "Example", "FoldData", "ModelFormatError",
    "ModelParams", "SegmentProbabilities", "ShapeError", "TrainConfig", "TrainResult",
    "TrainScenario", "baseline_detect", "fine_tune", "forward", "forward_batch", "init_model",
    "load_model", "loss_and_grad", "param_shapes", "save_model", "train", "train_model",
]
