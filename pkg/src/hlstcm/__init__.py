"""Multi-person sequence classification with a hierarchical concurrent-memory LSTM."""

from .checkpoint import CheckpointError, load_checkpoint, load_training_state, save_checkpoint
from .data import (
    CLASS_NAMES,
    DataFormatError,
    Dataset,
    SynthConfig,
    generate_synthetic,
    load_tracklets,
    save_tracklets,
    split_dataset,
    synth_feature_map,
)
from .estimator import HlstcmClassifier
from .model import (
    VARIANTS,
    HlstcmConfig,
    HlstcmParams,
    Sample,
    backward,
    forward,
    forward_partial,
    init_model_params,
    loss,
    named_tensors,
    param_count,
    predict,
)
from .numerics import ShapeError
from .training import (
    GradCheckReport,
    History,
    Metrics,
    NumericalError,
    TrainConfig,
    evaluate,
    gradient_check,
    sgd_momentum_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "CheckpointError",
    "DataFormatError",
    "Dataset",
    "GradCheckReport",
    "History",
    "HlstcmClassifier",
    "HlstcmConfig",
    "HlstcmParams",
    "Metrics",
    "NumericalError",
    "Sample",
    "ShapeError",
    "SynthConfig",
    "TrainConfig",
    "VARIANTS",
    "backward",
    "evaluate",
    "forward",
    "forward_partial",
    "generate_synthetic",
    "gradient_check",
    "init_model_params",
    "load_checkpoint",
    "load_tracklets",
    "load_training_state",
    "loss",
    "named_tensors",
    "param_count",
    "predict",
    "save_checkpoint",
    "save_tracklets",
    "split_dataset",
    "synth_feature_map",
    "train",
]
