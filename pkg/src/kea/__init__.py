"""Emotion classification with lexicon knowledge fused into attention, on a small numpy autodiff core."""

from .errors import KEAError
from .fusion import VARIANTS, FusionModel, ModelConfig
from .harness import RunConfig, evaluate, predict, run_experiment, train

__all__ = ["KEAError", "VARIANTS", "FusionModel", "ModelConfig", "RunConfig", "evaluate", "predict",
           "run_experiment", "train"]
__version__ = "0.1.0"
