from .engine import InferenceResult, PhasePrediction, run_inference, step_online
from .model import DualStreamModel, check_params, init_cache_params, init_dacat_params
from .train import TrainHistory, train_cache_encoder, train_dacat

__all__ = [
    "DualStreamModel", "InferenceResult", "PhasePrediction", "TrainHistory",
    "check_params", "init_cache_params", "init_dacat_params", "run_inference",
    "step_online", "train_cache_encoder", "train_dacat",
]
