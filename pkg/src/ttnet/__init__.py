"""Tensor-train LSTM networks for ratio-mask speech enhancement."""

from .kernels import BACKEND
from .tensornet import (ModelConfig, TensorNetModel, TrainConfig, TrainReport, build_model, count_model_params,
                        model_backward, model_forward, reduced_config, train)
from .tt_core import TTLinear, TTShape, tt_from_dense, tt_random_init, tt_reconstruct, ttl_forward
from .tt_grad import TrainingDivergence, finite_diff_check, ttl_backward
from .tt_lstm import TTLSTMCell, lstm_sequence_backward, lstm_sequence_forward, make_cell

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ModelConfig", "TensorNetModel", "TrainConfig", "TrainReport", "build_model",
    "count_model_params", "model_backward", "model_forward", "reduced_config", "train", "TTLinear", "TTShape",
    "tt_from_dense", "tt_random_init", "tt_reconstruct", "ttl_forward", "TrainingDivergence",
    "finite_diff_check", "ttl_backward", "TTLSTMCell", "lstm_sequence_backward", "lstm_sequence_forward",
    "make_cell",
]
