"""From-scratch neural network kernels and the three detection models.

Everything here is plain NumPy with hand-derived reverse-mode gradients;
the master correctness property is agreement with central finite
differences. The streaming inference path has a separate compiled kernel
in :mod:`footfall.neuralnet.fastkernel` that reproduces the reference
forward pass.
"""

from footfall.neuralnet.ops import (
    conv1d_backward,
    conv1d_forward,
    relu,
    sigmoid,
)
from footfall.neuralnet.lstm import bilstm_forward, lstm_cell
from footfall.neuralnet.models import (
    CnnParams,
    ConvLstmParams,
    LogisticParams,
    cnn_backward,
    cnn_forward,
    convlstm_backward,
    convlstm_forward,
    init_params,
    logistic_backward,
    logistic_forward,
    model_backward,
    model_forward,
)
from footfall.neuralnet.weights_io import (
    WeightsFormatError,
    load_weights,
    save_weights,
)

__all__ = [
    "CnnParams",
    "ConvLstmParams",
    "LogisticParams",
    "WeightsFormatError",
    "bilstm_forward",
    "cnn_backward",
    "cnn_forward",
    "conv1d_backward",
    "conv1d_forward",
    "convlstm_backward",
    "convlstm_forward",
    "init_params",
    "load_weights",
    "logistic_backward",
    "logistic_forward",
    "lstm_cell",
    "model_backward",
    "model_forward",
    "relu",
    "save_weights",
    "sigmoid",
]
