"""The ConvLSTM detector and the CNN / logistic baselines.

Parameters live in ordered name -> ndarray dicts so weight files, the
optimizer and the gradient checker all share one addressing scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from footfall.neuralnet.ops import (
    adaptive_avg_pool_backward,
    adaptive_avg_pool_forward,
    batchnorm1d_backward,
    batchnorm1d_forward,
    conv1d_backward,
    conv1d_forward,
    dropout_forward,
    linear_backward,
    linear_forward,
    maxpool1d_backward,
    maxpool1d_forward,
    relu,
    relu_backward,
)
from footfall.neuralnet.lstm import (
    bilstm_stack_backward,
    bilstm_stack_forward,
)

CONVLSTM = "convlstm"
CNN = "cnn"
LOGISTIC = "logistic"
MODEL_KINDS = (CONVLSTM, CNN, LOGISTIC)

IN_CHANNELS = 5          # x, y, z, magnitude, dt
BASELINE_CHANNELS = 4    # x, y, z, magnitude
LOGISTIC_WINDOW = 50
CNN_BN_MOMENTUM = 0.1
CNN_BN_EPS = 1e-5

# running statistics are state, not trainable parameters
_NON_TRAINABLE = ("running_mean", "running_var")


@dataclass
class ConvLstmParams:
    tensors: dict[str, np.ndarray]
    hidden: int
    dropout_p: float = 0.3
    kind: str = CONVLSTM


@dataclass
class CnnParams:
    tensors: dict[str, np.ndarray]
    kind: str = CNN


@dataclass
class LogisticParams:
    tensors: dict[str, np.ndarray]
    kind: str = LOGISTIC


def convlstm_tensor_shapes(hidden: int) -> dict[str, tuple[int, ...]]:
    h4 = 4 * hidden
    shapes: dict[str, tuple[int, ...]] = {
        "conv1.w": (16, IN_CHANNELS, 3),
        "conv1.b": (16,),
        "conv2.w": (IN_CHANNELS, 16, 3),
        "conv2.b": (IN_CHANNELS,),
    }
    for layer in (0, 1):
        d_in = IN_CHANNELS if layer == 0 else 2 * hidden
        for dirn in ("fwd", "bwd"):
            prefix = f"lstm.l{layer}.{dirn}."
            shapes[prefix + "w_ih"] = (h4, d_in)
            shapes[prefix + "w_hh"] = (h4, hidden)
            shapes[prefix + "b_ih"] = (h4,)
            shapes[prefix + "b_hh"] = (h4,)
    shapes["seq_head.w"] = (1, 2 * hidden)
    shapes["seq_head.b"] = (1,)
    shapes["glob_head.w"] = (1, 2 * hidden)
    shapes["glob_head.b"] = (1,)
    return shapes


def cnn_tensor_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for block, c_in, c_out in (("block1", BASELINE_CHANNELS, 32), ("block2", 32, 64)):
        shapes[f"{block}.conv.w"] = (c_out, c_in, 5)
        shapes[f"{block}.conv.b"] = (c_out,)
        for name in ("gamma", "beta", "running_mean", "running_var"):
            shapes[f"{block}.bn.{name}"] = (c_out,)
    shapes["conv3.w"] = (64, 64, 3)
    shapes["conv3.b"] = (64,)
    shapes["fc1.w"] = (64, 64)
    shapes["fc1.b"] = (64,)
    shapes["fc2.w"] = (1, 64)
    shapes["fc2.b"] = (1,)
    return shapes


def logistic_tensor_shapes() -> dict[str, tuple[int, ...]]:
    return {"w": (LOGISTIC_WINDOW * BASELINE_CHANNELS,), "b": (1,)}


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 3:           # conv (C_out, C_in, K)
        return shape[1] * shape[2]
    if len(shape) == 2:           # linear / lstm (out, in)
        return shape[1]
    return shape[0]


def _init_tensor(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    base = name.rsplit(".", 1)[-1]
    if base in ("b", "b_ih", "b_hh", "beta", "running_mean"):
        return np.zeros(shape)
    if base in ("gamma", "running_var"):
        return np.ones(shape)
    k = 1.0 / np.sqrt(_fan_in(name, shape))
    return rng.uniform(-k, k, size=shape)


def init_params(model_kind: str, seed: int, hidden: int = 128):
    """Fresh parameters: weights uniform(-1/sqrt(fan_in), ...), biases zero."""
    rng = np.random.default_rng(seed)
    if model_kind == CONVLSTM:
        shapes = convlstm_tensor_shapes(hidden)
        tensors = {n: _init_tensor(n, s, rng) for n, s in shapes.items()}
        return ConvLstmParams(tensors, hidden)
    if model_kind == CNN:
        tensors = {n: _init_tensor(n, s, rng) for n, s in cnn_tensor_shapes().items()}
        return CnnParams(tensors)
    if model_kind == LOGISTIC:
        tensors = {n: _init_tensor(n, s, rng) for n, s in logistic_tensor_shapes().items()}
        return LogisticParams(tensors)
    raise ValueError(f"unknown model kind: {model_kind}")


def params_from_tensors(model_kind: str, tensors: dict[str, np.ndarray]):
    """Rebuild a params container from a loaded tensor map, validating shapes."""
    if model_kind == CONVLSTM:
        try:
            hidden = tensors["lstm.l0.fwd.w_hh"].shape[1]
        except KeyError as exc:
            raise ValueError("tensor map is missing lstm.l0.fwd.w_hh") from exc
        expected = convlstm_tensor_shapes(hidden)
        params = ConvLstmParams(tensors, hidden)
    elif model_kind == CNN:
        expected = cnn_tensor_shapes()
        params = CnnParams(tensors)
    elif model_kind == LOGISTIC:
        expected = logistic_tensor_shapes()
        params = LogisticParams(tensors)
    else:
        raise ValueError(f"unknown model kind: {model_kind}")
    for name, shape in expected.items():
        if name not in tensors:
            raise ValueError(f"tensor map is missing {name}")
        if tuple(tensors[name].shape) != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {tuple(tensors[name].shape)}")
    return params


def trainable_names(params) -> list[str]:
    return [n for n in params.tensors if not n.endswith(_NON_TRAINABLE)]


def zero_gradients(params) -> dict[str, np.ndarray]:
    return {n: np.zeros_like(params.tensors[n]) for n in trainable_names(params)}


def _ensure_batched(window: np.ndarray, width: int, name: str):
    window = np.asarray(window, dtype=np.float64)
    squeeze = window.ndim == 2
    if squeeze:
        window = window[None]
    if window.ndim != 3 or window.shape[2] != width:
        raise ValueError(f"{name} window must be (W, {width}) or (B, W, {width}), got {window.shape}")
    return window, squeeze


@dataclass
class ConvLstmCache:
    conv1: tuple
    conv2: tuple
    pre1: np.ndarray
    pre2: np.ndarray
    lstm: tuple
    lstm_out: np.ndarray
    squeeze: bool


def _lstm_layers(params: ConvLstmParams) -> list[dict[str, np.ndarray]]:
    t = params.tensors
    return [
        {f"{d}.{k}": t[f"lstm.l{li}.{d}.{k}"] for d in ("fwd", "bwd")
         for k in ("w_ih", "w_hh", "b_ih", "b_hh")}
        for li in (0, 1)
    ]


def convlstm_forward(window: np.ndarray, params: ConvLstmParams, training: bool = False,
                     rng: np.random.Generator | None = None, want_cache: bool = False):
    """Window (W, 5) or (B, W, 5) -> (seq_logits, glob_logit).

    Pipeline: transpose -> conv1 -> ReLU -> conv2 -> ReLU -> transpose ->
    2-layer BiLSTM -> per-step sequence head; the global head reads the
    final time step of the concatenated LSTM output.
    """
    x, squeeze = _ensure_batched(window, IN_CHANNELS, CONVLSTM)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input window")
    t = params.tensors
    xt = np.ascontiguousarray(x.transpose(0, 2, 1))
    pre1, cache1 = conv1d_forward(xt, t["conv1.w"], t["conv1.b"], padding=1)
    a1 = relu(pre1)
    pre2, cache2 = conv1d_forward(a1, t["conv2.w"], t["conv2.b"], padding=1)
    a2 = relu(pre2)
    z = np.ascontiguousarray(a2.transpose(0, 2, 1))
    y, lstm_cache = bilstm_stack_forward(z, _lstm_layers(params), training, params.dropout_p, rng)
    seq_logits = y @ t["seq_head.w"][0] + t["seq_head.b"][0]
    glob_logit = y[:, -1, :] @ t["glob_head.w"][0] + t["glob_head.b"][0]
    out = (seq_logits[0], float(glob_logit[0])) if squeeze else (seq_logits, glob_logit)
    if not want_cache:
        return out
    cache = ConvLstmCache(cache1, cache2, pre1, pre2, lstm_cache, y, squeeze)
    return out, cache


def convlstm_backward(params: ConvLstmParams, cache: ConvLstmCache,
                      d_seq: np.ndarray, d_glob: np.ndarray) -> dict[str, np.ndarray]:
    if cache is None:
        raise RuntimeError("backward called without a recorded forward pass")
    t = params.tensors
    d_seq = np.asarray(d_seq, dtype=np.float64)
    d_glob = np.asarray(d_glob, dtype=np.float64)
    if cache.squeeze:
        d_seq = d_seq[None]
        d_glob = np.atleast_1d(d_glob)
    y = cache.lstm_out
    grads: dict[str, np.ndarray] = {}
    grads["seq_head.w"] = np.einsum("bw,bwh->h", d_seq, y)[None, :]
    grads["seq_head.b"] = np.array([d_seq.sum()])
    grads["glob_head.w"] = (d_glob[:, None] * y[:, -1, :]).sum(axis=0)[None, :]
    grads["glob_head.b"] = np.array([d_glob.sum()])
    dy = d_seq[:, :, None] * t["seq_head.w"][0]
    dy[:, -1, :] += d_glob[:, None] * t["glob_head.w"][0]
    dz, layer_grads = bilstm_stack_backward(dy, cache.lstm)
    for li, lg in enumerate(layer_grads):
        for k, v in lg.items():
            grads[f"lstm.l{li}.{k}"] = v
    da2 = np.ascontiguousarray(dz.transpose(0, 2, 1))
    dpre2 = relu_backward(da2, cache.pre2)
    da1, grads["conv2.w"], grads["conv2.b"] = conv1d_backward(dpre2, cache.conv2)
    dpre1 = relu_backward(da1, cache.pre1)
    _, grads["conv1.w"], grads["conv1.b"] = conv1d_backward(dpre1, cache.conv1)
    return grads


@dataclass
class CnnCache:
    steps: list
    bn_updates: dict[str, np.ndarray] = field(default_factory=dict)
    squeeze: bool = False


def cnn_forward(window: np.ndarray, params: CnnParams, training: bool = False,
                want_cache: bool = False):
    """Window (L, 4) or (B, L, 4) -> per-window logit.

    conv+bn+relu blocks with max pooling, a third conv, adaptive average
    pooling over time, then the 64 -> 64 -> 1 fully connected head.
    Training-mode batch-norm statistics updates are returned in the cache
    and applied by the caller, keeping the forward itself pure.
    """
    x, squeeze = _ensure_batched(window, BASELINE_CHANNELS, CNN)
    if x.shape[1] < 4:
        raise ValueError(f"cnn needs at least 4 samples per window, got {x.shape[1]}")
    t = params.tensors
    steps = []
    bn_updates: dict[str, np.ndarray] = {}
    h = np.ascontiguousarray(x.transpose(0, 2, 1))
    for block in ("block1", "block2"):
        pre, conv_cache = conv1d_forward(h, t[f"{block}.conv.w"], t[f"{block}.conv.b"], padding=2)
        bn_out, bn_cache, (new_rm, new_rv) = batchnorm1d_forward(
            pre, t[f"{block}.bn.gamma"], t[f"{block}.bn.beta"],
            t[f"{block}.bn.running_mean"], t[f"{block}.bn.running_var"],
            training, CNN_BN_MOMENTUM, CNN_BN_EPS)
        if training:
            bn_updates[f"{block}.bn.running_mean"] = new_rm
            bn_updates[f"{block}.bn.running_var"] = new_rv
        act = relu(bn_out)
        pooled, pool_cache = maxpool1d_forward(act, 2)
        steps.append((block, conv_cache, bn_cache, bn_out, pool_cache))
        h = pooled
    pre3, conv3_cache = conv1d_forward(h, t["conv3.w"], t["conv3.b"], padding=1)
    pooled, pool_shape = adaptive_avg_pool_forward(pre3)
    fc1_pre = linear_forward(pooled, t["fc1.w"], t["fc1.b"])
    fc1_out = relu(fc1_pre)
    logit = linear_forward(fc1_out, t["fc2.w"], t["fc2.b"])[:, 0]
    out = float(logit[0]) if squeeze else logit
    if not want_cache:
        return out
    steps.append((conv3_cache, pool_shape, pooled, fc1_pre, fc1_out))
    return out, CnnCache(steps, bn_updates, squeeze)


def cnn_backward(params: CnnParams, cache: CnnCache, d_logit) -> dict[str, np.ndarray]:
    if cache is None:
        raise RuntimeError("backward called without a recorded forward pass")
    t = params.tensors
    d_logit = np.atleast_1d(np.asarray(d_logit, dtype=np.float64))
    conv3_cache, pool_shape, pooled, fc1_pre, fc1_out = cache.steps[-1]
    grads: dict[str, np.ndarray] = {}
    d_fc1_out, grads["fc2.w"], grads["fc2.b"] = linear_backward(d_logit[:, None], fc1_out, t["fc2.w"])
    d_fc1_pre = relu_backward(d_fc1_out, fc1_pre)
    d_pooled, grads["fc1.w"], grads["fc1.b"] = linear_backward(d_fc1_pre, pooled, t["fc1.w"])
    d_pre3 = adaptive_avg_pool_backward(d_pooled, pool_shape)
    dh, grads["conv3.w"], grads["conv3.b"] = conv1d_backward(d_pre3, conv3_cache)
    for block, conv_cache, bn_cache, bn_out, pool_cache in reversed(cache.steps[:-1]):
        d_act = maxpool1d_backward(dh, pool_cache)
        d_bn_out = relu_backward(d_act, bn_out)
        d_pre, grads[f"{block}.bn.gamma"], grads[f"{block}.bn.beta"] = batchnorm1d_backward(d_bn_out, bn_cache)
        dh, grads[f"{block}.conv.w"], grads[f"{block}.conv.b"] = conv1d_backward(d_pre, conv_cache)
    return grads


def apply_bn_updates(params: CnnParams, cache: CnnCache) -> None:
    for name, value in cache.bn_updates.items():
        params.tensors[name] = value


def logistic_forward(window: np.ndarray, params: LogisticParams, want_cache: bool = False):
    """Window (50, 4) -> scalar logit: dot over the row-major flattened input."""
    x, squeeze = _ensure_batched(window, BASELINE_CHANNELS, LOGISTIC)
    if x.shape[1] != LOGISTIC_WINDOW:
        raise ValueError(f"logistic window must have exactly {LOGISTIC_WINDOW} samples, got {x.shape[1]}")
    flat = x.reshape(x.shape[0], -1)
    logit = flat @ params.tensors["w"] + params.tensors["b"][0]
    out = float(logit[0]) if squeeze else logit
    if not want_cache:
        return out
    return out, (flat, squeeze)


def logistic_backward(params: LogisticParams, cache, d_logit) -> dict[str, np.ndarray]:
    if cache is None:
        raise RuntimeError("backward called without a recorded forward pass")
    flat, _ = cache
    d_logit = np.atleast_1d(np.asarray(d_logit, dtype=np.float64))
    return {"w": d_logit @ flat, "b": np.array([d_logit.sum()])}


def model_forward(params, window, training: bool = False,
                  rng: np.random.Generator | None = None, want_cache: bool = False):
    if params.kind == CONVLSTM:
        return convlstm_forward(window, params, training, rng, want_cache)
    if params.kind == CNN:
        return cnn_forward(window, params, training, want_cache)
    if params.kind == LOGISTIC:
        return logistic_forward(window, params, want_cache)
    raise ValueError(f"unknown model kind: {params.kind}")


def model_backward(params, cache, *upstream) -> dict[str, np.ndarray]:
    if params.kind == CONVLSTM:
        return convlstm_backward(params, cache, *upstream)
    if params.kind == CNN:
        return cnn_backward(params, cache, *upstream)
    if params.kind == LOGISTIC:
        return logistic_backward(params, cache, *upstream)
    raise ValueError(f"unknown model kind: {params.kind}")
