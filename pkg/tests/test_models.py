from __future__ import annotations

import math

import numpy as np
import pytest

from footfall.neuralnet import (
    CnnParams,
    cnn_forward,
    convlstm_forward,
    init_params,
    load_weights,
    logistic_forward,
    save_weights,
)
from footfall.neuralnet.models import (
    CNN,
    CONVLSTM,
    LOGISTIC,
    convlstm_tensor_shapes,
    params_from_tensors,
    trainable_names,
)
from footfall.neuralnet.fastkernel import ConvLstmInference

from test_lstm import scalar_lstm_oracle


def conv_relu_scalar(x, w, b):
    """Same-padded k3 convolution + ReLU over (W, C_in), scalar loops."""
    width, c_in = x.shape
    c_out = w.shape[0]
    y = np.zeros((width, c_out))
    for t in range(width):
        for o in range(c_out):
            acc = b[o]
            for j in range(3):
                src = t + j - 1
                if 0 <= src < width:
                    for c in range(c_in):
                        acc += w[o, c, j] * x[src, c]
            y[t, o] = max(acc, 0.0)
    return y


def convlstm_scalar_oracle(window, params):
    t = params.tensors
    z = conv_relu_scalar(window, t["conv1.w"], t["conv1.b"])
    z = conv_relu_scalar(z, t["conv2.w"], t["conv2.b"])
    y = z
    for li in (0, 1):
        fwd = scalar_lstm_oracle(y, t[f"lstm.l{li}.fwd.w_ih"], t[f"lstm.l{li}.fwd.w_hh"],
                                 t[f"lstm.l{li}.fwd.b_ih"], t[f"lstm.l{li}.fwd.b_hh"])
        bwd = scalar_lstm_oracle(y[::-1], t[f"lstm.l{li}.bwd.w_ih"], t[f"lstm.l{li}.bwd.w_hh"],
                                 t[f"lstm.l{li}.bwd.b_ih"], t[f"lstm.l{li}.bwd.b_hh"])[::-1]
        y = np.concatenate([fwd, bwd], axis=1)
    seq = y @ t["seq_head.w"][0] + t["seq_head.b"][0]
    glob = float(y[-1] @ t["glob_head.w"][0] + t["glob_head.b"][0])
    return seq, glob


def test_convlstm_zero_params_zero_logits():
    params = init_params(CONVLSTM, seed=0, hidden=4)
    for name in params.tensors:
        params.tensors[name][:] = 0.0
    seq, glob = convlstm_forward(np.ones((20, 5)), params)
    np.testing.assert_array_equal(seq, np.zeros(20))
    assert glob == 0.0


def test_convlstm_shapes():
    params = init_params(CONVLSTM, seed=1, hidden=8)
    seq, glob = convlstm_forward(np.random.default_rng(0).standard_normal((600, 5)), params)
    assert seq.shape == (600,)
    assert isinstance(glob, float)


def test_convlstm_matches_scalar_oracle():
    params = init_params(CONVLSTM, seed=2, hidden=2)
    rng = np.random.default_rng(3)
    window = rng.standard_normal((8, 5))
    seq, glob = convlstm_forward(window, params)
    seq_o, glob_o = convlstm_scalar_oracle(window, params)
    np.testing.assert_allclose(seq, seq_o, atol=1e-10)
    assert glob == pytest.approx(glob_o, abs=1e-10)


def test_convlstm_rejects_nonfinite():
    params = init_params(CONVLSTM, seed=0, hidden=2)
    bad = np.ones((10, 5))
    bad[3, 2] = np.nan
    with pytest.raises(ValueError, match="finite"):
        convlstm_forward(bad, params)


def test_convlstm_batched_equals_loop():
    params = init_params(CONVLSTM, seed=4, hidden=3)
    rng = np.random.default_rng(5)
    batch = rng.standard_normal((3, 12, 5))
    seq_b, glob_b = convlstm_forward(batch, params)
    for i in range(3):
        seq_i, glob_i = convlstm_forward(batch[i], params)
        np.testing.assert_allclose(seq_b[i], seq_i, atol=1e-12)
        assert glob_b[i] == pytest.approx(glob_i, abs=1e-12)


def test_convlstm_inference_eval_deterministic():
    params = init_params(CONVLSTM, seed=6, hidden=3)
    window = np.random.default_rng(7).standard_normal((30, 5))
    a = convlstm_forward(window, params)
    b = convlstm_forward(window, params)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1]


def test_fast_kernel_matches_reference():
    params = init_params(CONVLSTM, seed=8, hidden=16)
    rng = np.random.default_rng(9)
    window = rng.standard_normal((100, 5))
    seq_ref, glob_ref = convlstm_forward(window, params)
    engine = ConvLstmInference(params, window_size=100)
    seq_fast, glob_fast = engine.infer(np.ascontiguousarray(window))
    np.testing.assert_allclose(seq_fast, seq_ref, atol=1e-9)
    assert glob_fast == pytest.approx(glob_ref, abs=1e-9)
    probs = engine.probabilities()
    np.testing.assert_allclose(probs, 1 / (1 + np.exp(-seq_ref)), atol=1e-9)


def test_dropout_expectation_preserved():
    # mean over many stochastic forwards approaches the eval-mode output
    params = init_params(CONVLSTM, seed=10, hidden=3)
    window = np.random.default_rng(11).standard_normal((10, 5))
    eval_seq, _ = convlstm_forward(window, params)
    rng = np.random.default_rng(12)
    n = 10_000
    acc = np.zeros(10)
    sq = np.zeros(10)
    for _ in range(n):
        seq, _ = convlstm_forward(window, params, training=True, rng=rng)
        acc += seq
        sq += seq ** 2
    mean = acc / n
    se = np.sqrt((sq / n - mean ** 2) / n)
    assert np.all(np.abs(mean - eval_seq) <= 3 * se + 1e-9)


def test_cnn_zero_params_zero_logit():
    params = init_params(CNN, seed=0)
    for name in trainable_names(params):
        params.tensors[name][:] = 0.0
    params.tensors["block1.bn.running_var"][:] = 1.0
    params.tensors["block2.bn.running_var"][:] = 1.0
    assert cnn_forward(np.ones((32, 4)), params) == 0.0


def test_cnn_eval_deterministic():
    params = init_params(CNN, seed=1)
    window = np.full((200, 4), 0.7)
    a = cnn_forward(window, params, training=False)
    b = cnn_forward(window, params, training=False)
    assert a == b


def test_cnn_accepts_other_lengths():
    params = init_params(CNN, seed=2)
    out = cnn_forward(np.random.default_rng(0).standard_normal((64, 4)), params)
    assert isinstance(out, float)


def test_cnn_rejects_short_input():
    params = init_params(CNN, seed=3)
    with pytest.raises(ValueError, match="at least 4"):
        cnn_forward(np.ones((3, 4)), params)


def test_logistic_bias_only():
    params = init_params(LOGISTIC, seed=0)
    params.tensors["w"][:] = 0.0
    params.tensors["b"][0] = 0.7
    assert logistic_forward(np.random.default_rng(1).standard_normal((50, 4)), params) == pytest.approx(0.7)


def test_logistic_one_hot_row_major():
    params = init_params(LOGISTIC, seed=1)
    params.tensors["w"][:] = 0.0
    params.tensors["b"][0] = 0.0
    k = 87
    params.tensors["w"][k] = 1.0
    window = np.arange(200, dtype=float).reshape(50, 4)
    assert logistic_forward(window, params) == window[k // 4, k % 4]


def test_logistic_matches_double_loop():
    params = init_params(LOGISTIC, seed=2)
    rng = np.random.default_rng(3)
    window = rng.standard_normal((50, 4))
    acc = float(params.tensors["b"][0])
    for i in range(50):
        for j in range(4):
            acc += params.tensors["w"][i * 4 + j] * window[i, j]
    assert logistic_forward(window, params) == pytest.approx(acc, abs=1e-12)


def test_logistic_rejects_wrong_shape():
    params = init_params(LOGISTIC, seed=4)
    with pytest.raises(ValueError, match="50"):
        logistic_forward(np.ones((49, 4)), params)


def test_init_deterministic_and_bounded():
    a = init_params(CONVLSTM, seed=42, hidden=4)
    b = init_params(CONVLSTM, seed=42, hidden=4)
    c = init_params(CONVLSTM, seed=43, hidden=4)
    assert all(np.array_equal(a.tensors[n], b.tensors[n]) for n in a.tensors)
    assert any(not np.array_equal(a.tensors[n], c.tensors[n]) for n in a.tensors)
    for name, shape in convlstm_tensor_shapes(4).items():
        t = a.tensors[name]
        assert t.shape == shape
        if not name.rsplit(".", 1)[-1].startswith("b"):
            fan_in = shape[1] * shape[2] if len(shape) == 3 else shape[-1]
            assert np.all(np.abs(t) < 1.0 / np.sqrt(fan_in))


def test_weights_round_trip_bitwise():
    params = init_params(CONVLSTM, seed=5, hidden=4)
    tensors = load_weights(save_weights(params.tensors))
    reloaded = params_from_tensors(CONVLSTM, tensors)
    window = np.random.default_rng(6).standard_normal((15, 5))
    a_seq, a_glob = convlstm_forward(window, params)
    b_seq, b_glob = convlstm_forward(window, reloaded)
    assert np.array_equal(a_seq, b_seq)  # 0 ulp
    assert a_glob == b_glob


def test_weights_validation_errors():
    from footfall.neuralnet import WeightsFormatError

    with pytest.raises(WeightsFormatError):
        load_weights(b"[]")
    with pytest.raises(WeightsFormatError, match="shape"):
        load_weights(b'{"w": {"shape": [3], "data": [1, 2]}}')
    with pytest.raises(ValueError, match="missing"):
        params_from_tensors(LOGISTIC, {"w": np.zeros(200)})
