"""Bidirectional stacked LSTM, forward and reverse-mode backward.

Gate layout in the 4H pre-activation block is i, f, g, o; i/f/o pass
through the logistic sigmoid and g through tanh. Each direction carries
two bias vectors (b_ih + b_hh) so exported weight files stay portable
across conventions that keep them separate.
"""

from __future__ import annotations

import numpy as np

from footfall.neuralnet.ops import dropout_forward, sigmoid


def lstm_cell(x, h, c, w_ih, w_hh, b_ih, b_hh):
    """Single unbatched cell step; the reference the batched path must match."""
    h_dim = h.shape[-1]
    g = w_ih @ x + w_hh @ h + b_ih + b_hh
    i = sigmoid(g[:h_dim])
    f = sigmoid(g[h_dim:2 * h_dim])
    gt = np.tanh(g[2 * h_dim:3 * h_dim])
    o = sigmoid(g[3 * h_dim:])
    c_new = f * c + i * gt
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def _step_order(w: int, reverse: bool) -> range:
    return range(w - 1, -1, -1) if reverse else range(w)


def lstm_direction_forward(x: np.ndarray, w_ih, w_hh, b_ih, b_hh, reverse: bool):
    """One direction over a batch: x (B, W, D_in) -> h sequence (B, W, H).

    Outputs and cached gate activations are stored at their time slot
    regardless of processing direction.
    """
    batch, width, _ = x.shape
    hid = w_hh.shape[1]
    xp = x @ w_ih.T + (b_ih + b_hh)
    gates = np.empty((batch, width, 4 * hid))
    c_seq = np.empty((batch, width, hid))
    tanh_c = np.empty((batch, width, hid))
    h_seq = np.empty((batch, width, hid))
    h = np.zeros((batch, hid))
    c = np.zeros((batch, hid))
    w_hh_t = w_hh.T
    for t in _step_order(width, reverse):
        g = xp[:, t] + h @ w_hh_t
        i = sigmoid(g[:, :hid])
        f = sigmoid(g[:, hid:2 * hid])
        gt = np.tanh(g[:, 2 * hid:3 * hid])
        o = sigmoid(g[:, 3 * hid:])
        c = f * c + i * gt
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, :hid] = i
        gates[:, t, hid:2 * hid] = f
        gates[:, t, 2 * hid:3 * hid] = gt
        gates[:, t, 3 * hid:] = o
        c_seq[:, t] = c
        tanh_c[:, t] = tc
        h_seq[:, t] = h
    cache = (x, w_ih, w_hh, gates, c_seq, tanh_c, h_seq, reverse)
    return h_seq, cache


def lstm_direction_backward(d_hseq: np.ndarray, cache):
    """Gradients for one direction given upstream d(h sequence)."""
    x, w_ih, w_hh, gates, c_seq, tanh_c, h_seq, reverse = cache
    batch, width, hid = h_seq.shape
    order = list(_step_order(width, reverse))
    d_gates = np.empty((batch, width, 4 * hid))
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))
    for step in range(width - 1, -1, -1):
        t = order[step]
        i = gates[:, t, :hid]
        f = gates[:, t, hid:2 * hid]
        gt = gates[:, t, 2 * hid:3 * hid]
        o = gates[:, t, 3 * hid:]
        tc = tanh_c[:, t]
        c_prev = c_seq[:, order[step - 1]] if step > 0 else 0.0
        dh = d_hseq[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * gt
        dgt = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dg = d_gates[:, t]
        dg[:, :hid] = di * i * (1.0 - i)
        dg[:, hid:2 * hid] = df * f * (1.0 - f)
        dg[:, 2 * hid:3 * hid] = dgt * (1.0 - gt * gt)
        dg[:, 3 * hid:] = do * o * (1.0 - o)
        dh_next = dg @ w_hh
    # h fed into step t is the previous processing step's output (zero at the start)
    h_prev = np.zeros_like(h_seq)
    if reverse:
        h_prev[:, :-1] = h_seq[:, 1:]
    else:
        h_prev[:, 1:] = h_seq[:, :-1]
    d_flat = d_gates.reshape(-1, 4 * hid)
    dw_ih = d_flat.T @ x.reshape(-1, x.shape[2])
    dw_hh = d_flat.T @ h_prev.reshape(-1, hid)
    db = d_gates.sum(axis=(0, 1))
    dx = d_gates @ w_ih
    return dx, {"w_ih": dw_ih, "w_hh": dw_hh, "b_ih": db, "b_hh": db.copy()}


def bilstm_layer_forward(x: np.ndarray, layer: dict[str, np.ndarray]):
    """x (B, W, D_in) -> (B, W, 2H): [forward, backward] concatenated per step."""
    fwd, cache_f = lstm_direction_forward(
        x, layer["fwd.w_ih"], layer["fwd.w_hh"], layer["fwd.b_ih"], layer["fwd.b_hh"], reverse=False)
    bwd, cache_b = lstm_direction_forward(
        x, layer["bwd.w_ih"], layer["bwd.w_hh"], layer["bwd.b_ih"], layer["bwd.b_hh"], reverse=True)
    return np.concatenate([fwd, bwd], axis=2), (cache_f, cache_b)


def bilstm_layer_backward(dy: np.ndarray, cache):
    cache_f, cache_b = cache
    hid = dy.shape[2] // 2
    dx_f, grads_f = lstm_direction_backward(np.ascontiguousarray(dy[:, :, :hid]), cache_f)
    dx_b, grads_b = lstm_direction_backward(np.ascontiguousarray(dy[:, :, hid:]), cache_b)
    grads = {f"fwd.{k}": v for k, v in grads_f.items()}
    grads.update({f"bwd.{k}": v for k, v in grads_b.items()})
    return dx_f + dx_b, grads


def bilstm_stack_forward(x: np.ndarray, layers: list[dict[str, np.ndarray]],
                         training: bool, dropout_p: float, rng: np.random.Generator | None):
    """Stacked BiLSTM with inter-layer dropout (training only)."""
    caches = []
    masks = []
    y = x
    for li, layer in enumerate(layers):
        y, cache = bilstm_layer_forward(y, layer)
        caches.append(cache)
        if training and dropout_p > 0 and li < len(layers) - 1:
            if rng is None:
                raise ValueError("training with dropout requires an rng")
            y, mask = dropout_forward(y, dropout_p, rng)
            masks.append(mask)
        else:
            masks.append(None)
    return y, (caches, masks)


def bilstm_stack_backward(dy: np.ndarray, cache):
    caches, masks = cache
    grads: list[dict[str, np.ndarray]] = [None] * len(caches)  # type: ignore[list-item]
    for li in range(len(caches) - 1, -1, -1):
        if masks[li] is not None:
            dy = dy * masks[li]
        dy, grads[li] = bilstm_layer_backward(dy, caches[li])
    return dy, grads


def bilstm_forward(seq: np.ndarray, layers: list[dict[str, np.ndarray]],
                   training: bool = False, dropout_p: float = 0.3,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Unbatched convenience wrapper: seq (W, D_in) -> (W, 2H)."""
    y, _ = bilstm_stack_forward(seq[None], layers, training, dropout_p, rng)
    return y[0]
