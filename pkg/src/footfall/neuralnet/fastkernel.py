"""Latency-optimized single-window inference for the streaming detector.

The recurrent loops are compiled with numba and every intermediate lives
in a buffer allocated once at construction, so a running detector does
no per-inference heap work beyond Python scalars. Numerics match the
reference :func:`footfall.neuralnet.convlstm_forward` to float64
round-off (the two differ only in summation order).
"""

from __future__ import annotations

import math

import numpy as np
import numba
from numba import njit, prange

from footfall.neuralnet.models import ConvLstmParams, IN_CHANNELS

# the default layer probe warns about an old TBB; omp is always present here
numba.config.THREADING_LAYER = "omp"


@njit(cache=True)
def _conv_stage(x, w1, b1, w2, b2, tmp, out):
    """x (W, 5) -> conv(5->16, k3, p1) -> ReLU -> conv(16->5, k3, p1) -> ReLU.

    tmp (W, 16) and out (W, 5) are preallocated.
    """
    width = x.shape[0]
    c_mid = w1.shape[0]
    c_in = w1.shape[1]
    for t in range(width):
        for o in range(c_mid):
            acc = b1[o]
            for k in range(3):
                src = t + k - 1
                if 0 <= src < width:
                    for c in range(c_in):
                        acc += w1[o, c, k] * x[src, c]
            tmp[t, o] = acc if acc > 0.0 else 0.0
    for t in range(width):
        for o in range(c_in):
            acc = b2[o]
            for k in range(3):
                src = t + k - 1
                if 0 <= src < width:
                    for c in range(c_mid):
                        acc += w2[o, c, k] * tmp[src, c]
            out[t, o] = acc if acc > 0.0 else 0.0


@njit(cache=True, parallel=True)
def _bilstm_layer(xp, w_hh_t_f, w_hh_t_b, hid, out):
    """One bidirectional layer from precomputed input projections.

    xp (W, 8H) holds the forward direction's 4H projections in the first
    half of each row and the backward direction's in the second half;
    out (W, 2H) gets [fwd, bwd] per time step.
    """
    width = xp.shape[0]
    gates = 4 * hid
    for d in prange(2):
        w_hh_t = w_hh_t_f if d == 0 else w_hh_t_b
        base = d * gates
        h = np.zeros(hid)
        c = np.zeros(hid)
        g = np.empty(gates)
        for step in range(width):
            t = step if d == 0 else width - 1 - step
            for j in range(gates):
                g[j] = xp[t, base + j]
            for k in range(hid):
                hk = h[k]
                if hk != 0.0:
                    row = w_hh_t[k]
                    for j in range(gates):
                        g[j] += row[j] * hk
            for k in range(hid):
                gi = 1.0 / (1.0 + math.exp(-g[k]))
                gf = 1.0 / (1.0 + math.exp(-g[hid + k]))
                gg = math.tanh(g[2 * hid + k])
                go = 1.0 / (1.0 + math.exp(-g[3 * hid + k]))
                ck = gf * c[k] + gi * gg
                c[k] = ck
                hk_new = go * math.tanh(ck)
                h[k] = hk_new
                out[t, d * hid + k] = hk_new


def _pack_direction_pair(tensors, layer: int):
    """Concatenate a layer's two directions for one fused input projection."""
    fwd_w = tensors[f"lstm.l{layer}.fwd.w_ih"]
    bwd_w = tensors[f"lstm.l{layer}.bwd.w_ih"]
    w_ih = np.ascontiguousarray(np.concatenate([fwd_w, bwd_w], axis=0).T)  # (D_in, 8H)
    bias = np.concatenate([
        tensors[f"lstm.l{layer}.fwd.b_ih"] + tensors[f"lstm.l{layer}.fwd.b_hh"],
        tensors[f"lstm.l{layer}.bwd.b_ih"] + tensors[f"lstm.l{layer}.bwd.b_hh"],
    ])
    whh_f = np.ascontiguousarray(tensors[f"lstm.l{layer}.fwd.w_hh"].T)  # (H, 4H)
    whh_b = np.ascontiguousarray(tensors[f"lstm.l{layer}.bwd.w_hh"].T)
    return w_ih, bias, whh_f, whh_b


class ConvLstmInference:
    """Preallocated single-window forward pass for a fixed window size."""

    def __init__(self, params: ConvLstmParams, window_size: int):
        t = params.tensors
        self.hidden = params.hidden
        self.window_size = window_size
        self._w1 = np.ascontiguousarray(t["conv1.w"])
        self._b1 = np.ascontiguousarray(t["conv1.b"])
        self._w2 = np.ascontiguousarray(t["conv2.w"])
        self._b2 = np.ascontiguousarray(t["conv2.b"])
        self._l0 = _pack_direction_pair(t, 0)
        self._l1 = _pack_direction_pair(t, 1)
        self._seq_w = np.ascontiguousarray(t["seq_head.w"][0])
        self._seq_b = float(t["seq_head.b"][0])
        self._glob_w = np.ascontiguousarray(t["glob_head.w"][0])
        self._glob_b = float(t["glob_head.b"][0])
        hid = self.hidden
        w = window_size
        self._conv_tmp = np.empty((w, 16))
        self._z = np.empty((w, IN_CHANNELS))
        self._xp0 = np.empty((w, 8 * hid))
        self._y0 = np.empty((w, 2 * hid))
        self._xp1 = np.empty((w, 8 * hid))
        self._y1 = np.empty((w, 2 * hid))
        self.seq_logits = np.empty(w)
        self.seq_probs = np.empty(w)

    def infer(self, window: np.ndarray) -> tuple[np.ndarray, float]:
        """window (W, 5) float64 -> (seq_logits view, glob_logit).

        The returned array is reused across calls; copy it to keep it.
        """
        _conv_stage(window, self._w1, self._b1, self._w2, self._b2, self._conv_tmp, self._z)
        w_ih0, bias0, whh0_f, whh0_b = self._l0
        np.dot(self._z, w_ih0, out=self._xp0)
        self._xp0 += bias0
        _bilstm_layer(self._xp0, whh0_f, whh0_b, self.hidden, self._y0)
        w_ih1, bias1, whh1_f, whh1_b = self._l1
        np.dot(self._y0, w_ih1, out=self._xp1)
        self._xp1 += bias1
        _bilstm_layer(self._xp1, whh1_f, whh1_b, self.hidden, self._y1)
        np.dot(self._y1, self._seq_w, out=self.seq_logits)
        self.seq_logits += self._seq_b
        glob = float(self._y1[-1] @ self._glob_w + self._glob_b)
        return self.seq_logits, glob

    def probabilities(self) -> np.ndarray:
        """Sigmoid of the last seq_logits, into a reused buffer."""
        np.negative(self.seq_logits, out=self.seq_probs)
        np.exp(self.seq_probs, out=self.seq_probs)
        self.seq_probs += 1.0
        np.reciprocal(self.seq_probs, out=self.seq_probs)
        return self.seq_probs
