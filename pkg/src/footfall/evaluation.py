"""Offline tester: batch inference, event reconstruction, tolerance sweep.

Per-index probabilities come from sliding-window inference with mean
aggregation over overlapping windows; predicted events are the probability
argmax of each maximal run above threshold. Matching against ground truth
is greedy and one-to-one, evaluated at tolerances 0..50 samples in steps
of 5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from footfall.neuralnet.models import CONVLSTM, model_forward
from footfall.neuralnet.ops import sigmoid

TOLERANCE_GRID = tuple(range(0, 51, 5))


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fn: int
    fp: int


@dataclass(frozen=True)
class ToleranceRow:
    tol: int
    tp: int
    fn: int
    fp: int
    precision: float
    recall: float
    f1: float


def batch_probs(features: np.ndarray, params, window_size: int, stride: int,
                chunk: int = 64) -> np.ndarray:
    """Per-index footfall probability over a full (scaled) feature series.

    Indices covered by several windows get the mean of their per-window
    probabilities; trailing indices not covered by any window get 0.
    Window-level models spread their single window probability uniformly
    over the window before averaging.
    """
    n = len(features)
    if n < window_size:
        raise ValueError(f"series of {n} samples shorter than window {window_size}")
    starts = list(range(0, n - window_size + 1, stride))
    acc = np.zeros(n)
    cover = np.zeros(n)
    seq_model = params.kind == CONVLSTM
    for lo in range(0, len(starts), chunk):
        group = starts[lo:lo + chunk]
        stack = np.stack([features[s:s + window_size] for s in group])
        if seq_model:
            seq_logits, _ = model_forward(params, stack, training=False)
            probs = sigmoid(seq_logits)
        else:
            logits = np.atleast_1d(model_forward(params, stack, training=False))
            probs = np.repeat(sigmoid(logits)[:, None], window_size, axis=1)
        for s, p in zip(group, probs):
            acc[s:s + window_size] += p
            cover[s:s + window_size] += 1.0
    covered = cover > 0
    acc[covered] /= cover[covered]
    return acc


def extract_events(probs: np.ndarray, threshold: float) -> np.ndarray:
    """One event per maximal run of probs > threshold: the run's argmax index."""
    p = np.asarray(probs, dtype=np.float64)
    above = p > threshold
    if not above.any():
        return np.empty(0, dtype=np.intp)
    padded = np.concatenate([[False], above, [False]])
    starts = np.flatnonzero(padded[1:] & ~padded[:-1])
    ends = np.flatnonzero(~padded[1:] & padded[:-1])
    return np.array([s + int(np.argmax(p[s:e])) for s, e in zip(starts, ends)], dtype=np.intp)


def tolerance_match(pred: np.ndarray, truth: np.ndarray, tol: int) -> MatchCounts:
    """Greedy one-to-one matching of truths to the nearest unmatched prediction.

    Truths are scanned in order; ties between equally near predictions go
    to the earlier one. Unmatched truths count FN, unmatched predictions FP.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    used = np.zeros(len(pred), dtype=bool)
    tp = 0
    for t in truth:
        best_j = -1
        best_d = None
        for j in range(len(pred)):
            if used[j]:
                continue
            d = abs(int(pred[j]) - int(t))
            if d <= tol and (best_d is None or d < best_d):
                best_d, best_j = d, j
        if best_j >= 0:
            used[best_j] = True
            tp += 1
    return MatchCounts(tp=tp, fn=len(truth) - tp, fp=int((~used).sum()))


def prf(tp: int, fn: int, fp: int) -> tuple[float, float, float]:
    """Precision, recall, F1 with the 0/0 -> 0 convention."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def tolerance_sweep(pred: np.ndarray, truth: np.ndarray) -> list[ToleranceRow]:
    rows = []
    for tol in TOLERANCE_GRID:
        counts = tolerance_match(pred, truth, tol)
        precision, recall, f1 = prf(counts.tp, counts.fn, counts.fp)
        rows.append(ToleranceRow(tol, counts.tp, counts.fn, counts.fp, precision, recall, f1))
    return rows


def report_to_dict(rows: list[ToleranceRow]) -> dict:
    return {
        str(r.tol): {"tp": r.tp, "fn": r.fn, "fp": r.fp,
                     "prec": round(r.precision, 4), "rec": round(r.recall, 4),
                     "f1": round(r.f1, 4)}
        for r in rows
    }


def write_report(rows: list[ToleranceRow], path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(rows), indent=2))
