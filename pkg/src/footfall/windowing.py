"""Fixed-length overlapping windows with per-sample and whole-window labels.

Each window carries the feature rows, the per-sample 0/1 targets, and a
global label that is 1 when any sample in the window is positive. Trailing
samples that do not fill a final window are discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WindowingConfig:
    window_size: int = 600  # 3 s at 200 Hz
    stride: int = 150

    def __post_init__(self) -> None:
        if not (1 <= self.stride <= self.window_size):
            raise ValueError("stride must satisfy 1 <= stride <= window_size")


@dataclass
class Window:
    feats: np.ndarray       # (W, F) view into the source matrix
    seq_labels: np.ndarray  # (W,)
    glob_label: int
    start_index: int


def window_count(n: int, window_size: int, stride: int) -> int:
    if n <= 0 or window_size <= 0 or stride <= 0:
        raise ValueError("n, window_size and stride must be positive")
    if n < window_size:
        return 0
    return (n - window_size) // stride + 1


def slice_windows(features: np.ndarray, targets: np.ndarray, cfg: WindowingConfig) -> list[Window]:
    """Slice into windows starting at 0, S, 2S, ...; views, no copies."""
    features = np.asarray(features)
    targets = np.asarray(targets)
    if len(features) != len(targets):
        raise ValueError("features and targets must have equal length")
    w, s = cfg.window_size, cfg.stride
    out = []
    for start in range(0, len(features) - w + 1, s):
        seq = targets[start:start + w]
        out.append(Window(features[start:start + w], seq, int(seq.max(initial=0)), start))
    return out


def sampler_weights(windows: list[Window], factor: float) -> np.ndarray:
    """Weight `factor` for positive windows, 1.0 otherwise."""
    if factor <= 0:
        raise ValueError("oversample factor must be positive")
    return np.array([factor if w.glob_label else 1.0 for w in windows], dtype=np.float64)


def weighted_sample_epoch(weights: np.ndarray, epoch_len: int, rng: np.random.Generator) -> np.ndarray:
    """Draw epoch_len window indices with replacement, p proportional to weight."""
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must not be all zero")
    return rng.choice(len(weights), size=epoch_len, replace=True, p=weights / total)
