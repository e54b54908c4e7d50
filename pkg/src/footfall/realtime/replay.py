"""Replay recorded sessions through the detector, with data-time semantics.

The refractory and all telemetry timestamps come from the samples, so a
replay at any host rate (or unpaced) produces identical detections.
Final statistics match detections against annotations at a tolerance
equivalent to the refractory interval.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from footfall.data_io import RawSession, nearest_sample_indices
from footfall.evaluation import prf, tolerance_match
from footfall.realtime.detector import DetectionEvent, FootfallDetector


@dataclass
class ReplayStats:
    n_samples: int
    n_truth_events: int
    detections: list[DetectionEvent] = field(default_factory=list)
    tolerance_samples: int = 0
    tp: int = 0
    fn: int = 0
    fp: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0


def nominal_period_ms(timestamps: np.ndarray) -> float:
    if len(timestamps) < 2:
        return 5.0
    return float(np.median(np.diff(timestamps)))


def replay(session: RawSession, rate_multiplier: float, detector: FootfallDetector) -> ReplayStats:
    """Feed a session through the detector; 0 means unpaced (as fast as possible)."""
    if rate_multiplier < 0:
        raise ValueError("rate_multiplier must be >= 0 (0 = unpaced)")
    ts = session.timestamps
    truth_idx = set(
        int(i) for i in nearest_sample_indices(ts, session.event_times)
    ) if session.n_events else set()

    detections: list[DetectionEvent] = []
    prev_t = None
    for i in range(len(session)):
        t = int(ts[i])
        if rate_multiplier > 0 and prev_t is not None and t > prev_t:
            time.sleep((t - prev_t) / 1000.0 / rate_multiplier)
        prev_t = t
        detections.extend(
            detector.push_sample(session.xyz[i, 0], session.xyz[i, 1], session.xyz[i, 2],
                                 t, truth=i in truth_idx)
        )

    stats = ReplayStats(n_samples=len(session), n_truth_events=session.n_events,
                        detections=detections)
    period = nominal_period_ms(ts)
    stats.tolerance_samples = max(1, int(round(detector.config.min_interval_ms / period)))
    if session.n_events:
        pred_idx = nearest_sample_indices(ts, np.array([d.timestamp_ms for d in detections])) \
            if detections else np.empty(0, dtype=np.intp)
        truth = nearest_sample_indices(ts, session.event_times)
        counts = tolerance_match(np.sort(pred_idx), np.sort(truth), stats.tolerance_samples)
        stats.tp, stats.fn, stats.fp = counts.tp, counts.fn, counts.fp
        stats.precision, stats.recall, stats.f1 = prf(counts.tp, counts.fn, counts.fp)
    return stats
