"""The streaming detector: buffer, stride-triggered inference, gating.

All timing decisions use the timestamps carried by the samples (data
time), never the host clock, so replays are deterministic and
rate-invariant. Configuration updates swap an immutable snapshot that the
next inference reads once.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from footfall.features import ScalerStats
from footfall.neuralnet.fastkernel import ConvLstmInference
from footfall.neuralnet.models import ConvLstmParams
from footfall.training import Metadata

logger = logging.getLogger(__name__)

TUNABLE_PARAMS = (
    "sample_threshold",
    "window_threshold",
    "inference_stride",
    "hit_window",
    "required_hits",
    "min_interval_ms",
)

_INT_PARAMS = {"inference_stride", "hit_window", "required_hits", "min_interval_ms"}


@dataclass(frozen=True)
class DetectorConfig:
    sample_threshold: float = 0.85
    window_threshold: float = 0.45
    inference_stride: int = 25
    hit_window: int = 5
    required_hits: int = 3
    min_interval_ms: int = 300

    def __post_init__(self) -> None:
        if not (0.0 <= self.sample_threshold <= 1.0):
            raise ValueError("sample_threshold must be in [0, 1]")
        if not (0.0 <= self.window_threshold <= 1.0):
            raise ValueError("window_threshold must be in [0, 1]")
        if self.inference_stride < 1:
            raise ValueError("inference_stride must be >= 1")
        if not (1 <= self.required_hits <= self.hit_window):
            raise ValueError("required 1 <= required_hits <= hit_window")
        if self.min_interval_ms < 0:
            raise ValueError("min_interval_ms must be >= 0")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DetectionEvent:
    timestamp_ms: int          # timestamp of the peak-probability sample
    confidence: float          # per-sample probability at that peak
    window_confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class TelemetryFrame:
    timestamp_ms: int
    p_t: float
    p_win: float
    fired: bool
    truth: bool | None = None


class FootfallDetector:
    """Feeds samples through the model once per stride and gates detections.

    One streaming context owns push_sample; set_param may be called from
    any thread. Inference reuses buffers allocated here, so the steady
    state does no per-sample heap work.
    """

    def __init__(self, params: ConvLstmParams, metadata: Metadata,
                 config: DetectorConfig | None = None):
        self.metadata = metadata
        self._config = config or DetectorConfig()
        self._config_lock = threading.Lock()
        w = metadata.window_size
        self._engine = ConvLstmInference(params, w)
        self._scaler: ScalerStats = metadata.scaler
        self._ring = np.empty((w, 5))
        self._ring_ts = np.empty(w, dtype=np.int64)
        self._linear = np.empty((w, 5))
        self._linear_ts = np.empty(w, dtype=np.int64)
        self._norm = np.empty((w, 5))
        self._pos = 0
        self._filled = 0
        self._since_inference = 0
        self._prev_ts: int | None = None
        self._pending_first: tuple[float, float, float, int] | None = None
        self._hits: list[bool] = []
        self._last_detection_ms = -math.inf
        self._truth_pending = False
        self.total_detections = 0
        self.total_inferences = 0
        self.samples_seen = 0
        self.error_count = 0
        self.on_frame = None       # callable(TelemetryFrame)
        self.on_event = None       # callable(DetectionEvent)
        self.inference_tap = None  # callable(start_index, probs_view); test hook

    @property
    def config(self) -> DetectorConfig:
        return self._config

    @property
    def window_size(self) -> int:
        return self.metadata.window_size

    def set_param(self, name: str, value) -> DetectorConfig:
        """Validate and atomically swap one tunable; raises ValueError if bad."""
        if name not in TUNABLE_PARAMS:
            raise ValueError(f"unknown parameter: {name}")
        value = int(value) if name in _INT_PARAMS else float(value)
        with self._config_lock:
            new_config = dataclasses.replace(self._config, **{name: value})
            self._config = new_config
        return new_config

    def _append_row(self, x: float, y: float, z: float, t_ms: int, dt: float) -> None:
        row = self._ring[self._pos]
        row[0] = x
        row[1] = y
        row[2] = z
        row[3] = math.sqrt(x * x + y * y + z * z)
        row[4] = dt
        self._ring_ts[self._pos] = t_ms
        self._pos = (self._pos + 1) % self.window_size
        self._filled = min(self._filled + 1, self.window_size)
        self._since_inference += 1
        self.samples_seen += 1

    def push_sample(self, x: float, y: float, z: float, t_ms: int,
                    truth: bool = False) -> list[DetectionEvent]:
        """Ingest one sample; returns zero or one confirmed detections."""
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)
                and math.isfinite(t_ms)):
            self.error_count += 1
            return []
        t_ms = int(t_ms)
        self._truth_pending = self._truth_pending or truth

        if self._prev_ts is None and self._pending_first is None:
            # hold the first sample until dt can be copied from the second
            self._pending_first = (x, y, z, t_ms)
            return []
        if self._pending_first is not None:
            fx, fy, fz, ft = self._pending_first
            dt = float(t_ms - ft)
            self._pending_first = None
            self._append_row(fx, fy, fz, ft, dt)
            self._prev_ts = ft

        dt = float(t_ms - self._prev_ts)
        self._prev_ts = t_ms
        self._append_row(x, y, z, t_ms, dt)

        cfg = self._config
        if self._filled < self.window_size or self._since_inference < cfg.inference_stride:
            return []
        p_t, p_win, peak_ts = self._run_inference(cfg)
        self._since_inference = 0
        fired = self.gate(p_t, p_win, t_ms, cfg)
        truth_flag = self._truth_pending
        self._truth_pending = False
        frame = TelemetryFrame(t_ms, p_t, p_win, fired, truth_flag)
        if self.on_frame is not None:
            self.on_frame(frame)
        if not fired:
            return []
        event = DetectionEvent(peak_ts, p_t, p_win)
        self.total_detections += 1
        if self.on_event is not None:
            self.on_event(event)
        return [event]

    def _unroll(self) -> None:
        w = self.window_size
        k = w - self._pos
        self._linear[:k] = self._ring[self._pos:]
        self._linear[k:] = self._ring[:self._pos]
        self._linear_ts[:k] = self._ring_ts[self._pos:]
        self._linear_ts[k:] = self._ring_ts[:self._pos]

    def _run_inference(self, cfg: DetectorConfig) -> tuple[float, float, int]:
        self._unroll()
        np.subtract(self._linear, self._scaler.mean, out=self._norm)
        np.divide(self._norm, self._scaler.scale, out=self._norm)
        _, glob_logit = self._engine.infer(self._norm)
        probs = self._engine.probabilities()
        self.total_inferences += 1
        if self.inference_tap is not None:
            self.inference_tap(self.samples_seen - self.window_size, probs)
        tail = min(cfg.inference_stride, self.window_size)
        region = probs[self.window_size - tail:]
        peak_off = int(np.argmax(region))
        p_t = float(region[peak_off])
        p_win = 1.0 / (1.0 + math.exp(-glob_logit))
        peak_ts = int(self._linear_ts[self.window_size - tail + peak_off])
        return p_t, p_win, peak_ts

    def infer_once(self) -> tuple[float, float]:
        """Run inference on the current buffer without gating; needs a full buffer."""
        if self._filled < self.window_size:
            raise RuntimeError("buffer not full")
        p_t, p_win, _ = self._run_inference(self._config)
        return p_t, p_win

    def gate(self, p_t: float, p_win: float, t_ms: int, cfg: DetectorConfig | None = None) -> bool:
        """N-of-M majority filter plus refractory period, in data time."""
        cfg = cfg or self._config
        hit = p_t > cfg.sample_threshold and p_win > cfg.window_threshold
        self._hits.append(hit)
        if len(self._hits) > cfg.hit_window:
            del self._hits[:len(self._hits) - cfg.hit_window]
        fired = (sum(self._hits) >= cfg.required_hits
                 and t_ms - self._last_detection_ms >= cfg.min_interval_ms)
        if fired:
            self._hits.clear()
            self._last_detection_ms = t_ms
        return fired
