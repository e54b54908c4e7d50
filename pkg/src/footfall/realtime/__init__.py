"""Streaming footfall detection: ring buffer, gating, OSC and telemetry."""

from footfall.realtime.detector import (
    DetectionEvent,
    DetectorConfig,
    FootfallDetector,
    TelemetryFrame,
    TUNABLE_PARAMS,
)
from footfall.realtime.osc import OscSender, encode_osc
from footfall.realtime.replay import ReplayStats, replay
from footfall.realtime.telemetry import TelemetryHub

__all__ = [
    "DetectionEvent",
    "DetectorConfig",
    "FootfallDetector",
    "OscSender",
    "ReplayStats",
    "TelemetryFrame",
    "TelemetryHub",
    "TUNABLE_PARAMS",
    "encode_osc",
    "replay",
]
