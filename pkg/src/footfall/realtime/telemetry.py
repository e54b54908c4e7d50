"""Transport-agnostic telemetry fan-out and the tuning-protocol messages.

One frame is published per inference. Each consumer has a bounded frame
queue that drops oldest on overflow so a slow client can never stall the
detector; detection events use an unbounded lane and are never dropped.
The JSON message vocabulary here is exactly what the WebSocket server
and the tuning UI speak.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from footfall.realtime.detector import (
    DetectionEvent,
    FootfallDetector,
    TelemetryFrame,
)

DEFAULT_FRAME_CAPACITY = 512


@dataclass
class TelemetryConsumer:
    frames: deque = field(default_factory=lambda: deque(maxlen=DEFAULT_FRAME_CAPACITY))
    events: deque = field(default_factory=deque)
    dropped_frames: int = 0


def frame_message(frame: TelemetryFrame) -> dict:
    return {
        "type": "telemetry",
        "t": frame.timestamp_ms,
        "p_t": frame.p_t,
        "p_win": frame.p_win,
        "fired": frame.fired,
        "truth": frame.truth,
    }


def event_message(event: DetectionEvent, total: int) -> dict:
    return {
        "type": "event",
        "t": event.timestamp_ms,
        "confidence": event.confidence,
        "total": total,
    }


def hello_message(detector: FootfallDetector) -> dict:
    return {
        "type": "hello",
        "config": detector.config.as_dict(),
        "metadata": detector.metadata.to_dict(),
    }


class TelemetryHub:
    """Fan-out of frames/events to consumers plus config-message handling."""

    def __init__(self, detector: FootfallDetector, frame_capacity: int = DEFAULT_FRAME_CAPACITY):
        self.detector = detector
        self._consumers: list[TelemetryConsumer] = []
        self._lock = threading.Lock()
        detector.on_frame = self.publish_frame
        detector.on_event = self.publish_event

    def subscribe(self, frame_capacity: int | None = None) -> TelemetryConsumer:
        consumer = TelemetryConsumer()
        if frame_capacity is not None:
            consumer.frames = deque(maxlen=frame_capacity)
        with self._lock:
            self._consumers.append(consumer)
        return consumer

    def unsubscribe(self, consumer: TelemetryConsumer) -> None:
        with self._lock:
            if consumer in self._consumers:
                self._consumers.remove(consumer)

    def publish_frame(self, frame: TelemetryFrame) -> None:
        msg = frame_message(frame)
        with self._lock:
            for c in self._consumers:
                if len(c.frames) == c.frames.maxlen:
                    c.dropped_frames += 1
                c.frames.append(msg)

    def publish_event(self, event: DetectionEvent) -> None:
        msg = event_message(event, self.detector.total_detections)
        with self._lock:
            for c in self._consumers:
                c.events.append(msg)

    def drain(self, consumer: TelemetryConsumer) -> list[dict]:
        """Pending messages for one consumer; events first, never dropped."""
        out: list[dict] = []
        with self._lock:
            while consumer.events:
                out.append(consumer.events.popleft())
            while consumer.frames:
                out.append(consumer.frames.popleft())
        return out

    def handle_message(self, message: dict) -> dict:
        """Apply one client message and build the reply."""
        if not isinstance(message, dict) or message.get("type") != "set":
            return {"type": "err", "reason": "expected a set message"}
        name = message.get("name")
        value = message.get("value")
        if not isinstance(name, str) or not isinstance(value, (int, float)) or isinstance(value, bool):
            return {"type": "err", "reason": "set needs a string name and numeric value"}
        try:
            config = self.detector.set_param(name, value)
        except ValueError as exc:
            return {"type": "err", "reason": str(exc)}
        return {"type": "ack", "name": name, "value": getattr(config, name)}

    def hello(self) -> dict:
        return hello_message(self.detector)
