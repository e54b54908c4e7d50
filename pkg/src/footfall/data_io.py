"""Annotated IMU session I/O: CSV parsing, label assignment, session recording.

A session CSV has a header ``timestamp,x,y,z,eventType`` and one row per
sensor sample (``eventType == "sample"``) or annotation
(``eventType == "footfall"``). Comma and tab delimiters are accepted on
read; writes always use commas.
"""

from __future__ import annotations

import csv
import io
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("timestamp", "x", "y", "z", "eventType")
SAMPLE_KIND = "sample"
FOOTFALL_KIND = "footfall"

# Nominal sensor rate; used to size the recorder queue from a seconds budget.
NOMINAL_RATE_HZ = 200


class SessionFormatError(ValueError):
    """Raised when a session CSV is structurally invalid."""


@dataclass(frozen=True)
class RawSample:
    timestamp: int
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class AnnotationEvent:
    timestamp: int


@dataclass
class RawSession:
    """Ordered sensor samples plus sparse annotation events.

    Samples are stored columnar (``timestamps`` int64, ``xyz`` float64 Nx3)
    because everything downstream is vectorized; ``event_times`` holds the
    annotation timestamps in file order.
    """

    timestamps: np.ndarray
    xyz: np.ndarray
    event_times: np.ndarray
    source_name: str = ""
    skipped_rows: int = 0

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_events(self) -> int:
        return len(self.event_times)

    def sample(self, i: int) -> RawSample:
        return RawSample(
            int(self.timestamps[i]),
            float(self.xyz[i, 0]),
            float(self.xyz[i, 1]),
            float(self.xyz[i, 2]),
        )


@dataclass
class LabeledSeries:
    """Samples with a dense 0/1 footfall target per row."""

    timestamps: np.ndarray
    xyz: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line and "," not in header_line else ","


def parse_session(csv_bytes: bytes | str, source_name: str = "") -> RawSession:
    """Parse a session CSV (comma or tab delimited) into a RawSession.

    Rows with unknown eventType values are skipped and counted; a session
    with zero sample rows is rejected.
    """
    text = csv_bytes.decode("utf-8") if isinstance(csv_bytes, bytes) else csv_bytes
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise SessionFormatError("empty input: no header row")

    delim = _sniff_delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delim)
    header = [h.strip() for h in next(reader)]
    col = {name: i for i, name in enumerate(header)}
    for name in REQUIRED_COLUMNS:
        if name not in col:
            raise SessionFormatError(f"missing required column: {name}")

    ts: list[int] = []
    xyz: list[tuple[float, float, float]] = []
    events: list[int] = []
    skipped = 0
    t_col, x_col, y_col, z_col, e_col = (col[c] for c in REQUIRED_COLUMNS)

    for row_idx, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            kind = row[e_col].strip()
            t = int(float(row[t_col]))
            if kind == SAMPLE_KIND:
                ts.append(t)
                xyz.append((float(row[x_col]), float(row[y_col]), float(row[z_col])))
            elif kind == FOOTFALL_KIND:
                events.append(t)
            else:
                skipped += 1
        except (ValueError, IndexError) as exc:
            raise SessionFormatError(f"row {row_idx}: non-numeric or short row ({exc})") from exc

    if not ts:
        raise SessionFormatError("no samples")
    if skipped:
        logger.warning("%s: skipped %d rows with unknown eventType", source_name or "<bytes>", skipped)

    timestamps = np.asarray(ts, dtype=np.int64)
    if np.any(np.diff(timestamps) < 0):
        raise SessionFormatError("sample timestamps not monotone non-decreasing")

    return RawSession(
        timestamps=timestamps,
        xyz=np.asarray(xyz, dtype=np.float64),
        event_times=np.asarray(events, dtype=np.int64),
        source_name=source_name,
        skipped_rows=skipped,
    )


def read_session(path: str | Path) -> RawSession:
    p = Path(path)
    return parse_session(p.read_bytes(), source_name=p.name)


def write_session(session: RawSession, out: io.TextIOBase | str | Path | None = None) -> str | None:
    """Write a session CSV; sample and footfall rows merged by timestamp.

    Annotation rows carry x=y=z=0 (ignored on read). Returns the CSV text
    when ``out`` is None, otherwise writes to the path or text stream.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REQUIRED_COLUMNS)
    n, e = len(session), session.n_events
    si = ei = 0
    ts, xyz, ev = session.timestamps, session.xyz, session.event_times
    while si < n or ei < e:
        if ei >= e or (si < n and ts[si] <= ev[ei]):
            w.writerow([int(ts[si]), repr(float(xyz[si, 0])), repr(float(xyz[si, 1])),
                        repr(float(xyz[si, 2])), SAMPLE_KIND])
            si += 1
        else:
            w.writerow([int(ev[ei]), 0, 0, 0, FOOTFALL_KIND])
            ei += 1
    text = buf.getvalue()
    if out is None:
        return text
    if isinstance(out, (str, Path)):
        Path(out).write_text(text)
        return None
    out.write(text)
    return None


def nearest_sample_indices(timestamps: np.ndarray, event_times: np.ndarray) -> np.ndarray:
    """Index of the sample nearest each event time; ties go to the lower index."""
    ts = np.asarray(timestamps)
    ev = np.asarray(event_times)
    if len(ts) == 1:
        return np.zeros(len(ev), dtype=np.intp)
    pos = np.clip(np.searchsorted(ts, ev), 1, len(ts) - 1)
    left = pos - 1
    d_left = np.abs(ev - ts[left])
    d_right = np.abs(ts[pos] - ev)
    chosen = np.where(d_left <= d_right, left, pos)
    # duplicate timestamps: a stable argmin keeps the first occurrence
    return np.searchsorted(ts, ts[chosen], side="left")


def assign_labels(session: RawSession) -> LabeledSeries:
    """Mark the sample nearest each annotation with target 1, all others 0.

    Multiple events mapping to the same sample collapse to a single 1.
    """
    if len(session) == 0:
        raise ValueError("session has no samples")
    target = np.zeros(len(session), dtype=np.int8)
    if session.n_events:
        idx = nearest_sample_indices(session.timestamps, session.event_times)
        target[idx] = 1
    return LabeledSeries(session.timestamps, session.xyz, target)


@dataclass(frozen=True)
class RecorderConfig:
    queue_capacity_seconds: float = 5.0
    flush_interval_ms: int = 1000
    flush_batch: int = 1000
    writer_buffer_bytes: int = 65536

    def __post_init__(self) -> None:
        for name in ("queue_capacity_seconds", "flush_interval_ms", "flush_batch", "writer_buffer_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def queue_capacity_items(self) -> int:
        return int(np.ceil(self.queue_capacity_seconds * NOMINAL_RATE_HZ))


@dataclass
class RecorderStats:
    pushed_samples: int = 0
    pushed_events: int = 0
    dropped_samples: int = 0
    flushes: int = 0
    write_errors: int = 0
    rotations: int = 0
    files: list[str] = field(default_factory=list)


class SessionRecorder:
    """Non-blocking bounded-queue recorder writing session CSVs.

    Samples go through a bounded queue that drops the oldest entry on
    overflow; annotations use a separate unbounded lane and are never
    dropped. ``flush_policy_tick`` drains to a buffered CSV writer when
    either the batch size or the flush interval is reached. A failed write
    rotates to a fresh timestamped file.
    """

    def __init__(self, directory: str | Path, config: RecorderConfig | None = None):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self.config = config or RecorderConfig()
        self.stats = RecorderStats()
        self._lock = threading.Lock()
        self._samples: deque[RawSample] = deque()
        self._events: deque[AnnotationEvent] = deque()
        self._file: io.TextIOBase | None = None
        self._started = False
        self._last_flush_ms: int | None = None

    @property
    def current_path(self) -> Path | None:
        return Path(self._file.name) if self._file is not None else None

    def start(self, session_ms: int | None = None) -> Path:
        if self._started:
            raise RuntimeError("recorder already started")
        path = self._open_file(session_ms)
        self._started = True
        self._last_flush_ms = None
        return path

    def _open_file(self, session_ms: int | None = None) -> Path:
        if session_ms is None:
            session_ms = int(time.time() * 1000)
        path = self._dir / f"session_{session_ms}.csv"
        f = open(path, "w", buffering=self.config.writer_buffer_bytes, newline="")
        f.write(",".join(REQUIRED_COLUMNS) + "\n")
        self._file = f
        self.stats.files.append(str(path))
        return path

    def push(self, item: RawSample | AnnotationEvent) -> bool:
        """Enqueue one item without blocking; False once stopped."""
        if not self._started:
            return False
        with self._lock:
            if isinstance(item, AnnotationEvent):
                self._events.append(item)
                self.stats.pushed_events += 1
            else:
                if len(self._samples) >= self.config.queue_capacity_items:
                    self._samples.popleft()
                    self.stats.dropped_samples += 1
                self._samples.append(item)
                self.stats.pushed_samples += 1
        return True

    def queued_samples(self) -> int:
        with self._lock:
            return len(self._samples)

    def flush_policy_tick(self, now_ms: int) -> bool:
        """Flush when >= flush_batch samples are queued or the interval elapsed."""
        if not self._started:
            raise RuntimeError("recorder not started")
        with self._lock:
            n_queued = len(self._samples)
            if self._last_flush_ms is None:
                self._last_flush_ms = now_ms
            due = (
                n_queued >= self.config.flush_batch
                or now_ms - self._last_flush_ms >= self.config.flush_interval_ms
            )
            if not due:
                return False
            self._last_flush_ms = now_ms
            if not self._samples and not self._events:
                return False
            samples = list(self._samples)
            events = list(self._events)
            self._samples.clear()
            self._events.clear()
        self._write_rows(samples, events, now_ms)
        self.stats.flushes += 1
        return True

    def _write_rows(self, samples: list[RawSample], events: list[AnnotationEvent], now_ms: int) -> None:
        rows: list[tuple[int, str]] = [
            (s.timestamp, f"{s.timestamp},{s.x!r},{s.y!r},{s.z!r},{SAMPLE_KIND}") for s in samples
        ]
        rows += [(e.timestamp, f"{e.timestamp},0,0,0,{FOOTFALL_KIND}") for e in events]
        rows.sort(key=lambda r: r[0])
        payload = "".join(line + "\n" for _, line in rows)
        try:
            assert self._file is not None
            self._file.write(payload)
        except OSError as exc:
            self.stats.write_errors += 1
            logger.error("recorder write failed (%s); rotating session file", exc)
            self._rotate(now_ms)
            assert self._file is not None
            self._file.write(payload)  # second failure propagates

    def _rotate(self, now_ms: int) -> None:
        try:
            if self._file is not None:
                self._file.close()
        except OSError:
            pass
        self._open_file(now_ms)
        self.stats.rotations += 1

    def stop(self, now_ms: int | None = None) -> None:
        if not self._started:
            return
        with self._lock:
            samples = list(self._samples)
            events = list(self._events)
            self._samples.clear()
            self._events.clear()
        if samples or events:
            self._write_rows(samples, events, now_ms or int(time.time() * 1000))
            self.stats.flushes += 1
        self._started = False
        if self._file is not None:
            self._file.close()
