"""Deterministic synthetic gait sessions for desk-scale training and tests.

Footfall times follow a jittered renewal process; each one injects an
exponentially decaying acceleration spike on all three axes (relative
weights 1.0/0.6/0.8) on top of gravity and Gaussian noise. Annotation
events sit exactly at the spike onsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from footfall.data_io import RawSession

AXIS_WEIGHTS = (1.0, 0.6, 0.8)


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 60.0
    sample_rate_hz: int = 200
    mean_step_interval_ms: float = 550.0
    interval_jitter_ms: float = 60.0
    spike_amplitude_g: float = 3.0
    spike_decay_ms: float = 40.0
    noise_std_g: float = 0.15
    gravity_g: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("duration_s", "sample_rate_hz", "mean_step_interval_ms",
                     "interval_jitter_ms", "spike_amplitude_g", "spike_decay_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_std_g < 0:
            raise ValueError("noise_std_g must be non-negative")
        if self.interval_jitter_ms >= self.mean_step_interval_ms:
            raise ValueError("interval jitter must be smaller than the mean interval")


def generate(cfg: SynthConfig) -> RawSession:
    """Deterministic synthetic walking session for the given seed."""
    if cfg.duration_s * 1000.0 < 2 * cfg.mean_step_interval_ms:
        raise ValueError("duration must cover at least two mean step intervals")
    rng = np.random.default_rng(cfg.seed)
    n = round(cfg.duration_s * cfg.sample_rate_hz)
    period_ms = 1000.0 / cfg.sample_rate_hz
    timestamps = np.round(np.arange(n) * period_ms).astype(np.int64)
    total_ms = float(timestamps[-1])

    # renewal process with truncated-Gaussian intervals (+-3 sigma)
    lo = cfg.mean_step_interval_ms - 3 * cfg.interval_jitter_ms
    hi = cfg.mean_step_interval_ms + 3 * cfg.interval_jitter_ms
    onsets = []
    t = float(np.clip(rng.normal(cfg.mean_step_interval_ms, cfg.interval_jitter_ms), lo, hi))
    while t < total_ms:
        onsets.append(t)
        t += float(np.clip(rng.normal(cfg.mean_step_interval_ms, cfg.interval_jitter_ms), lo, hi))

    # snap each onset to the nearest sample so annotations land on real rows
    onset_idx = np.round(np.asarray(onsets) / period_ms).astype(np.int64)
    onset_idx = np.unique(np.clip(onset_idx, 0, n - 1))
    event_times = timestamps[onset_idx]

    xyz = rng.normal(0.0, cfg.noise_std_g, size=(n, 3)) if cfg.noise_std_g > 0 else np.zeros((n, 3))
    xyz[:, 2] += cfg.gravity_g
    t_ms = timestamps.astype(np.float64)
    for idx in onset_idx:
        rel = t_ms[idx:] - t_ms[idx]
        spike = cfg.spike_amplitude_g * np.exp(-rel / cfg.spike_decay_ms)
        keep = spike > 1e-6 * cfg.spike_amplitude_g
        spike = spike[keep]
        for axis, weight in enumerate(AXIS_WEIGHTS):
            xyz[idx:idx + len(spike), axis] += weight * spike

    return RawSession(
        timestamps=timestamps,
        xyz=xyz,
        event_times=event_times,
        source_name=f"synth_seed{cfg.seed}",
    )
