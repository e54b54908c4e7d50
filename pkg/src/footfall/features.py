"""Five-channel feature engineering and the train-set standard scaler.

Channels, in order: x, y, z, Euclidean magnitude, and the inter-sample
time delta in milliseconds. The scaler normalizes each channel to zero
mean and unit (population) standard deviation; near-constant channels
keep scale 1 so ideal fixed-rate data does not blow up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

N_CHANNELS = 5
NOMINAL_PERIOD_MS = 5.0
_SCALE_FLOOR = 1e-12


class ScalerFormatError(ValueError):
    """Raised when a serialized scaler payload is malformed."""


@dataclass
class FeatureSeries:
    values: np.ndarray      # (N, 5) float64
    timestamps: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ScalerStats:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if self.mean.shape != (N_CHANNELS,) or self.scale.shape != (N_CHANNELS,):
            raise ValueError(f"scaler stats must be length-{N_CHANNELS} vectors")
        if not np.all(self.scale > 0):
            raise ValueError("scaler scale must be strictly positive")


def featurize(series) -> FeatureSeries:
    """Build the (N, 5) feature matrix from any object with timestamps and xyz.

    The first delta-t copies the second so the series start is not a scaled
    outlier; a single-row series uses the nominal 5 ms period.
    """
    ts = np.asarray(series.timestamps, dtype=np.int64)
    xyz = np.asarray(series.xyz, dtype=np.float64)
    n = len(ts)
    if n < 1:
        raise ValueError("cannot featurize an empty series")
    values = np.empty((n, N_CHANNELS), dtype=np.float64)
    values[:, 0:3] = xyz
    values[:, 3] = np.sqrt(xyz[:, 0] ** 2 + xyz[:, 1] ** 2 + xyz[:, 2] ** 2)
    if n == 1:
        values[0, 4] = NOMINAL_PERIOD_MS
    else:
        dt = np.diff(ts).astype(np.float64)
        values[1:, 4] = dt
        values[0, 4] = dt[0]
    return FeatureSeries(values, ts)


def fit_scaler(features: FeatureSeries) -> ScalerStats:
    """Per-channel mean and population standard deviation; needs N >= 2."""
    v = features.values
    if len(v) < 2:
        raise ValueError("scaler fit needs at least 2 rows")
    mean = v.mean(axis=0)
    scale = v.std(axis=0)  # population (biased) convention
    scale = np.where(scale < _SCALE_FLOOR, 1.0, scale)
    return ScalerStats(mean, scale)


def scaler_transform(features: FeatureSeries, stats: ScalerStats) -> FeatureSeries:
    return FeatureSeries((features.values - stats.mean) / stats.scale, features.timestamps)


def scaler_inverse_transform(features: FeatureSeries, stats: ScalerStats) -> FeatureSeries:
    return FeatureSeries(features.values * stats.scale + stats.mean, features.timestamps)


def transform_rows(rows: np.ndarray, stats: ScalerStats) -> np.ndarray:
    """Normalize raw feature rows; shares the exact arithmetic of scaler_transform."""
    return (rows - stats.mean) / stats.scale


def scaler_to_dict(stats: ScalerStats) -> dict:
    return {"mean": stats.mean.tolist(), "scale": stats.scale.tolist()}


def scaler_from_dict(payload: dict) -> ScalerStats:
    for key in ("mean", "scale"):
        if key not in payload:
            raise ScalerFormatError(f"scaler payload missing key: {key}")
    try:
        stats = ScalerStats(np.asarray(payload["mean"], dtype=np.float64),
                            np.asarray(payload["scale"], dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ScalerFormatError(str(exc)) from exc
    return stats


def save_scaler(stats: ScalerStats) -> bytes:
    # json's float repr is the shortest exact round trip (>= 17 significant digits)
    return json.dumps(scaler_to_dict(stats)).encode("utf-8")


def load_scaler(data: bytes | str) -> ScalerStats:
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ScalerFormatError(f"invalid scaler JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ScalerFormatError("scaler payload must be a JSON object")
    return scaler_from_dict(payload)
