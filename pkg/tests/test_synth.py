from __future__ import annotations

import numpy as np
import pytest

from footfall.data_io import assign_labels
from footfall.features import featurize
from footfall.synth import SynthConfig, generate


def test_same_seed_identical_sessions():
    a = generate(SynthConfig(duration_s=10, seed=7))
    b = generate(SynthConfig(duration_s=10, seed=7))
    np.testing.assert_array_equal(a.timestamps, b.timestamps)
    np.testing.assert_array_equal(a.xyz, b.xyz)
    np.testing.assert_array_equal(a.event_times, b.event_times)


def test_different_seed_differs():
    a = generate(SynthConfig(duration_s=10, seed=1))
    b = generate(SynthConfig(duration_s=10, seed=2))
    assert not np.array_equal(a.xyz, b.xyz)


def test_sample_count():
    s = generate(SynthConfig(duration_s=60, seed=0))
    assert abs(len(s) - 60 * 200) <= 1


def test_event_count_renewal_expectation():
    s = generate(SynthConfig(duration_s=60, seed=3))
    # roughly duration / mean interval = 60000 / 550 = 109
    assert 90 <= s.n_events <= 130


def test_noise_free_annotations_on_magnitude_maxima():
    s = generate(SynthConfig(duration_s=10, seed=4, noise_std_g=0.0))
    labeled = assign_labels(s)
    mag = featurize(labeled).values[:, 3]
    idx = np.flatnonzero(labeled.target)
    assert len(idx) == s.n_events
    for i in idx:
        lo, hi = max(i - 1, 0), min(i + 2, len(mag))
        assert mag[i] == max(mag[lo:hi])


def test_min_gap_between_annotations():
    cfg = SynthConfig(duration_s=120, seed=5)
    s = generate(cfg)
    gaps = np.diff(s.event_times)
    min_allowed = cfg.mean_step_interval_ms - 3 * cfg.interval_jitter_ms
    assert gaps.min() >= min_allowed - 5  # one sample of snapping slack


def test_events_are_sample_timestamps():
    s = generate(SynthConfig(duration_s=10, seed=6))
    assert np.all(np.isin(s.event_times, s.timestamps))


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        SynthConfig(interval_jitter_ms=600.0)
    with pytest.raises(ValueError):
        generate(SynthConfig(duration_s=0.5))
