from __future__ import annotations

import math
import struct

import numpy as np
import pytest

from footfall.data_io import assign_labels
from footfall.evaluation import batch_probs
from footfall.features import ScalerStats, featurize, fit_scaler, scaler_transform
from footfall.neuralnet import init_params
from footfall.neuralnet.models import CONVLSTM
from footfall.realtime import (
    DetectionEvent,
    DetectorConfig,
    FootfallDetector,
    TelemetryHub,
    encode_osc,
    replay,
)
from footfall.synth import SynthConfig, generate
from footfall.training import Metadata


def make_detector(window_size=40, hidden=4, scaler=None, config=None, seed=0):
    params = init_params(CONVLSTM, seed=seed, hidden=hidden)
    scaler = scaler or ScalerStats(np.zeros(5), np.ones(5))
    md = Metadata(window_size, 10, 0.5, scaler)
    return FootfallDetector(params, md, config or DetectorConfig())


def feed_constant(det, n, t0=0, dt=5):
    events = []
    for i in range(n):
        events += det.push_sample(0.1, 0.2, 0.3, t0 + i * dt)
    return events


# ---------------------------------------------------------------- buffering

def test_no_inference_before_buffer_full():
    det = make_detector(window_size=40)
    feed_constant(det, 39)
    assert det.total_inferences == 0


def test_first_inference_at_window_size():
    det = make_detector(window_size=40, config=DetectorConfig(inference_stride=25))
    feed_constant(det, 40)
    assert det.total_inferences == 1
    feed_constant(det, 24, t0=40 * 5)
    assert det.total_inferences == 1
    feed_constant(det, 1, t0=64 * 5)
    assert det.total_inferences == 2


def test_nonfinite_sample_skipped():
    det = make_detector(window_size=10)
    det.push_sample(float("nan"), 0.0, 0.0, 0)
    assert det.error_count == 1
    assert det.samples_seen == 0


def test_infer_once_requires_full_buffer():
    det = make_detector(window_size=10)
    with pytest.raises(RuntimeError):
        det.infer_once()


def test_zero_params_model_gives_half_probs():
    params = init_params(CONVLSTM, seed=0, hidden=4)
    for name in params.tensors:
        params.tensors[name][:] = 0.0
    md = Metadata(20, 10, 0.5, ScalerStats(np.zeros(5), np.ones(5)))
    det = FootfallDetector(params, md)
    feed_constant(det, 20)
    p_t, p_win = det.infer_once()
    assert p_t == pytest.approx(0.5, abs=1e-12)
    assert p_win == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------- streaming == batch

def streaming_probs_vs_batch(session, detector, stride):
    """Accumulate per-index probabilities from the detector's inference tap."""
    n = len(session)
    acc = np.zeros(n)
    cover = np.zeros(n)

    def tap(start, probs):
        w = detector.window_size
        acc[start:start + w] += probs
        cover[start:start + w] += 1

    detector.inference_tap = tap
    replay(session, 0, detector)
    covered = cover > 0
    acc[covered] /= cover[covered]
    return acc, covered


def test_streaming_matches_batch_probs():
    session = generate(SynthConfig(duration_s=8, seed=2))
    labeled = assign_labels(session)
    feats = featurize(labeled)
    scaler = fit_scaler(feats)
    scaled = scaler_transform(feats, scaler)

    params = init_params(CONVLSTM, seed=3, hidden=8)
    w, stride = 200, 25
    md = Metadata(w, stride, 0.5, scaler)
    det = FootfallDetector(params, md, DetectorConfig(inference_stride=stride))

    stream_probs, covered = streaming_probs_vs_batch(session, det, stride)
    batch = batch_probs(scaled.values, params, w, stride)
    np.testing.assert_allclose(stream_probs[covered], batch[covered], atol=1e-6)
    assert covered.sum() > 0.9 * len(session)


def test_streaming_normalization_matches_transform():
    session = generate(SynthConfig(duration_s=3, seed=4))
    feats = featurize(assign_labels(session))
    scaler = fit_scaler(feats)
    det = make_detector(window_size=50, scaler=scaler)

    for i in range(50):
        det.push_sample(session.xyz[i, 0], session.xyz[i, 1], session.xyz[i, 2],
                        int(session.timestamps[i]))
    det.infer_once()
    scaled = scaler_transform(feats, scaler)
    assert np.array_equal(det._norm, scaled.values[:50])


# ---------------------------------------------------------------- gating

def reference_gate_simulator(decisions, times, n, m, min_interval):
    """Straightforward list-based N-of-M + refractory reference."""
    fired_at = []
    history = []
    last = -math.inf
    for hit, t in zip(decisions, times):
        history.append(hit)
        history = history[-m:]
        if sum(history) >= n and t - last >= min_interval:
            fired_at.append(t)
            history = []
            last = t
    return fired_at


def run_gate(det, decisions, times, cfg):
    fired = []
    for hit, t in zip(decisions, times):
        p_t = 0.99 if hit else 0.0
        p_win = 0.99 if hit else 0.0
        if det.gate(p_t, p_win, t, cfg):
            fired.append(t)
    return fired


def test_gate_three_of_five():
    det = make_detector()
    cfg = DetectorConfig(required_hits=3, hit_window=5, min_interval_ms=0)
    fired = run_gate(det, [True, True, True], [0, 125, 250], cfg)
    assert fired == [250]


def test_gate_refractory_blocks():
    det = make_detector()
    cfg = DetectorConfig(required_hits=1, hit_window=1, min_interval_ms=300)
    fired = run_gate(det, [True, True], [0, 200], cfg)
    assert fired == [0]
    det2 = make_detector()
    fired2 = run_gate(det2, [True, True], [0, 300], cfg)
    assert fired2 == [0, 300]


def test_gate_requires_both_thresholds():
    det = make_detector()
    cfg = DetectorConfig(sample_threshold=0.85, window_threshold=0.45,
                         required_hits=1, hit_window=5, min_interval_ms=0)
    assert not det.gate(0.9, 0.3, 0, cfg)   # window too low
    assert not det.gate(0.3, 0.9, 10, cfg)  # sample too low
    assert det.gate(0.9, 0.5, 20, cfg)


def test_gate_matches_reference_simulator_random():
    rng = np.random.default_rng(5)
    for trial in range(30):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(n, 8))
        min_interval = int(rng.choice([0, 100, 300, 700]))
        cfg = DetectorConfig(required_hits=n, hit_window=m, min_interval_ms=min_interval)
        length = 300
        decisions = rng.random(length) < 0.4
        times = np.cumsum(rng.integers(50, 200, size=length))
        det = make_detector()
        got = run_gate(det, decisions, times, cfg)
        want = reference_gate_simulator(decisions, times, n, m, min_interval)
        assert got == want, f"trial {trial}"


def test_no_two_detections_within_min_interval():
    rng = np.random.default_rng(6)
    for _ in range(10):
        cfg = DetectorConfig(required_hits=1, hit_window=3,
                             min_interval_ms=int(rng.choice([100, 250, 500])))
        det = make_detector()
        decisions = rng.random(500) < 0.7
        times = np.cumsum(rng.integers(10, 100, size=500))
        fired = run_gate(det, decisions, times, cfg)
        assert all(b - a >= cfg.min_interval_ms for a, b in zip(fired, fired[1:]))


# ---------------------------------------------------------------- set_param

def test_set_param_applies():
    det = make_detector()
    det.set_param("sample_threshold", 0.7)
    assert det.config.sample_threshold == 0.7


def test_set_param_rejects_invariant_violation():
    det = make_detector()
    with pytest.raises(ValueError):
        det.set_param("required_hits", 7)  # hit_window is 5


def test_set_param_unknown_name():
    det = make_detector()
    with pytest.raises(ValueError, match="unknown"):
        det.set_param("warp_factor", 9)


def test_set_param_zero_min_interval_allows_consecutive():
    det = make_detector()
    det.set_param("min_interval_ms", 0)
    cfg = DetectorConfig(required_hits=1, hit_window=1, min_interval_ms=0)
    assert run_gate(det, [True, True], [0, 1], cfg) == [0, 1]


# ---------------------------------------------------------------- OSC

def decode_osc_oracle(data: bytes):
    """Independent OSC 1.0 decoder."""
    nul = data.index(b"\x00")
    address = data[:nul].decode("ascii")
    off = (nul + 4) & ~3
    nul2 = data.index(b"\x00", off)
    tags = data[off:nul2].decode("ascii")
    off2 = (nul2 + 4) & ~3
    args = []
    for tag in tags[1:]:
        if tag == "h":
            args.append(struct.unpack(">q", data[off2:off2 + 8])[0])
            off2 += 8
        else:
            raise ValueError(tag)
    return address, tags, args


def test_osc_layout_timestamp_zero():
    data = encode_osc(DetectionEvent(0, 0.9, 0.8))
    assert len(data) == 24
    assert data[:12] == b"/footfall\x00\x00\x00"
    assert data[12:16] == b",h\x00\x00"
    assert data[16:] == b"\x00" * 8


def test_osc_timestamp_one_big_endian():
    data = encode_osc(DetectionEvent(1, 0.9, 0.8))
    assert data[16:] == b"\x00\x00\x00\x00\x00\x00\x00\x01"


def test_osc_round_trip_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        t = int(rng.integers(0, 2**62))
        addr, tags, args = decode_osc_oracle(encode_osc(DetectionEvent(t, 0.5, 0.5)))
        assert addr == "/footfall"
        assert tags == ",h"
        assert args == [t]


# ---------------------------------------------------------------- telemetry hub

def test_hub_frame_per_inference():
    det = make_detector(window_size=20, config=DetectorConfig(inference_stride=5))
    hub = TelemetryHub(det)
    consumer = hub.subscribe()
    feed_constant(det, 30)
    msgs = hub.drain(consumer)
    frames = [m for m in msgs if m["type"] == "telemetry"]
    assert len(frames) == det.total_inferences == 3
    assert {"t", "p_t", "p_win", "fired", "truth"} <= set(frames[0].keys())


def test_hub_drops_oldest_frames_not_events():
    det = make_detector(window_size=20, config=DetectorConfig(inference_stride=1))
    hub = TelemetryHub(det)
    consumer = hub.subscribe(frame_capacity=4)
    feed_constant(det, 40)
    # simulate a confirmed event alongside the backlog
    hub.publish_event(DetectionEvent(123, 0.9, 0.9))
    msgs = hub.drain(consumer)
    frames = [m for m in msgs if m["type"] == "telemetry"]
    events = [m for m in msgs if m["type"] == "event"]
    assert len(frames) == 4
    assert consumer.dropped_frames > 0
    assert len(events) == 1 and events[0]["t"] == 123


def test_hub_config_round_trip():
    det = make_detector()
    hub = TelemetryHub(det)
    reply = hub.handle_message({"type": "set", "name": "window_threshold", "value": 0.6})
    assert reply == {"type": "ack", "name": "window_threshold", "value": 0.6}
    assert det.config.window_threshold == 0.6
    assert hub.hello()["config"]["window_threshold"] == 0.6


def test_hub_rejects_bad_messages():
    det = make_detector()
    hub = TelemetryHub(det)
    assert hub.handle_message({"type": "set", "name": "required_hits", "value": 99})["type"] == "err"
    assert hub.handle_message({"type": "nope"})["type"] == "err"
    assert hub.handle_message({"type": "set", "name": 3, "value": 1})["type"] == "err"
    # failed set leaves config untouched
    assert det.config.required_hits == 3


def test_hub_hello_schema():
    det = make_detector()
    hub = TelemetryHub(det)
    hello = hub.hello()
    assert hello["type"] == "hello"
    assert set(hello["config"]) == {"sample_threshold", "window_threshold", "inference_stride",
                                    "hit_window", "required_hits", "min_interval_ms"}
    assert hello["metadata"]["window_size"] == det.window_size


# ---------------------------------------------------------------- replay

def test_replay_rate_invariant():
    session = generate(SynthConfig(duration_s=4, seed=8))
    results = []
    for rate in (0, 50.0):
        det = make_detector(window_size=100, seed=9,
                            config=DetectorConfig(inference_stride=20, sample_threshold=0.4,
                                                  window_threshold=0.3, required_hits=1,
                                                  hit_window=3, min_interval_ms=200))
        stats = replay(session, rate, det)
        results.append([(d.timestamp_ms, d.confidence) for d in stats.detections])
    assert results[0] == results[1]


def test_replay_truth_flags():
    session = generate(SynthConfig(duration_s=3, seed=10))
    no_events = generate(SynthConfig(duration_s=3, seed=10))
    no_events.event_times = np.empty(0, dtype=np.int64)

    det = make_detector(window_size=50, config=DetectorConfig(inference_stride=10))
    truths = []
    det.on_frame = lambda f: truths.append(f.truth)
    replay(no_events, 0, det)
    assert truths and not any(truths)

    det2 = make_detector(window_size=50, config=DetectorConfig(inference_stride=10))
    truths2 = []
    det2.on_frame = lambda f: truths2.append(f.truth)
    replay(session, 0, det2)
    assert any(truths2)


def test_replay_stats_match_evaluation_counts():
    from footfall.data_io import nearest_sample_indices
    from footfall.evaluation import prf as eval_prf
    from footfall.evaluation import tolerance_match

    session = generate(SynthConfig(duration_s=6, seed=11))
    det = make_detector(window_size=100, seed=12,
                        config=DetectorConfig(inference_stride=10, sample_threshold=0.3,
                                              window_threshold=0.2, required_hits=1,
                                              hit_window=2, min_interval_ms=300))
    stats = replay(session, 0, det)
    ts = session.timestamps
    pred_idx = np.sort(nearest_sample_indices(ts, np.array([d.timestamp_ms for d in stats.detections]))) \
        if stats.detections else np.empty(0, dtype=np.intp)
    truth_idx = np.sort(nearest_sample_indices(ts, session.event_times))
    counts = tolerance_match(pred_idx, truth_idx, stats.tolerance_samples)
    assert (stats.tp, stats.fn, stats.fp) == (counts.tp, counts.fn, counts.fp)
    assert stats.f1 == eval_prf(counts.tp, counts.fn, counts.fp)[2]
