"""Preprocessing chain: trim, decimate, segment, normalize, serialize."""

import numpy as np
import pytest

from sensorlm.ingest import Recording, RecordingMeta
from sensorlm.signal import (
    NormStats,
    Window,
    apply_norm,
    downsample,
    fit_norm,
    format_number,
    segment,
    serialize_text,
    serialized_step_count,
    trim,
)


def make_recording(seconds, rate, seed=0, label="walking"):
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    return Recording(
        t=np.arange(n) / rate,
        frames=rng.normal(size=(n, 6)),
        rate_hz=rate,
        meta=RecordingMeta(activity_label=label, sensor_location="pocket", subject_id="s1"),
    )


def test_trim_keeps_boundary_frames():
    rec = make_recording(120, 100)
    out = trim(rec, 2.0, 2.0)
    # 12000 frames at 100 Hz -> keep t in [2.00, 117.99]
    assert out.n_frames == 11600
    assert out.t[0] == 2.0
    assert abs(out.t[-1] - 117.99) < 1e-9


def test_trim_too_short_errors():
    rec = make_recording(3, 100)
    with pytest.raises(ValueError, match="cannot trim"):
        trim(rec, 2.0, 2.0)


def test_downsample_integer_stride():
    rec = make_recording(10, 100)
    out = downsample(rec, 20.0)
    assert out.rate_hz == 20.0
    assert out.n_frames == 200
    assert np.array_equal(out.frames, rec.frames[::5])
    assert np.array_equal(out.t, rec.t[::5])


def test_downsample_non_integer_errors():
    rec = make_recording(10, 100)
    with pytest.raises(ValueError, match="non-integer decimation"):
        downsample(rec, 30.0)


def test_downsample_window():
    w = Window(frames=np.arange(120 * 6, dtype=float).reshape(120, 6),
               rate_hz=20.0, duration_s=6.0)
    out = downsample(w, 10.0)
    assert out.rate_hz == 10.0
    assert out.n_frames == 60
    assert np.array_equal(out.frames, w.frames[::2])


def test_full_chain_19_windows():
    # 120 s at 100 Hz -> trim 2/2 -> 20 Hz -> 6 s windows: 19 of 120 frames
    rec = make_recording(120, 100)
    windows = segment(downsample(trim(rec, 2.0, 2.0), 20.0), 6.0)
    assert len(windows) == 19
    assert all(w.n_frames == 120 for w in windows)
    assert all(w.label == "walking" and w.location == "pocket" for w in windows)


def test_segment_too_short_errors():
    rec = make_recording(5.9, 100)
    with pytest.raises(ValueError, match="shorter than window_s"):
        segment(rec, 6.0)


def test_segment_exact_multiple():
    rec = make_recording(12, 20)
    windows = segment(rec, 6.0)
    assert len(windows) == 2
    assert np.array_equal(windows[0].frames, rec.frames[:120])
    assert np.array_equal(windows[1].frames, rec.frames[120:240])


def test_fit_norm_then_apply_gives_zero_mean_unit_std():
    rec = make_recording(60, 20, seed=3)
    windows = segment(rec, 6.0)
    stats = fit_norm(windows)
    normed = [apply_norm(w, stats) for w in windows]
    stacked = np.concatenate([w.frames for w in normed], axis=0)
    assert np.all(np.abs(stacked.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(stacked.std(axis=0) - 1.0) < 1e-9)


def test_fit_norm_zero_variance_names_channel():
    frames = np.random.default_rng(0).normal(size=(120, 6))
    frames[:, 4] = 2.5  # gy constant
    w = Window(frames=frames, rate_hz=20.0, duration_s=6.0)
    with pytest.raises(ValueError, match="gy"):
        fit_norm([w])


def test_norm_stats_reject_nonpositive_std():
    with pytest.raises(ValueError, match="gz"):
        NormStats(mean=np.zeros(6), std=np.array([1, 1, 1, 1, 1, 0.0]))


# --- number formatting -------------------------------------------------------

def test_format_number_truncates_toward_zero():
    assert format_number(0.1234567) == "0.123456"
    assert format_number(-0.1234567) == "-0.123456"
    assert format_number(0.1234569) == "0.123456"
    assert format_number(1.9999999) == "1.999999"
    assert format_number(-1.9999999) == "-1.999999"


def test_format_number_trims_trailing_zeros():
    assert format_number(0.5) == "0.5"
    assert format_number(2.0) == "2"
    assert format_number(-3.1400000) == "-3.14"
    assert format_number(0.0) == "0"
    assert format_number(-0.0) == "0"
    assert format_number(-0.0000001) == "0"


def test_format_number_short_decimals_pass_through():
    # shortest-repr values with <= 6 decimals serialize exactly
    for s in ("0.29", "-0.54474", "-0.060323", "0.27657", "6.97365", "-7.5116",
              "7.647799", "8.0292", "-1.498255", "123.4", "-0.437375"):
        assert format_number(float(s)) == s


def test_format_number_truncation_error_bound():
    # |parsed - original| < 1e-6 over random magnitudes, both signs
    rng = np.random.default_rng(12345)
    vals = np.concatenate([
        rng.uniform(-10, 10, 4000),
        rng.uniform(-1e-3, 1e-3, 3000),
        rng.normal(0, 100, 3000),
    ])
    for v in vals:
        s = format_number(float(v))
        back = float(s)
        assert abs(back - float(v)) < 1e-6
        # truncation moves toward zero, never away
        assert abs(back) <= abs(float(v)) + 1e-12


# --- serialization -----------------------------------------------------------

def test_serialize_layout_gyro_then_accel():
    frames = np.array([[6.97365, -1.498255, -7.5116, -0.54474, -0.060323, 0.27657]])
    w = Window(frames=frames, rate_hz=10.0, duration_s=0.1)
    text = serialize_text(w)
    assert text == (
        "Gyroscope: [[-0.54474, -0.060323, 0.27657]]\n"
        "Accelerometer: [[6.97365, -1.498255, -7.5116]]"
    )


def test_serialize_decimates_20hz_windows():
    frames = np.zeros((4, 6))
    frames[:, 0] = [1.0, 2.0, 3.0, 4.0]  # ax per frame
    w = Window(frames=frames, rate_hz=20.0, duration_s=0.2)
    text = serialize_text(w)
    # frames 0 and 2 survive
    assert "Accelerometer: [[1, 0, 0], [3, 0, 0]]" in text
    assert serialized_step_count(w) == 2


def test_serialize_rejects_other_rates():
    w = Window(frames=np.zeros((50, 6)), rate_hz=50.0, duration_s=1.0)
    with pytest.raises(ValueError, match="Hz"):
        serialize_text(w)


def test_serialize_byte_stable_golden():
    rng = np.random.default_rng(99)
    w = Window(frames=rng.normal(scale=3.0, size=(6, 6)), rate_hz=10.0, duration_s=0.6)
    text = serialize_text(w)
    golden = (
        "Gyroscope: [[2.058692, -5.270371, 5.053294], "
        "[2.795376, 2.024941, 3.733323], "
        "[2.805731, -2.632838, -0.137688], "
        "[-1.05649, 2.018391, 0.421869], "
        "[4.033706, 0.534258, -0.243954], "
        "[-1.929242, 5.882804, 2.072161]]\n"
        "Accelerometer: [[0.247482, -1.393255, 0.151545], "
        "[-1.373528, -1.78926, -3.140902], "
        "[2.679262, 0.789014, 0.985553], "
        "[1.145615, -1.357616, 2.164994], "
        "[1.387682, -4.552958, -2.580892], "
        "[2.891102, 2.252666, -0.140275]]"
    )
    assert text == golden
