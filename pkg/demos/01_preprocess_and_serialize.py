"""
From raw IMU stream to model-ready text
=======================================

Walks one recording through the preprocessing chain (trim, downsample,
segment, normalize) and shows the two text views the language model
consumes: the serialized sample stream and the statistical feature line.
"""

import numpy as np

from sensorlm import synth
from sensorlm.features import compute_features, features_text
from sensorlm.signal import (
    apply_norm, downsample, fit_norm, segment, serialize_text, trim,
)

# A two-minute synthetic walk at the native 100 Hz sampling rate.
rec = synth.synthetic_recording("walking", duration_s=120.0, rate_hz=100.0,
                                seed=0)
print(f"raw recording: {rec.frames.shape[0]} frames @ {rec.rate_hz:g} Hz")

# Drop the unstable first/last two seconds, then decimate to 20 Hz.
steady = trim(rec, lead_s=2.0, tail_s=2.0)
slow = downsample(steady, 20.0)
print(f"after trim+downsample: {slow.frames.shape[0]} frames @ 20 Hz")

# Cut into non-overlapping 6 s windows: 116 s / 6 s -> 19 windows.
windows = segment(slow, 6.0)
print(f"windows: {len(windows)} of shape {windows[0].frames.shape}")

# Normalization statistics are fit once over the corpus, then applied
# per window (here the "corpus" is this single recording).
stats = fit_norm(windows)
normed = [apply_norm(w, stats) for w in windows]
means = np.concatenate([w.frames for w in normed]).mean(axis=0)
print(f"per-channel mean after normalization: {np.round(means, 12)}")

# Text view 1: the serialized sample stream (10 Hz, 6-decimal values,
# gyroscope block first). This is what gets tokenized.
text = serialize_text(normed[0])
print("\nserialized stream (first 120 chars):")
print(text[:120] + "...")
print(f"serialized length: {len(text)} chars")

# Text view 2: compact per-channel statistics with top spectral peaks.
print("\nfeature line (first channel):")
print(features_text(compute_features(normed[0])).splitlines()[0])
