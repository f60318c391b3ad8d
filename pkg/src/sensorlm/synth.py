"""Synthetic IMU corpora for tests, demos, and offline end-to-end runs.

Each activity class is a multi-channel sinusoid signature: a base frequency
with one harmonic, per-channel random phase, mild per-recording frequency and
amplitude jitter, and Gaussian noise. The signatures are deliberately far
apart so that small models can separate them quickly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Recording, RecordingMeta

GRAVITY = 9.80665


@dataclass(frozen=True)
class MotionProfile:
    """Per-class signal signature."""

    freq_hz: float
    accel_amp: float
    gyro_amp: float
    noise: float
    az_bias: float = GRAVITY
    freq_jitter: float = 0.04
    amp_jitter: float = 0.10


MOTION_PROFILES: dict[str, MotionProfile] = {
    "standing": MotionProfile(freq_hz=0.25, accel_amp=0.08, gyro_amp=0.03, noise=0.02),
    "sitting": MotionProfile(freq_hz=0.15, accel_amp=0.05, gyro_amp=0.02, noise=0.015, az_bias=9.2),
    "walking": MotionProfile(freq_hz=1.9, accel_amp=2.5, gyro_amp=1.2, noise=0.3),
    "run": MotionProfile(freq_hz=2.9, accel_amp=6.0, gyro_amp=2.6, noise=0.8),
    "bike": MotionProfile(freq_hz=1.2, accel_amp=1.5, gyro_amp=0.8, noise=0.25),
}


def synthetic_recording(
    label: str,
    duration_s: float = 120.0,
    rate_hz: float = 100.0,
    seed: int = 0,
    subject_id: str = "s0",
    location: str = "pocket",
) -> Recording:
    """Generate one labelled recording from the class's motion profile."""
    if label not in MOTION_PROFILES:
        raise ValueError(f"no motion profile for {label!r}; have {sorted(MOTION_PROFILES)}")
    prof = MOTION_PROFILES[label]
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    frames = np.empty((n, 6))
    for c in range(6):
        amp = (prof.accel_amp if c < 3 else prof.gyro_amp) * (
            1.0 + prof.amp_jitter * rng.normal()
        )
        freq = prof.freq_hz * (1.0 + prof.freq_jitter * rng.normal())
        ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
        frames[:, c] = (
            amp * np.sin(2 * np.pi * freq * t + ph1)
            + 0.4 * amp * np.sin(2 * np.pi * 2 * freq * t + ph2)
            + prof.noise * rng.normal(size=n)
        )
    frames[:, 2] += prof.az_bias
    meta = RecordingMeta(
        device="synthetic",
        sensor_location=location,
        activity_label=label,
        subject_id=subject_id,
    )
    return Recording(t=t, frames=frames, rate_hz=rate_hz, meta=meta)


def sinusoid_window_frames(
    T: int,
    freqs: tuple[float, ...] = (1.0, 1.3, 0.7, 2.0, 0.5, 1.7),
    amps: tuple[float, ...] = (1.0, 0.8, 1.2, 0.6, 1.0, 0.9),
    rate_hz: float = 20.0,
    noise: float = 0.05,
    seed: int = 0,
) -> np.ndarray:
    """Raw (T, 6) sinusoid frames for unit tests that need plain arrays."""
    rng = np.random.default_rng(seed)
    t = np.arange(T) / rate_hz
    cols = []
    for f, a in zip(freqs, amps):
        ph = rng.uniform(0, 2 * np.pi)
        cols.append(a * np.sin(2 * np.pi * f * t + ph) + noise * rng.normal(size=T))
    return np.column_stack(cols)
