"""Preprocessing for IMU recordings.

Pipeline order: trim lead/tail seconds, decimate to the working rate,
cut non-overlapping fixed-length windows, z-score per channel, and
(when prompting) serialize to text at 10 Hz with 6-decimal truncation.

Durations here are coverage durations (frame count over rate), so a
120-frame window at 20 Hz is exactly 6 s. The elapsed timestamp span of a
Recording is ``Recording.span_s``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from decimal import Decimal, ROUND_DOWN
from typing import Optional, Sequence

import numpy as np

from .ingest import CHANNEL_NAMES, Recording

# serialization contract: 10 Hz frames, 6 decimal places, truncated toward zero
SERIALIZE_RATE_HZ = 10.0
SERIALIZE_DECIMALS = 6
_QUANTUM = Decimal(1).scaleb(-SERIALIZE_DECIMALS)


@dataclass
class Window:
    """A fixed-length slice of a recording, frames shaped (T, 6)."""

    frames: np.ndarray
    rate_hz: float
    duration_s: float
    label: Optional[str] = None
    location: str = ""
    subject_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != 6:
            raise ValueError(f"window frames must be (T, 6), got {self.frames.shape}")
        expect = int(round(self.duration_s * self.rate_hz))
        if self.frames.shape[0] != expect:
            raise ValueError(
                f"window has {self.frames.shape[0]} frames but duration*rate gives {expect}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("window contains non-finite values")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


def trim(rec: Recording, lead_s: float = 2.0, tail_s: float = 2.0) -> Recording:
    """Drop frames within ``lead_s`` of the start and ``tail_s`` of the end.

    Frames at exactly t0+lead_s or tend-tail_s are kept. The recording must
    be longer than lead_s+tail_s.
    """
    if lead_s < 0 or tail_s < 0:
        raise ValueError(f"trim amounts must be non-negative, got {lead_s}, {tail_s}")
    if rec.duration_s <= lead_s + tail_s:
        raise ValueError(
            f"recording covers {rec.duration_s:.3f} s, cannot trim {lead_s}+{tail_s} s"
        )
    lo = rec.t[0] + lead_s
    hi = rec.t[-1] - tail_s
    keep = (rec.t >= lo) & (rec.t <= hi)
    return Recording(t=rec.t[keep], frames=rec.frames[keep], rate_hz=rec.rate_hz, meta=rec.meta)


def _decimation_factor(rate_hz: float, target_hz: float) -> int:
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    k = rate_hz / target_hz
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(
            f"non-integer decimation: {rate_hz:g} Hz -> {target_hz:g} Hz (factor {k:g})"
        )
    return int(round(k))


def downsample(x, target_hz: float):
    """Integer-stride decimation keeping frame 0. Works on Recording or Window.

    The source rate must be an integer multiple of ``target_hz``; anything
    else raises ValueError (no resampling is ever attempted).
    """
    if isinstance(x, Recording):
        k = _decimation_factor(x.rate_hz, target_hz)
        if k == 1:
            return Recording(t=x.t.copy(), frames=x.frames.copy(), rate_hz=x.rate_hz, meta=x.meta)
        return Recording(t=x.t[::k], frames=x.frames[::k], rate_hz=target_hz, meta=x.meta)
    if isinstance(x, Window):
        k = _decimation_factor(x.rate_hz, target_hz)
        return replace(x, frames=x.frames[::k].copy(), rate_hz=target_hz)
    raise TypeError(f"downsample expects Recording or Window, got {type(x).__name__}")


def segment(rec: Recording, window_s: float = 6.0) -> list[Window]:
    """Cut consecutive non-overlapping windows of ``window_s`` seconds.

    Windows start at frame 0; the trailing remainder shorter than one window
    is dropped. The recording must cover at least one window.
    """
    if window_s <= 0:
        raise ValueError(f"window_s must be positive, got {window_s}")
    if rec.duration_s < window_s:
        raise ValueError(
            f"recording covers {rec.duration_s:.3f} s, shorter than window_s={window_s}"
        )
    per = int(round(window_s * rec.rate_hz))
    n = rec.n_frames // per
    out = []
    for i in range(n):
        out.append(
            Window(
                frames=rec.frames[i * per : (i + 1) * per].copy(),
                rate_hz=rec.rate_hz,
                duration_s=window_s,
                label=rec.meta.activity_label,
                location=rec.meta.sensor_location,
                subject_id=rec.meta.subject_id,
            )
        )
    return out


@dataclass
class NormStats:
    """Per-channel z-score parameters (population statistics)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (6,) or self.std.shape != (6,):
            raise ValueError(f"stats must be 6-channel, got {self.mean.shape}, {self.std.shape}")
        for i, s in enumerate(self.std):
            if not s > 0:
                raise ValueError(f"channel {CHANNEL_NAMES[i]} has non-positive std {s}")


def fit_norm(windows: Sequence[Window]) -> NormStats:
    """Fit per-channel mean/std over all frames of all windows.

    A zero-variance channel raises ValueError naming the channel.
    """
    if not windows:
        raise ValueError("fit_norm needs at least one window")
    stacked = np.concatenate([w.frames for w in windows], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # population
    dead = np.flatnonzero(std == 0)
    if dead.size:
        names = [CHANNEL_NAMES[i] for i in dead]
        raise ValueError(f"zero variance in channel(s) {names}; cannot normalize")
    return NormStats(mean=mean, std=std)


def apply_norm(w: Window, stats: NormStats) -> Window:
    return replace(w, frames=(w.frames - stats.mean) / stats.std)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------

def format_number(x: float) -> str:
    """Render a float with at most 6 decimal places, truncated toward zero.

    Truncation acts on the shortest decimal representation of the value
    (``repr``), never on binary expansions, so 0.29 stays "0.29" rather than
    becoming 0.289999. Trailing zeros and a bare trailing point are dropped;
    negative zero collapses to "0".
    """
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    d = Decimal(repr(x)).quantize(_QUANTUM, rounding=ROUND_DOWN)
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


def _block(rows: np.ndarray) -> str:
    inner = ", ".join("[" + ", ".join(format_number(v) for v in row) + "]" for row in rows)
    return "[" + inner + "]"


def serialize_text(w: Window) -> str:
    """Serialize a window as two labelled arrays at 10 Hz.

    Gyroscope rows come first, then accelerometer rows::

        Gyroscope: [[gx, gy, gz], ...]
        Accelerometer: [[ax, ay, az], ...]

    A 20 Hz window is decimated by 2 on the fly; 10 Hz passes through; any
    other rate raises ValueError.
    """
    if abs(w.rate_hz - SERIALIZE_RATE_HZ) < 1e-9:
        frames = w.frames
    elif abs(w.rate_hz - 2 * SERIALIZE_RATE_HZ) < 1e-9:
        frames = w.frames[::2]
    else:
        raise ValueError(
            f"serialization expects {SERIALIZE_RATE_HZ:g} or {2 * SERIALIZE_RATE_HZ:g} Hz windows, "
            f"got {w.rate_hz:g} Hz"
        )
    gyro = _block(frames[:, 3:6])
    accel = _block(frames[:, 0:3])
    return f"Gyroscope: {gyro}\nAccelerometer: {accel}"


def serialized_step_count(w: Window) -> int:
    """Number of time steps serialize_text would emit for this window."""
    if abs(w.rate_hz - SERIALIZE_RATE_HZ) < 1e-9:
        return w.n_frames
    if abs(w.rate_hz - 2 * SERIALIZE_RATE_HZ) < 1e-9:
        return (w.n_frames + 1) // 2
    raise ValueError(f"unsupported serialization rate {w.rate_hz:g} Hz")
