"""Per-channel statistical and spectral features for IMU windows.

For every channel: max, min, median (mean of the two middle values when the
length is even), population variance, a valid-mode moving average, and the
one-sided FFT magnitude spectrum of length T//2 + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import CHANNEL_NAMES
from .signal import Window, format_number

DEFAULT_MA_LEN = 5
TOP_PEAKS = 3


@dataclass
class FeatureSet:
    """Feature arrays, one row per channel in ax..gz order."""

    channel_max: np.ndarray      # (6,)
    channel_min: np.ndarray      # (6,)
    channel_median: np.ndarray   # (6,)
    channel_variance: np.ndarray # (6,)
    moving_avg: np.ndarray       # (6, T - ma_len + 1)
    fft_mag: np.ndarray          # (6, T//2 + 1)
    ma_len: int

    def __post_init__(self):
        for name in ("channel_max", "channel_min", "channel_median", "channel_variance"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (6,):
                raise ValueError(f"{name} must have shape (6,), got {arr.shape}")
            setattr(self, name, arr)
        self.moving_avg = np.asarray(self.moving_avg, dtype=np.float64)
        self.fft_mag = np.asarray(self.fft_mag, dtype=np.float64)
        if self.moving_avg.ndim != 2 or self.moving_avg.shape[0] != 6:
            raise ValueError(f"moving_avg must be (6, T-m+1), got {self.moving_avg.shape}")
        if self.fft_mag.ndim != 2 or self.fft_mag.shape[0] != 6:
            raise ValueError(f"fft_mag must be (6, T//2+1), got {self.fft_mag.shape}")
        bad = ~(
            (self.channel_min <= self.channel_median)
            & (self.channel_median <= self.channel_max)
        )
        if np.any(bad):
            raise ValueError(f"min<=median<=max violated on channel(s) "
                             f"{[CHANNEL_NAMES[i] for i in np.flatnonzero(bad)]}")
        if np.any(self.channel_variance < 0):
            raise ValueError("negative variance")
        if np.any(self.fft_mag < 0):
            raise ValueError("negative FFT magnitude")


def compute_features(w: Window, ma_len: int = DEFAULT_MA_LEN) -> FeatureSet:
    """Compute the feature set of a window.

    ``ma_len`` must satisfy 1 <= ma_len <= T. Median of an even-length
    channel is the mean of the two middle values; variance is population
    variance (divide by T); the moving average only covers fully valid
    positions (length T - ma_len + 1).
    """
    x = w.frames  # (T, 6)
    T = x.shape[0]
    if not 1 <= ma_len <= T:
        raise ValueError(f"ma_len must be in [1, {T}], got {ma_len}")
    kernel = np.ones(ma_len) / ma_len
    ma = np.stack([np.convolve(x[:, c], kernel, mode="valid") for c in range(6)])
    mag = np.abs(np.fft.rfft(x, axis=0)).T  # (6, T//2+1)
    return FeatureSet(
        channel_max=x.max(axis=0),
        channel_min=x.min(axis=0),
        channel_median=np.median(x, axis=0),
        channel_variance=x.var(axis=0),
        moving_avg=ma,
        fft_mag=mag,
        ma_len=ma_len,
    )


def top_peak_bins(mag: np.ndarray, k: int = TOP_PEAKS) -> list[tuple[int, float]]:
    """Indices and magnitudes of the k largest FFT bins, ties to the lower bin."""
    order = np.argsort(-mag, kind="stable")[:k]
    return [(int(i), float(mag[i])) for i in order]


def features_text(fs: FeatureSet) -> str:
    """Render the feature set as one deterministic line per channel.

    Numbers use the same 6-decimal truncation as the raw-signal serializer,
    so equal FeatureSets always produce identical bytes.
    """
    lines = []
    for c, name in enumerate(CHANNEL_NAMES):
        peaks = top_peak_bins(fs.fft_mag[c])
        peak_txt = " ".join(f"{i}:{format_number(m)}" for i, m in peaks)
        lines.append(
            f"{name}: max {format_number(fs.channel_max[c])}, "
            f"min {format_number(fs.channel_min[c])}, "
            f"median {format_number(fs.channel_median[c])}, "
            f"variance {format_number(fs.channel_variance[c])}, "
            f"moving avg mean {format_number(fs.moving_avg[c].mean())}, "
            f"top fft bins {peak_txt}"
        )
    return "\n".join(lines)
