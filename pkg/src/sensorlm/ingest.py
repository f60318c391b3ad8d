"""Readers for raw IMU recordings.

Two on-disk formats are supported:

* HAR-style CSV: one file per recording, six sensor columns (accelerometer
  x/y/z in m/s^2, gyroscope x/y/z in rad/s) plus either an explicit
  timestamp column or an implicit fixed rate declared in the layout.
* Phone sensor-logger export: a directory holding one CSV per instrument
  (``*accelerometer*.csv``, ``*gyroscope*.csv``), each with its own clock.
  The two streams are joined on the accelerometer clock by nearest-timestamp
  matching; an accelerometer frame is dropped when the nearest gyroscope
  sample is further away than half the accelerometer sample period.

All readers return a :class:`Recording`. Malformed input raises ``ValueError``
with the offending file line where one exists.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

# frame column order used everywhere downstream
CHANNEL_NAMES = ("ax", "ay", "az", "gx", "gy", "gz")

# declared rate must sit within 5% of the rate implied by the median gap
RATE_REL_TOL = 0.05


@dataclass
class RecordingMeta:
    """Descriptive fields carried alongside the samples."""

    device: str = ""
    sensor_location: str = ""
    activity_label: Optional[str] = None
    subject_id: str = ""


@dataclass
class Recording:
    """A timestamped 6-channel IMU stream.

    ``t`` is seconds, strictly increasing. ``frames`` has one row per
    timestamp with columns ``ax, ay, az, gx, gy, gz`` (m/s^2 and rad/s).
    ``rate_hz`` is the nominal sample rate and must agree with the median
    timestamp gap to within 5%.
    """

    t: np.ndarray
    frames: np.ndarray
    rate_hz: float
    meta: RecordingMeta = field(default_factory=RecordingMeta)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        validate_recording(self)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def duration_s(self) -> float:
        """Coverage in seconds, counted as frames over rate."""
        return self.n_frames / self.rate_hz

    @property
    def span_s(self) -> float:
        """Elapsed time between the first and last timestamp."""
        return float(self.t[-1] - self.t[0])


def validate_recording(rec: Recording) -> None:
    """Check Recording invariants, raising ValueError on the first violation."""
    if rec.frames.ndim != 2 or rec.frames.shape[1] != 6:
        raise ValueError(f"frames must be (n, 6), got {rec.frames.shape}")
    if rec.t.ndim != 1 or rec.t.shape[0] != rec.frames.shape[0]:
        raise ValueError(
            f"timestamp count {rec.t.shape} does not match frame count {rec.frames.shape[0]}"
        )
    if rec.n_frames < 2:
        raise ValueError(f"recording needs at least 2 frames, got {rec.n_frames}")
    if not np.all(np.isfinite(rec.t)) or not np.all(np.isfinite(rec.frames)):
        raise ValueError("recording contains non-finite values")
    gaps = np.diff(rec.t)
    if np.any(gaps <= 0):
        idx = int(np.argmax(gaps <= 0))
        raise ValueError(f"non-monotone timestamps at frame {idx + 1}")
    if rec.rate_hz <= 0:
        raise ValueError(f"rate_hz must be positive, got {rec.rate_hz}")
    implied = 1.0 / float(np.median(gaps))
    if abs(implied - rec.rate_hz) > RATE_REL_TOL * rec.rate_hz:
        raise ValueError(
            f"rate_hz={rec.rate_hz} inconsistent with median timestamp gap "
            f"(implies {implied:.3f} Hz, tolerance {RATE_REL_TOL:.0%})"
        )


@dataclass
class CsvLayout:
    """Column mapping for a HAR-style CSV.

    Exactly one of ``time_col`` (explicit timestamps, seconds) and
    ``implicit_rate_hz`` (evenly spaced samples, timestamps synthesized as
    ``i / rate``) must be set. ``channel_cols`` names the six sensor columns
    in ``ax, ay, az, gx, gy, gz`` order. Scale factors convert stored units
    to m/s^2 and rad/s (e.g. 9.80665 for accelerometers logged in g).
    """

    channel_cols: Sequence[str]
    time_col: Optional[str] = None
    implicit_rate_hz: Optional[float] = None
    accel_scale: float = 1.0
    gyro_scale: float = 1.0

    def __post_init__(self):
        if len(self.channel_cols) != 6:
            raise ValueError(f"channel_cols must name 6 columns, got {len(self.channel_cols)}")
        if (self.time_col is None) == (self.implicit_rate_hz is None):
            raise ValueError("exactly one of time_col and implicit_rate_hz must be set")
        if self.implicit_rate_hz is not None and self.implicit_rate_hz <= 0:
            raise ValueError(f"implicit_rate_hz must be positive, got {self.implicit_rate_hz}")


def _parse_float(text: str, col: str, line_no: int) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ValueError(f"malformed row at line {line_no}: column {col!r} value {text!r}") from None
    if not np.isfinite(v):
        raise ValueError(f"malformed row at line {line_no}: column {col!r} value {text!r}")
    return v


def read_har_csv(path, layout: CsvLayout, meta: Optional[RecordingMeta] = None) -> Recording:
    """Read one HAR-style CSV into a Recording.

    Raises FileNotFoundError for a missing file and ValueError (with the
    1-based file line number) for missing columns, malformed cells,
    non-monotone timestamps, or fewer than 2 data rows.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        wanted = list(layout.channel_cols) + ([layout.time_col] if layout.time_col else [])
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ValueError(f"{path.name}: missing columns {missing} (header has {header})")
        times: list[float] = []
        rows: list[list[float]] = []
        for rec_row in reader:
            line_no = reader.line_num
            if any(rec_row.get(c) in (None, "") for c in wanted):
                raise ValueError(f"malformed row at line {line_no}: missing fields")
            rows.append([_parse_float(rec_row[c], c, line_no) for c in layout.channel_cols])
            if layout.time_col:
                times.append(_parse_float(rec_row[layout.time_col], layout.time_col, line_no))
    if len(rows) < 2:
        raise ValueError(f"{path.name}: needs at least 2 data rows, got {len(rows)}")

    frames = np.asarray(rows, dtype=np.float64)
    frames[:, 0:3] *= layout.accel_scale
    frames[:, 3:6] *= layout.gyro_scale

    if layout.time_col:
        t = np.asarray(times, dtype=np.float64)
        gaps = np.diff(t)
        if np.any(gaps <= 0):
            # +2 = header line plus 1-based offset of the second row in the pair
            bad = int(np.argmax(gaps <= 0))
            raise ValueError(f"{path.name}: non-monotone timestamps at line {bad + 3}")
        rate = 1.0 / float(np.median(gaps))
    else:
        rate = float(layout.implicit_rate_hz)
        t = np.arange(len(rows), dtype=np.float64) / rate
    return Recording(t=t, frames=frames, rate_hz=rate, meta=meta or RecordingMeta())


def _read_instrument_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a one-instrument export with columns time, x, y, z."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        cols = {c.lower().strip(): c for c in header}
        missing = [c for c in ("time", "x", "y", "z") if c not in cols]
        if missing:
            raise ValueError(f"{path.name}: missing columns {missing}")
        t, xyz = [], []
        for row in reader:
            n = reader.line_num
            t.append(_parse_float(row[cols["time"]], "time", n))
            xyz.append([_parse_float(row[cols[a]], a, n) for a in ("x", "y", "z")])
    if len(t) < 2:
        raise ValueError(f"{path.name}: needs at least 2 data rows, got {len(t)}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(np.diff(t_arr) <= 0):
        bad = int(np.argmax(np.diff(t_arr) <= 0))
        raise ValueError(f"{path.name}: non-monotone timestamps at line {bad + 3}")
    return t_arr, np.asarray(xyz, dtype=np.float64)


def read_sensor_logger(
    directory,
    meta: Optional[RecordingMeta] = None,
    accel_scale: float = 1.0,
    gyro_scale: float = 1.0,
) -> Recording:
    """Read a phone sensor-logger export directory into a Recording.

    The directory must hold exactly one accelerometer CSV and one gyroscope
    CSV (identified by filename substring, case-insensitive), each with
    columns ``time, x, y, z``. Frames are joined on the accelerometer clock:
    for every accelerometer timestamp the nearest gyroscope sample is taken,
    and the frame is dropped when that sample is further away than half the
    accelerometer period. An empty overlap raises ValueError.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")

    def find_one(tag: str) -> Path:
        hits = sorted(p for p in directory.iterdir() if tag in p.name.lower() and p.suffix == ".csv")
        if not hits:
            raise ValueError(f"{directory.name}: missing {tag} file")
        if len(hits) > 1:
            raise ValueError(f"{directory.name}: multiple {tag} files: {[p.name for p in hits]}")
        return hits[0]

    t_a, accel = _read_instrument_csv(find_one("accelerometer"))
    t_g, gyro = _read_instrument_csv(find_one("gyroscope"))

    accel = accel * accel_scale
    gyro = gyro * gyro_scale

    period = float(np.median(np.diff(t_a)))
    # nearest gyro index for each accel timestamp
    pos = np.searchsorted(t_g, t_a)
    left = np.clip(pos - 1, 0, len(t_g) - 1)
    right = np.clip(pos, 0, len(t_g) - 1)
    nearest = np.where(np.abs(t_g[right] - t_a) < np.abs(t_g[left] - t_a), right, left)
    keep = np.abs(t_g[nearest] - t_a) <= 0.5 * period
    if not np.any(keep):
        raise ValueError(f"{directory.name}: empty overlap between accelerometer and gyroscope clocks")

    t = t_a[keep]
    frames = np.hstack([accel[keep], gyro[nearest[keep]]])
    if len(t) < 2:
        raise ValueError(f"{directory.name}: overlap too short ({len(t)} frames)")
    rate = 1.0 / float(np.median(np.diff(t)))
    return Recording(t=t, frames=frames, rate_hz=rate, meta=meta or RecordingMeta())


# ---------------------------------------------------------------------------
# recording persistence (lossless npz round-trip)
# ---------------------------------------------------------------------------

def save_recording(rec: Recording, path) -> None:
    """Write a Recording to ``path`` (npz). Arrays round-trip bitwise."""
    np.savez(
        path,
        t=rec.t,
        frames=rec.frames,
        rate_hz=np.float64(rec.rate_hz),
        meta_json=np.str_(json.dumps(asdict(rec.meta))),
    )


def load_recording(path) -> Recording:
    with np.load(path, allow_pickle=False) as z:
        meta = RecordingMeta(**json.loads(str(z["meta_json"])))
        return Recording(
            t=z["t"], frames=z["frames"], rate_hz=float(z["rate_hz"]), meta=meta
        )


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    """One source file (or sensor-logger directory) in a dataset."""

    path: str
    format: str  # "har_csv" | "sensor_logger"
    subject_id: str = ""
    activity_label: str = ""
    sensor_location: str = ""

    VALID_FORMATS = ("har_csv", "sensor_logger")

    def __post_init__(self):
        if not self.path:
            raise ValueError("manifest entry needs a path")
        if self.format not in self.VALID_FORMATS:
            raise ValueError(f"unknown format {self.format!r}, expected one of {self.VALID_FORMATS}")


@dataclass
class DatasetManifest:
    """YAML-backed list of recordings plus the closed class list.

    Schema::

        class_list: [walking, ...]
        entries:
          - path: rel/or/abs.csv
            format: har_csv | sensor_logger
            subject_id: s1
            activity_label: walking
            sensor_location: pocket
    """

    entries: list[ManifestEntry]
    class_list: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("manifest has no entries")
        labelled = {e.activity_label for e in self.entries if e.activity_label}
        unknown = labelled - set(self.class_list) if self.class_list else set()
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} not in class_list {self.class_list}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path.name}: manifest must be a mapping")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list) or not raw_entries:
        raise ValueError(f"{path.name}: manifest needs a non-empty 'entries' list")
    entries = []
    for i, item in enumerate(raw_entries):
        if not isinstance(item, dict):
            raise ValueError(f"{path.name}: entry {i} is not a mapping")
        try:
            entries.append(ManifestEntry(**item))
        except (TypeError, ValueError) as e:
            raise ValueError(f"{path.name}: entry {i}: {e}") from None
    return DatasetManifest(entries=entries, class_list=list(doc.get("class_list") or []))


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "class_list": list(manifest.class_list),
        "entries": [asdict(e) for e in manifest.entries],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
