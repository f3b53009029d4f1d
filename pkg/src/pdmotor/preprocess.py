"""Raw accelerometer streams -> labeled one-minute windows.

The wearable reports triaxial acceleration in G at a nominal 62.5 Hz with
irregular timestamps. The pipeline resamples each stream to a uniform
60 Hz grid by linear interpolation, cuts consecutive non-overlapping
3600-sample minutes, attaches per-minute labels, and removes windows
whose acceleration-magnitude variance falls below the no-motion
threshold (those are reported as NO_MOTION at runtime rather than
classified).
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, PdmotorError, ShapeError
from .states import UNLABELED, state_code, state_name

TARGET_RATE_HZ = 60.0
WINDOW_SAMPLES = 3600
NO_MOTION_VARIANCE_G2 = 2.75e-4
NO_MOTION_TAG = "NO_MOTION"


@dataclass
class RawStream:
    """Timestamped triaxial acceleration, timestamps in seconds, values in G."""

    timestamps: np.ndarray
    samples: np.ndarray  # (n, 3)
    nominal_rate: float = 62.5

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.timestamps.ndim != 1 or self.samples.shape != (self.timestamps.size, 3):
            raise ShapeError(
                f"stream needs timestamps (n,) and samples (n, 3); got "
                f"{self.timestamps.shape} and {self.samples.shape}"
            )
        if np.any(np.diff(self.timestamps) < 0):
            raise ShapeError("timestamps must be monotone non-decreasing")


@dataclass
class SensorWindow:
    """One minute of acceleration: 3600 samples x 3 axes, in G."""

    values: np.ndarray
    minute_index: int
    label: int = UNLABELED
    patient_id: str = ""
    tag: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (WINDOW_SAMPLES, 3):
            raise ShapeError(f"window must be ({WINDOW_SAMPLES}, 3), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("window contains non-finite values")


@dataclass
class NoMotionPolicy:
    """Removal rule: windows with magnitude variance strictly below the
    threshold are excluded from training/evaluation."""

    variance_threshold: float = NO_MOTION_VARIANCE_G2
    statistic: str = "magnitude_variance"  # hook for swapping the statistic

    def __post_init__(self):
        if self.variance_threshold <= 0:
            raise ValueError("variance threshold must be > 0")

    def is_no_motion(self, window: SensorWindow) -> bool:
        return magnitude_variance(window) < self.variance_threshold


def resample(stream: RawStream, target_rate: float = TARGET_RATE_HZ) -> RawStream:
    """Linear interpolation onto a uniform grid spanning [first, last] timestamp.

    Grid points are t0 + k / target_rate for k = 0 .. floor(span * rate),
    so the output timestamps are exactly uniform.
    """
    if stream.timestamps.size < 2:
        raise InsufficientDataError("resampling needs at least 2 samples")
    if target_rate <= 0:
        raise ValueError("target_rate must be > 0")
    t0 = stream.timestamps[0]
    span = stream.timestamps[-1] - t0
    count = int(np.floor(span * target_rate)) + 1
    grid = t0 + np.arange(count) / target_rate
    out = np.column_stack(
        [np.interp(grid, stream.timestamps, stream.samples[:, ax]) for ax in range(3)]
    )
    return RawStream(timestamps=grid, samples=out, nominal_rate=target_rate)


def windowize(
    stream: RawStream,
    labels: dict[int, int] | None = None,
    patient_id: str = "",
) -> list[SensorWindow]:
    """Cut a uniform 60 Hz stream into consecutive one-minute windows.

    labels maps minute index -> state code; minutes without an entry are
    UNLABELED. A trailing partial minute is discarded.
    """
    dt = np.diff(stream.timestamps)
    if dt.size and np.max(np.abs(dt - 1.0 / TARGET_RATE_HZ)) > 1e-9:
        raise PdmotorError("windowize requires a uniform 60 Hz stream; resample first")
    labels = labels or {}
    n_windows = stream.samples.shape[0] // WINDOW_SAMPLES
    windows = []
    for i in range(n_windows):
        chunk = stream.samples[i * WINDOW_SAMPLES : (i + 1) * WINDOW_SAMPLES]
        windows.append(
            SensorWindow(
                values=chunk,
                minute_index=i,
                label=labels.get(i, UNLABELED),
                patient_id=patient_id,
            )
        )
    return windows


def magnitude_variance(window: SensorWindow) -> float:
    """Population variance of the per-sample Euclidean magnitude, in G^2."""
    mag = np.linalg.norm(window.values, axis=1)
    return float(mag.var())


def filter_no_motion(
    windows: list[SensorWindow], policy: NoMotionPolicy | None = None
) -> tuple[list[SensorWindow], list[SensorWindow]]:
    """Split windows into (kept, removed) by the no-motion rule.

    Removal uses strict less-than, so a window exactly at the threshold is
    kept. Removed windows are tagged copies; inputs are not mutated.
    """
    policy = policy or NoMotionPolicy()
    kept, removed = [], []
    for w in windows:
        if policy.is_no_motion(w):
            removed.append(replace(w, tag=NO_MOTION_TAG))
        else:
            kept.append(w)
    return kept, removed


# ---------------------------------------------------------------------------
# CSV interfaces: stream files `t,ax,ay,az` and label files
# `minute,state,severity` (severity accepted but ignored).
# ---------------------------------------------------------------------------

def write_stream_csv(stream: RawStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ax", "ay", "az"])
        for t, (ax, ay, az) in zip(stream.timestamps, stream.samples):
            w.writerow([repr(float(t)), repr(float(ax)), repr(float(ay)), repr(float(az))])


def read_stream_csv(path) -> RawStream:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "ax", "ay", "az"]:
            raise PdmotorError(f"{path}: expected header 't,ax,ay,az', got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise InsufficientDataError(f"{path}: empty stream")
    arr = np.asarray(rows, dtype=np.float64)
    return RawStream(timestamps=arr[:, 0], samples=arr[:, 1:4])


def write_labels_csv(labels: dict[int, int], path, severities: dict[int, int] | None = None) -> None:
    severities = severities or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "state", "severity"])
        for minute in sorted(labels):
            w.writerow([minute, state_name(labels[minute]), severities.get(minute, 0)])


def read_labels_csv(path) -> dict[int, int]:
    path = Path(path)
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["minute", "state", "severity"]:
            raise PdmotorError(f"{path}: expected header 'minute,state,severity', got {header}")
        for row in reader:
            if not row:
                continue
            labels[int(row[0])] = state_code(row[1])
    return labels
