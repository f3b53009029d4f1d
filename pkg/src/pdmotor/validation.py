"""Input validation helpers, in the spirit of sklearn's check_array.

All estimators and public entry points funnel window arrays and label
vectors through these so shape/label errors surface with a clear message
instead of deep inside the numeric code.
"""

import numpy as np

from .errors import ShapeError
from .states import N_STATES

WINDOW_SAMPLES = 3600
WINDOW_AXES = 3


def check_window_array(X, name: str = "X") -> np.ndarray:
    """Validate an array of sensor windows, shape (n, 3600, 3), finite.

    A single (3600, 3) window is promoted to a batch of one.
    Returns a float64 C-contiguous array.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != WINDOW_SAMPLES or X.shape[2] != WINDOW_AXES:
        raise ShapeError(
            f"{name} must have shape (n, {WINDOW_SAMPLES}, {WINDOW_AXES}), got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ShapeError(f"{name} contains non-finite values")
    return np.ascontiguousarray(X)


def check_labels(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Validate a label vector of class codes in [0, N_STATES)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ShapeError(f"{name} has {y.shape[0]} entries, expected {n}")
    if y.size and (y.min() < 0 or y.max() >= N_STATES):
        raise ShapeError(f"{name} contains labels outside [0, {N_STATES})")
    return y.astype(np.int64)


def check_finite(arr, name: str = "array") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr
