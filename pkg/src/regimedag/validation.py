"""Input validation helpers shared by the estimator, the core API and the CLI."""

from __future__ import annotations

import numpy as np


def check_series_array(values, max_lag: int) -> np.ndarray:
    """Coerce raw input to a validated (T, d) float array.

    Args:
        values: array-like of shape (T, d).
        max_lag: number of lagged steps the model will condition on.

    Returns:
        A C-contiguous float64 copy with T > max_lag and d >= 1.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D (T, d) array, got ndim={arr.ndim}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"empty series of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("series contains NaN or infinite values")
    if max_lag < 0:
        raise ValueError(f"max_lag must be >= 0, got {max_lag}")
    if arr.shape[0] <= max_lag:
        raise ValueError(
            f"series too short: T={arr.shape[0]} rows with max_lag={max_lag}"
        )
    return np.ascontiguousarray(arr)


def check_square_stack(matrices, n_vars: int | None = None) -> np.ndarray:
    """Validate a (n_lags+1, d, d) stack of graph matrices."""
    arr = np.asarray(matrices, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"expected a stack of square matrices, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("graph stack needs at least the instantaneous matrix")
    if n_vars is not None and arr.shape[1] != n_vars:
        raise ValueError(f"graph is {arr.shape[1]}x{arr.shape[1]}, expected d={n_vars}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("graph contains NaN or infinite weights")
    return arr


def check_positive_int(value: int, name: str, minimum: int = 1) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
