"""Input validation helpers shared across the package.

All public entry points normalize array inputs through these functions so
shape and finiteness errors surface at the boundary with a clear message
instead of deep inside a numpy kernel.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_vector3(x, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 vector of length 3."""
    arr = as_float_array(x, name)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    return arr


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to an (n, 3) float64 point array.

    A single point of shape (3,) is promoted to shape (1, 3).
    """
    arr = as_float_array(x, name)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    return arr


def as_grid_values(x, name: str = "values") -> np.ndarray:
    """Coerce to a finite, C-contiguous 3D float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a 3D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
