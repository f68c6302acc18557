"""Tensor conventions and validation helpers.

A tensor is a C-contiguous float64 numpy array; its flat buffer is the
row-major data, so ``prod(shape) == data.size`` holds by construction.
Public operations call :func:`ensure_finite` so NaN/Inf never escape
silently.
"""

from __future__ import annotations

import numpy as np


class NumericsError(ValueError):
    """Raised on shape mismatches and non-finite numeric results."""


def as_tensor(values, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    """Return ``arr`` unchanged, raising NumericsError if any value is NaN/Inf."""
    if not np.isfinite(arr).all():
        bad = int(np.size(arr) - np.isfinite(arr).sum())
        raise NumericsError(f"{name}: {bad} non-finite value(s) in array of shape {arr.shape}")
    return arr


def require_shape(name: str, arr: np.ndarray, shape: tuple[int, ...]) -> None:
    if tuple(arr.shape) != tuple(shape):
        raise NumericsError(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")
