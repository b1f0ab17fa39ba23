"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyFeatures, NonFiniteValue


def ensure_rng(seed) -> np.random.Generator:
    """Accept an int seed or an existing Generator and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def as_matrix(x, name="array") -> np.ndarray:
    """Coerce to a 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_vector(x, name="array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return arr


def check_nonempty(arr, name="features"):
    if arr.shape[0] == 0:
        raise EmptyFeatures(f"{name} has no rows")
    return arr


def check_dim(arr, dim, name="array"):
    if arr.shape[-1] != dim:
        raise DimensionMismatch(
            f"{name} must have {dim} columns, got {arr.shape[-1]}"
        )
    return arr
