"""Input checks shared across modules."""

from __future__ import annotations

import numbers

import numpy as np


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_vector(v, size: int, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_batch(arr, trailing: tuple, name: str) -> np.ndarray:
    """Return ``arr`` as float with at least one leading batch axis."""
    arr = np.asarray(arr, dtype=float)
    if arr.shape[arr.ndim - len(trailing):] != trailing:
        want = ", ".join(map(str, trailing))
        raise ValueError(f"{name} has shape {arr.shape}, expected (..., {want})")
    return arr


def check_same_paths(*arrays, names=None):
    sizes = {a.shape[0] for a in arrays if a.shape[0] != 1}
    if len(sizes) > 1:
        suffix = f" ({names})" if names else ""
        raise ValueError(f"path counts disagree: {sorted(sizes)}{suffix}")
