"""Input validation helpers shared across the library."""

from __future__ import annotations

import numpy as np


def check_matrix(x, name, shape=None, allow_1d=False):
    """Coerce to a float64 array, check finiteness and (optionally) shape."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and not allow_1d:
        raise ValueError(f"{name} must be 2-d, got 1-d of length {arr.shape[0]}")
    if arr.ndim not in (1, 2):
        raise ValueError(f"{name} must be 1-d or 2-d, got {arr.ndim}-d")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    if shape is not None:
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise ValueError(
                    f"{name} has shape {arr.shape}, expected {tuple(shape)}"
                )
    return arr


def check_positive(value, name):
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_non_negative(value, name):
    value = float(value)
    if not value >= 0:
        raise ValueError(f"{name} must be non-negative, got {value}")
    return value


def check_indices(indices, name, upper):
    """Integer index array with every entry in [0, upper)."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"{name} must be integer indices")
    idx = idx.astype(np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= upper):
        raise ValueError(f"{name} has entries outside [0, {upper})")
    return idx


def check_row_stochastic(pi, name="pi", tol=1e-8):
    """Validate a soft assignment matrix: entries in [0,1], rows sum to 1."""
    pi = check_matrix(pi, name)
    if pi.min() < -tol or pi.max() > 1 + tol:
        raise ValueError(f"{name} entries must lie in [0, 1]")
    row_sums = pi.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > tol:
        worst = int(np.abs(row_sums - 1.0).argmax())
        raise ValueError(
            f"{name} rows must sum to 1 (row {worst} sums to {row_sums[worst]!r})"
        )
    return pi


def check_same_shape(a, b, name_a, name_b):
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} and {name_b} must have equal shapes, "
            f"got {a.shape} and {b.shape}"
        )
