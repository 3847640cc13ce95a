"""Small input validation helpers shared by the public functions."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InputError


def as_matrix(X, name="X", n_features=None):
    """Return ``X`` as a finite float64 2-D array, raising :class:`InputError`."""
    try:
        arr = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=0)
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from exc
    if n_features is not None and arr.shape[1] != n_features:
        raise InputError(f"{name}: expected {n_features} columns, got {arr.shape[1]}")
    return arr


def as_vector(x, name="x", size=None):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name}: expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: contains NaN or Inf")
    if size is not None and arr.shape[0] != size:
        raise InputError(f"{name}: expected length {size}, got {arr.shape[0]}")
    return arr


def check_item(a, K):
    if not (0 <= int(a) < K) or int(a) != a:
        raise InputError(f"item index {a} out of range for K={K}")
    return int(a)


def check_positive(value, name):
    if not np.all(np.asarray(value) > 0):
        raise InputError(f"{name} must be positive, got {value}")
    return value


def check_probability_vector(p, K, atol=1e-9):
    p = as_vector(p, "action distribution", size=K)
    if np.any(p < -atol) or abs(p.sum() - 1.0) > atol:
        raise InputError(f"action distribution must be a probability vector, sums to {p.sum()}")
    return p
