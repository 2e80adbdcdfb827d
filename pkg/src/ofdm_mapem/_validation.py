"""Input validation helpers shared by the public API."""

import numbers

import numpy as np


def check_complex_vector(x, name="x", length=None):
    """Return ``x`` as a finite 1-D complex128 array.

    Raises ``ValueError`` for empty, multi-dimensional or non-finite input
    and when ``length`` is given and does not match.
    """
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if length is not None and arr.size != length:
        raise ValueError(f"{name} has length {arr.size}, expected {length}")
    return arr


def check_real_vector(x, name="x", length=None, allow_empty=False):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if length is not None and arr.size != length:
        raise ValueError(f"{name} has length {arr.size}, expected {length}")
    return arr


def check_mask(mask, length):
    arr = np.asarray(mask)
    if arr.dtype != np.bool_:
        if not np.all(np.isin(arr, (0, 1))):
            raise ValueError("training mask must be boolean")
        arr = arr.astype(bool)
    if arr.ndim != 1 or arr.size != length:
        raise ValueError(f"training mask must have shape ({length},), got {arr.shape}")
    return arr


def check_epsilon(epsilon):
    if not isinstance(epsilon, numbers.Real) or not np.isfinite(epsilon):
        raise ValueError(f"epsilon must be a finite real number, got {epsilon!r}")
    if abs(epsilon) > 0.5:
        raise ValueError(f"|epsilon| must be <= 0.5, got {epsilon}")
    return float(epsilon)


def check_permutation(order, n=None):
    """Validate a permutation given as an index array of its image."""
    arr = np.asarray(order)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("permutation must be a one-dimensional integer array")
    if n is not None and arr.size != n:
        raise ValueError(f"permutation has length {arr.size}, expected {n}")
    if not np.array_equal(np.sort(arr), np.arange(arr.size)):
        raise ValueError("permutation is not a bijection on {0, ..., n-1}")
    return arr.astype(np.intp)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)
