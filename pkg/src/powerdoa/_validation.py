"""Input validation helpers shared by the modules and the estimators."""

import numpy as np

from .exceptions import InvalidInputError


def as_finite_array(x, name, ndim=None, dtype=float):
    """Convert ``x`` to a float array and check finiteness and rank."""
    try:
        arr = np.asarray(x, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name}: not numeric ({exc})") from None
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name}: empty array")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains non-finite values")
    return arr


def as_positive_vector(x, name, length=None):
    arr = as_finite_array(x, name, ndim=1)
    if length is not None and arr.shape[0] != length:
        raise InvalidInputError(f"{name}: expected length {length}, got {arr.shape[0]}")
    if np.any(arr <= 0):
        raise InvalidInputError(f"{name}: entries must be > 0")
    return arr


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidInputError(f"{name}: expected an integer, got {value!r}")
    if value < minimum:
        raise InvalidInputError(f"{name}: must be >= {minimum}, got {value}")
    return int(value)


def check_order(order):
    return check_positive_int(order, "order", minimum=0)
