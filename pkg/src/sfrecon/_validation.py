"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_positions(X, name="X"):
    """Return positions as a float ``(M_t, Q, 3)`` array.

    ``(M_t, 3)`` input is read as one microphone.
    """
    arr = check_array(X, allow_nd=True, ensure_2d=False, dtype=float, input_name=name)
    if arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (M_t, 3) or (M_t, Q, 3), got {np.shape(X)}")
    return arr


def check_samples(y, shape, name="y"):
    """Return microphone samples as a float array of ``shape`` (M_t, Q)."""
    arr = check_array(y, ensure_2d=False, dtype=float, input_name=name)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_points(X, name="X"):
    """Return query points as a float ``(P, 3)`` array."""
    arr = check_array(X, ensure_2d=False, dtype=float, input_name=name)
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (P, 3), got {np.shape(X)}")
    return arr


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
