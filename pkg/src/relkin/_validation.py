"""Input validation helpers shared across modules."""

import numpy as np

from .exceptions import DomainError


def as_four_vector(v, name="vector"):
    """Return ``v`` as a float array whose last axis has length 4.

    Raises ``ValueError`` on a wrong trailing shape or non-finite entries.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != 4:
        raise ValueError(f"{name} must have a trailing axis of length 4, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    return arr


def as_tensor2(w, name="tensor"):
    arr = np.asarray(w, dtype=float)
    if arr.ndim < 2 or arr.shape[-2:] != (4, 4):
        raise ValueError(f"{name} must have trailing shape (4, 4), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def check_positive(value, name):
    value = float(value)
    if not (np.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


def check_symmetric(w, name="tensor", rtol=1e-12):
    w = np.asarray(w, dtype=float)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if np.max(np.abs(w - np.swapaxes(w, -1, -2))) > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return w
