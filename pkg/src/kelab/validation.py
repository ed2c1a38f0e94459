"""Input validation helpers shared by the estimators and the functional API."""
from __future__ import annotations

import numbers

import numpy as np


def freeze(a):
    """Return ``a`` as a read-only ndarray (no copy when already an array)."""
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def check_resolution(N, minimum):
    if not isinstance(N, numbers.Integral) or isinstance(N, bool):
        raise TypeError(f"grid resolution must be an integer, got {N!r}")
    if N < minimum:
        raise ValueError(f"grid resolution {N} is below the minimum {minimum}")


def check_positive(name, value):
    if not (isinstance(value, numbers.Real) and np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_field(values, fiber, name="field", allow_nonfinite=False):
    """Coerce ``values`` to a float array on ``fiber``'s grid."""
    if hasattr(values, "values") and not isinstance(values, np.ndarray):
        values = values.values
    arr = np.asarray(values, dtype=float)
    if arr.shape != fiber.shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {fiber.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_grid(*objs):
    fibers = [o.fiber for o in objs if o is not None]
    for f in fibers[1:]:
        if f is not fibers[0] and f.shape != fibers[0].shape:
            raise ValueError("inputs live on different grids")
    return fibers[0]


def check_region(region, fiber):
    """Boolean cell mask from an array or a callable ``region(fiber)``."""
    if callable(region):
        region = region(fiber)
    if region is None:
        return np.ones(fiber.shape, dtype=bool)
    mask = np.asarray(region)
    if mask.shape != fiber.shape:
        raise ValueError(f"region mask has shape {mask.shape}, expected {fiber.shape}")
    return mask.astype(bool)
