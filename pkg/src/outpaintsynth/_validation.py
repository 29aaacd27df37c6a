"""Input validation helpers shared by the estimators."""

import numpy as np


def check_rgb_image(image, name="image") -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} is empty")
    return arr


def check_image(image, name="image") -> np.ndarray:
    """Accept a 2-D grayscale or ``(H, W, C)`` raster; return it as float64 ``(H, W, C)``."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] == 0 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D or 3-D raster, got shape {np.shape(image)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_fraction(value, name, low=0.0, high=1.0, low_inclusive=False):
    value = float(value)
    ok = (value >= low if low_inclusive else value > low) and value <= high
    if not ok:
        raise ValueError(f"{name} must be in {'[' if low_inclusive else '('}{low}, {high}], got {value}")
    return value
