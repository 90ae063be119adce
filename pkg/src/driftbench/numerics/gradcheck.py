"""Central finite differences, the independent oracle for every backward."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-4) -> np.ndarray:
    """Estimate ``df/dtheta`` coordinate by coordinate.

    ``f`` receives a float64 array shaped like ``theta`` and returns a scalar.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    base = np.array(getattr(theta, "data", theta), dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(base.copy()))
        flat[i] = orig - h
        down = float(f(base.copy()))
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-coordinate ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
