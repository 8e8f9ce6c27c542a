"""Projection onto bounded monotone vectors."""
from __future__ import annotations

import numpy as np
from scipy.optimize import isotonic_regression


def project_monotone(
    y: np.ndarray,
    weights: np.ndarray | None = None,
    lower: float = -np.inf,
    upper: float = np.inf,
    min_gap: float = 0.0,
) -> np.ndarray:
    """Weighted Euclidean projection onto {lower <= x_0, x_{j+1} - x_j >= min_gap, x_last <= upper}.

    The gap constraint is removed by the shift x_j -> x_j - j*min_gap, after
    which the feasible set is the monotone cone intersected with a box, whose
    projection is the clipped pool-adjacent-violators fit.
    """
    y = np.asarray(y, dtype=float)
    shift = min_gap * np.arange(y.size)
    fit = isotonic_regression(y - shift, weights=weights, increasing=True).x
    hi = upper - min_gap * (y.size - 1)
    if hi < lower:
        raise ValueError("the box is too short for the requested minimum gap")
    return np.clip(fit, lower, hi) + shift


__all__ = ["project_monotone"]
