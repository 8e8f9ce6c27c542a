"""
Small planar hull helpers (Andrew's monotone chain).

Used for the 1D lower convex envelope of a sampled function and for the area
of the subdifferential polygons of 2D piecewise-linear potentials.
"""
from __future__ import annotations

import numpy as np


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def lower_hull_indices(x: np.ndarray, y: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Indices of the lower convex hull vertices of the graph (x_i, y_i), x sorted increasing."""
    chain: list[int] = []
    for i in range(x.size):
        while len(chain) >= 2:
            o, a = chain[-2], chain[-1]
            turn = (x[a] - x[o]) * (y[i] - y[o]) - (y[a] - y[o]) * (x[i] - x[o])
            if turn <= tol:
                chain.pop()
            else:
                break
        chain.append(i)
    return np.asarray(chain, dtype=np.int64)


def lower_envelope_1d(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Largest convex function below the samples, evaluated at the sample points."""
    idx = lower_hull_indices(x, y)
    return np.interp(x, x[idx], y[idx])


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices of a small planar point set."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a simple polygon given in order."""
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def hull_area(points: np.ndarray) -> float:
    return polygon_area(convex_hull_2d(points))


__all__ = [
    "lower_hull_indices",
    "lower_envelope_1d",
    "convex_hull_2d",
    "polygon_area",
    "hull_area",
]
