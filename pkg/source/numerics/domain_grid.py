"""
Uniform cell-centred grids on the laboratory domains.

• Grid: immutable per-axis cell counts and widths with precomputed periodic
  wrap tables.
• classify_boundary: Interior / Face / Corner tags with outward face normals.

Relies on:
    • numpy for index arithmetic
    • pydantic models for the immutable containers
"""
from __future__ import annotations
import math
from enum import IntEnum
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from numerics.errors import GridError
from numerics.schemas.domain import Domain

MIN_CELLS = 4


class CellTag(IntEnum):

    INTERIOR = 0
    FACE = 1
    CORNER = 2


class Grid(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    domain: Domain
    n: tuple[int, ...] = Field(..., description="Cells per axis")
    h: tuple[float, ...] = Field(..., description="Cell width per axis")
    wrap_tables: tuple[np.ndarray, ...] = Field(
        ..., description="Per axis, index i + n -> i mod n for i in [-n, 2n)"
    )

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return math.prod(self.n)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def total_measure(self) -> float:
        return self.size * self.cell_volume

    def axis_centers(self, axis: int) -> np.ndarray:
        lo, _ = self.domain.bounds[axis]
        return lo + (np.arange(self.n[axis]) + 0.5) * self.h[axis]

    def axis_edges(self, axis: int) -> np.ndarray:
        lo, hi = self.domain.bounds[axis]
        edges = lo + np.arange(self.n[axis] + 1) * self.h[axis]
        edges[-1] = hi
        return edges

    def centers(self) -> np.ndarray:
        """Cell centres, shape (n,) in 1D and (n0, n1, 2) in 2D."""
        if self.d == 1:
            return self.axis_centers(0)
        X0, X1 = np.meshgrid(self.axis_centers(0), self.axis_centers(1), indexing="ij")
        return np.stack([X0, X1], axis=-1)

    def squared_norm(self) -> np.ndarray:
        """|x|^2 at cell centres."""
        x = self.centers()
        return x * x if self.d == 1 else np.sum(x * x, axis=-1)

    def wrap(self, index: np.ndarray | int, axis: int) -> np.ndarray | int:
        """Periodic index arithmetic: shifting by n returns the same cell."""
        n = self.n[axis]
        idx = np.asarray(index)
        if np.all((idx >= -n) & (idx < 2 * n)):
            out = self.wrap_tables[axis][idx + n]
        else:
            out = np.mod(idx, n)
        return int(out) if np.ndim(out) == 0 else out

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)


def build_grid(domain: Domain, n: int | Sequence[int]) -> Grid:
    """Uniform cell-centred grid with n cells per axis (n >= 4)."""
    counts = (int(n),) * domain.d if np.isscalar(n) else tuple(int(k) for k in n)
    if len(counts) != domain.d:
        raise GridError(f"{domain.kind.value} needs {domain.d} cell counts, got {len(counts)}")
    if any(k < MIN_CELLS for k in counts):
        raise GridError(f"need at least {MIN_CELLS} cells per axis, got {counts}")
    for lo, hi in domain.bounds:
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise GridError(f"non-finite bounds ({lo}, {hi})")

    widths = tuple((hi - lo) / k for (lo, hi), k in zip(domain.bounds, counts))
    tables = tuple(np.mod(np.arange(-k, 2 * k), k) for k in counts)
    return Grid(domain=domain, n=counts, h=widths, wrap_tables=tables)


# ── boundary classification ─────────────────────────────────────────


class BoundaryClass(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tags: np.ndarray = Field(..., description="CellTag per cell, grid shape")
    normals: np.ndarray = Field(..., description="Outward unit normal for Face cells, zero elsewhere")

    def count(self, tag: CellTag) -> int:
        return int(np.count_nonzero(self.tags == tag))

    def mask(self, tag: CellTag) -> np.ndarray:
        return self.tags == tag


def classify_boundary(grid: Grid) -> BoundaryClass:
    """Tag each cell by the number of non-periodic axes on which it touches the boundary.

    In 1D the two end cells are corners; in 2D one boundary axis means a face
    (normal along that axis) and two mean a corner.
    """
    shape = grid.shape
    hits = np.zeros(shape, dtype=np.int64)
    normals = np.zeros(shape + (grid.d,), dtype=float)
    for axis, periodic in enumerate(grid.domain.periodic):
        if periodic:
            continue
        idx = np.arange(grid.n[axis])
        side = np.where(idx == 0, -1.0, np.where(idx == grid.n[axis] - 1, 1.0, 0.0))
        view = [np.newaxis] * grid.d
        view[axis] = slice(None)
        side_b = np.broadcast_to(side[tuple(view)], shape)
        hits += (side_b != 0).astype(np.int64)
        normals[..., axis] = side_b

    tags = np.full(shape, CellTag.INTERIOR, dtype=np.int64)
    if grid.d == 1:
        tags[hits >= 1] = CellTag.CORNER
        normals[:] = 0.0
    else:
        tags[hits == 1] = CellTag.FACE
        tags[hits >= 2] = CellTag.CORNER
        normals[tags != CellTag.FACE] = 0.0
    return BoundaryClass(tags=tags, normals=normals)


def interior_window(grid: Grid, halo: int = 1) -> np.ndarray:
    """Boolean mask of cells at least `halo` cells away from any non-periodic boundary."""
    mask = np.ones(grid.shape, dtype=bool)
    for axis, periodic in enumerate(grid.domain.periodic):
        if periodic or halo <= 0:
            continue
        sl = [slice(None)] * grid.d
        sl[axis] = slice(0, halo)
        mask[tuple(sl)] = False
        sl[axis] = slice(grid.n[axis] - halo, None)
        mask[tuple(sl)] = False
    return mask


__all__ = [
    "CellTag",
    "Grid",
    "BoundaryClass",
    "build_grid",
    "classify_boundary",
    "interior_window",
]
