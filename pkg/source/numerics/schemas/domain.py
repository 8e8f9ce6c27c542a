from __future__ import annotations
import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DomainKind(str, Enum):

    INTERVAL = "Interval"
    TORUS1 = "Torus1"
    TORUS2 = "Torus2"
    SQUARE = "Square"
    BOX2 = "Box2"
    TRUNCATED_LINE = "TruncatedLine"
    TRUNCATED_HALF_LINE = "TruncatedHalfLine"
    TRUNCATED_PLANE = "TruncatedPlane"
    TRUNCATED_QUARTER_PLANE = "TruncatedQuarterPlane"


_DIMENSION = {
    DomainKind.INTERVAL: 1,
    DomainKind.TORUS1: 1,
    DomainKind.TRUNCATED_LINE: 1,
    DomainKind.TRUNCATED_HALF_LINE: 1,
    DomainKind.TORUS2: 2,
    DomainKind.SQUARE: 2,
    DomainKind.BOX2: 2,
    DomainKind.TRUNCATED_PLANE: 2,
    DomainKind.TRUNCATED_QUARTER_PLANE: 2,
}

_PERIODIC = {DomainKind.TORUS1, DomainKind.TORUS2}

_TRUNCATED = {
    DomainKind.TRUNCATED_LINE,
    DomainKind.TRUNCATED_HALF_LINE,
    DomainKind.TRUNCATED_PLANE,
    DomainKind.TRUNCATED_QUARTER_PLANE,
}

DEFAULT_TRUNCATION_RADIUS = 8.0


class Domain(BaseModel):
    """Axis-aligned geometry descriptor; unbounded kinds are stored truncated."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: DomainKind = Field(..., description="Geometry family")
    bounds: tuple[tuple[float, float], ...] = Field(..., description="Per-axis (lo, hi)")

    # ───────────────────────── validators ────────────────────────
    @model_validator(mode="after")
    def _check_bounds(self) -> "Domain":
        d = _DIMENSION[self.kind]
        if len(self.bounds) != d:
            raise ValueError(f"{self.kind.value} needs {d} axis bounds, got {len(self.bounds)}")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"non-finite bounds ({lo}, {hi})")
            if not lo < hi:
                raise ValueError(f"bounds must satisfy lo < hi, got ({lo}, {hi})")
        if self.kind is DomainKind.SQUARE:
            (a0, b0), (a1, b1) = self.bounds
            if not math.isclose(b0 - a0, b1 - a1, rel_tol=1e-12):
                raise ValueError("Square needs equal side lengths; use Box2 otherwise")
        if self.kind in (DomainKind.TRUNCATED_HALF_LINE, DomainKind.TRUNCATED_QUARTER_PLANE):
            if any(lo != 0.0 for lo, _ in self.bounds):
                raise ValueError(f"{self.kind.value} is anchored at the origin (lo = 0)")
        return self

    @classmethod
    def of(
        cls,
        kind: DomainKind | str,
        bounds: list[tuple[float, float]] | None = None,
        radius: float | None = None,
    ) -> "Domain":
        """Build a domain with the conventional default bounds for its kind."""
        kind = DomainKind(kind)
        if bounds is not None:
            return cls(kind=kind, bounds=tuple(tuple(b) for b in bounds))
        R = DEFAULT_TRUNCATION_RADIUS if radius is None else float(radius)
        defaults: dict[DomainKind, tuple[tuple[float, float], ...]] = {
            DomainKind.INTERVAL: ((0.0, 1.0),),
            DomainKind.TORUS1: ((0.0, 1.0),),
            DomainKind.TORUS2: ((0.0, 1.0), (0.0, 1.0)),
            DomainKind.SQUARE: ((0.0, 1.0), (0.0, 1.0)),
            DomainKind.TRUNCATED_LINE: ((-R, R),),
            DomainKind.TRUNCATED_HALF_LINE: ((0.0, R),),
            DomainKind.TRUNCATED_PLANE: ((-R, R), (-R, R)),
            DomainKind.TRUNCATED_QUARTER_PLANE: ((0.0, R), (0.0, R)),
        }
        if kind not in defaults:
            raise ValueError(f"{kind.value} has no default bounds; pass them explicitly")
        return cls(kind=kind, bounds=defaults[kind])

    @property
    def d(self) -> int:
        return _DIMENSION[self.kind]

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(self.kind in _PERIODIC for _ in range(self.d))

    @property
    def is_periodic(self) -> bool:
        return self.kind in _PERIODIC

    @property
    def is_truncated(self) -> bool:
        return self.kind in _TRUNCATED

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)

    @property
    def volume(self) -> float:
        return math.prod(self.lengths)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(L * L for L in self.lengths))


__all__ = ["DomainKind", "Domain", "DEFAULT_TRUNCATION_RADIUS"]
