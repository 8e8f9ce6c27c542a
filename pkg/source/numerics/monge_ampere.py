"""
Monge-Ampère measures of sampled convex potentials.

• ConvexPotential: values on a uniform grid or on sorted 1D points, with the
  convexified envelope and the adjustment it took (delta_conv).
• ma_measure_1d: slope increments over Voronoi cells, atoms at slope jumps.
• ma_measure_2d: per-vertex area of the hull of incident triangle gradients on
  the alternating-diagonal (Union-Jack) triangulation.
• ma_lower_bound_check / amgm_subharmonic_check: det(D^2 u) >= lambda^d and the
  weak Laplacian consequence Lap u >= d lambda, each with its slack budget.
• lift_periodic: torus potentials unrolled to one period plus a halo.

Relies on:
    • scipy.spatial.ConvexHull for the 2D lower envelope
    • scipy.ndimage.correlate for the weak-form bump sums
    • numerics.utils.hull for the small gradient polygons
"""
from __future__ import annotations
import logging
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage, spatial

from numerics.domain_grid import Grid
from numerics.errors import GridError
from numerics.utils.file_utils import write_csv
from numerics.utils.hull import hull_area, lower_envelope_1d

log = logging.getLogger(__name__)

ATOM_FACTOR = 50.0
SLACK_GUARD = 1e-9
BUMP_WIDTHS = (1, 2, 3)
_PLANE_CHUNK = 1024


class ConvexPotential(BaseModel):
    """Sampled candidate Brenier potential.

    `values` is the convex envelope once `convexified` is set, `raw` keeps the
    input. Lifted torus potentials carry `halo` replica cells on each side.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    axes: tuple[np.ndarray, ...] = Field(..., description="Sorted sample coordinates per axis")
    values: np.ndarray
    raw: np.ndarray
    convexified: bool = False
    delta_conv: float = 0.0
    halo: int = Field(0, description="Periodic replica cells on each side, 0 when not lifted")

    @classmethod
    def on_grid(cls, grid: Grid, values: np.ndarray) -> "ConvexPotential":
        v = np.asarray(values, dtype=float).reshape(grid.shape)
        axes = tuple(grid.axis_centers(a) for a in range(grid.d))
        return cls(axes=axes, values=v, raw=v.copy())

    @classmethod
    def on_points(cls, x: np.ndarray, values: np.ndarray) -> "ConvexPotential":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0.0):
            raise GridError("1D potential points must be strictly increasing, at least 3 of them")
        v = np.asarray(values, dtype=float).reshape(x.shape)
        return cls(axes=(x,), values=v, raw=v.copy())

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def lifted(self) -> bool:
        return self.halo > 0

    def spacing(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def cell_volumes(self) -> np.ndarray:
        """Voronoi lengths in 1D (end cells take their one-sided gap), h0*h1 in 2D."""
        if self.d == 1:
            x = self.axes[0]
            vol = np.empty_like(x)
            vol[1:-1] = 0.5 * (x[2:] - x[:-2])
            vol[0] = x[1] - x[0]
            vol[-1] = x[-1] - x[-2]
            return vol
        h0, h1 = self.spacing()
        return np.full(self.shape, h0 * h1)

    def points(self) -> np.ndarray:
        if self.d == 1:
            return self.axes[0]
        X0, X1 = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([X0, X1], axis=-1)

    def default_window(self) -> np.ndarray:
        """Fundamental cells for lifted potentials, otherwise all but the outer ring."""
        pad = self.halo if self.lifted else 1
        mask = np.zeros(self.shape, dtype=bool)
        mask[tuple(slice(pad, n - pad) for n in self.shape)] = True
        return mask

    def convexified_copy(self) -> "ConvexPotential":
        envelope = _lower_envelope(self.axes, self.raw)
        delta = float(np.max(self.raw - envelope))
        return self.model_copy(update={"values": envelope, "convexified": True, "delta_conv": max(delta, 0.0)})


class Atom(BaseModel):
    point: tuple[float, ...]
    mass: float


class MongeAmpereMeasure(BaseModel):
    """Per-cell subdifferential volumes over a window; atoms are included in the cell masses."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    masses: np.ndarray = Field(..., description="Mass per cell, zero outside the window")
    window: np.ndarray
    cell_volumes: np.ndarray
    atoms: list[Atom] = Field(default_factory=list)

    @property
    def total(self) -> float:
        return float(np.sum(self.masses[self.window]))

    def window_mass(self, mask: np.ndarray) -> float:
        return float(np.sum(self.masses[mask & self.window]))

    def density(self) -> np.ndarray:
        return np.where(self.window, self.masses / self.cell_volumes, np.nan)

    def rows(self) -> list[dict]:
        out = []
        for idx in zip(*np.nonzero(self.window)):
            out.append({
                "cell": "/".join(str(int(i)) for i in idx),
                "mass": float(self.masses[idx]),
                "density": float(self.masses[idx] / self.cell_volumes[idx]),
            })
        return out

    def to_csv(self, path) -> None:
        write_csv(path, self.rows(), ["cell", "mass", "density"])


# ── convexification ─────────────────────────────────────────────────


def _lower_envelope(axes: tuple[np.ndarray, ...], raw: np.ndarray) -> np.ndarray:
    if len(axes) == 1:
        return np.minimum(lower_envelope_1d(axes[0], raw), raw)

    X0, X1 = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([X0.ravel(), X1.ravel(), raw.ravel()])
    try:
        hull = spatial.ConvexHull(pts)
    except spatial.QhullError:
        # coplanar samples: the data is affine and already its own envelope
        return raw.copy()
    eq = hull.equations
    lower = eq[eq[:, 2] < -1e-12]
    a = -lower[:, 0] / lower[:, 2]
    b = -lower[:, 1] / lower[:, 2]
    c = -lower[:, 3] / lower[:, 2]
    flat = pts[:, :2]
    env = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], _PLANE_CHUNK):
        chunk = flat[start:start + _PLANE_CHUNK]
        env[start:start + _PLANE_CHUNK] = np.max(chunk[:, :1] * a + chunk[:, 1:] * b + c, axis=1)
    return np.minimum(env.reshape(raw.shape), raw)


def convexify(
    u_raw: np.ndarray | ConvexPotential,
    grid: Grid | None = None,
    points: np.ndarray | None = None,
) -> ConvexPotential:
    """Lower convex envelope of the samples and delta_conv = max(u_raw - envelope)."""
    if isinstance(u_raw, ConvexPotential):
        pot = u_raw
    elif grid is not None:
        pot = ConvexPotential.on_grid(grid, u_raw)
    elif points is not None:
        pot = ConvexPotential.on_points(points, u_raw)
    else:
        raise GridError("convexify needs a grid or sample points")
    if not np.all(np.isfinite(pot.raw)):
        raise GridError("potential has non-finite values")
    out = pot.convexified_copy()
    log.debug(f"[TRACE] convexify d={out.d} shape={out.shape} delta_conv={out.delta_conv:.3e}")
    return out


def lift_periodic(
    values: np.ndarray,
    grid: Grid,
    halo: int = 1,
    points: np.ndarray | None = None,
) -> ConvexPotential:
    """Unroll a torus potential using u(x + k) = u(x) + k.x + |k|^2/2 for lattice shifts k.

    `points` replaces the cell centres with sorted nonuniform 1D samples inside
    one period (Lagrangian cells).
    """
    if not grid.domain.is_periodic:
        raise GridError("only torus potentials can be lifted")
    if halo < 1:
        raise GridError("the periodic lift needs a halo of at least one cell")
    L = grid.domain.lengths

    if grid.d == 1:
        x = grid.axis_centers(0) if points is None else np.asarray(points, dtype=float)
        u = np.asarray(values, dtype=float).reshape(x.shape)
        n = x.size
        if halo > n:
            raise GridError("halo wider than one period")
        idx = np.arange(-halo, n + halo)
        base = np.mod(idx, n)
        k = np.floor_divide(idx, n) * L[0]
        xe = x[base] + k
        ue = u[base] + k * x[base] + 0.5 * k * k
        pot = ConvexPotential.on_points(xe, ue)
        return pot.model_copy(update={"halo": halo})

    if points is not None:
        raise GridError("nonuniform points are only supported in 1D")
    u = np.asarray(values, dtype=float).reshape(grid.shape)
    axes, bases, shifts = [], [], []
    for a in range(2):
        n = grid.n[a]
        idx = np.arange(-halo, n + halo)
        lo, _ = grid.domain.bounds[a]
        axes.append(lo + (idx + 0.5) * grid.h[a])
        bases.append(np.mod(idx, n))
        shifts.append(np.floor_divide(idx, n) * L[a])
    c0 = grid.axis_centers(0)[bases[0]]
    c1 = grid.axis_centers(1)[bases[1]]
    K0, K1 = np.meshgrid(shifts[0], shifts[1], indexing="ij")
    X0, X1 = np.meshgrid(c0, c1, indexing="ij")
    ue = u[np.ix_(bases[0], bases[1])] + K0 * X0 + K1 * X1 + 0.5 * (K0 * K0 + K1 * K1)
    return ConvexPotential(axes=tuple(axes), values=ue, raw=ue.copy(), halo=halo)


# ── measures ────────────────────────────────────────────────────────


def _resolve_window(u: ConvexPotential, window: np.ndarray | None) -> np.ndarray:
    mask = u.default_window() if window is None else np.asarray(window, dtype=bool)
    if mask.shape != u.shape:
        raise GridError(f"window shape {mask.shape} does not match potential {u.shape}")
    edge = np.zeros(u.shape, dtype=bool)
    for axis, n in enumerate(u.shape):
        sl = [slice(None)] * u.d
        sl[axis] = 0
        edge[tuple(sl)] = True
        sl[axis] = n - 1
        edge[tuple(sl)] = True
    if np.any(mask & edge):
        raise GridError("Monge-Ampère window touches the boundary of the sampled region")
    return mask


def _atom_threshold(masses: np.ndarray, vol: np.ndarray, window: np.ndarray) -> np.ndarray:
    dens = masses[window] / vol[window]
    ref = max(float(np.median(dens)) if dens.size else 0.0, 1e-8)
    return ATOM_FACTOR * ref * vol


def ma_measure_1d(u: ConvexPotential, window: np.ndarray | None = None) -> MongeAmpereMeasure:
    """Slope increments over Voronoi cells; consecutive heavy cells merge into one atom."""
    if u.d != 1:
        raise GridError("ma_measure_1d needs a 1D potential")
    if not u.convexified:
        u = convexify(u)
    mask = _resolve_window(u, window)
    x, v = u.axes[0], u.values
    slopes = np.diff(v) / np.diff(x)
    masses = np.zeros_like(x)
    masses[1:-1] = np.maximum(slopes[1:] - slopes[:-1], 0.0)
    masses[~mask] = 0.0
    vol = u.cell_volumes()

    heavy = mask & (masses >= _atom_threshold(masses, vol, mask))
    atoms: list[Atom] = []
    i = 0
    while i < x.size:
        if not heavy[i]:
            i += 1
            continue
        j = i
        while j + 1 < x.size and heavy[j + 1]:
            j += 1
        s_in, s_out = slopes[i - 1], slopes[j]
        if s_out > s_in:
            pos = (v[j] - v[i] + s_in * x[i] - s_out * x[j]) / (s_in - s_out)
        else:
            pos = 0.5 * (x[i] + x[j])
        atoms.append(Atom(point=(float(pos),), mass=float(np.sum(masses[i:j + 1]))))
        i = j + 1
    return MongeAmpereMeasure(masses=masses, window=mask, cell_volumes=vol, atoms=atoms)


def triangle_gradients(u: ConvexPotential) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the two triangles of every square, shape (n0-1, n1-1, 2) each.

    Squares with (i + j) even are cut along (i, j)-(i+1, j+1); odd squares along
    (i+1, j)-(i, j+1). The first triangle contains the (i+1, j) corner when even
    and the (i, j) corner when odd.
    """
    h0, h1 = u.spacing()
    v = u.values
    a, b, c, e = v[:-1, :-1], v[1:, :-1], v[:-1, 1:], v[1:, 1:]
    n0, n1 = a.shape
    even = (np.add.outer(np.arange(n0), np.arange(n1)) % 2) == 0

    t1 = np.where(even[..., None],
                  np.stack([(b - a) / h0, (e - b) / h1], axis=-1),
                  np.stack([(b - a) / h0, (c - a) / h1], axis=-1))
    t2 = np.where(even[..., None],
                  np.stack([(e - c) / h0, (c - a) / h1], axis=-1),
                  np.stack([(e - c) / h0, (e - b) / h1], axis=-1))
    return t1, t2


def vertex_gradients(u: ConvexPotential, i: int, j: int, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Gradients of every triangle incident to vertex (i, j)."""
    out = []
    # (square offset, corner of that square the vertex is): a=(0,0) b=(1,0) c=(0,1) e=(1,1)
    for si, sj, corner in ((i - 1, j - 1, "e"), (i, j - 1, "c"), (i - 1, j, "b"), (i, j, "a")):
        if si < 0 or sj < 0 or si >= t1.shape[0] or sj >= t1.shape[1]:
            continue
        even = (si + sj) % 2 == 0
        if even:
            members = {"a": (0, 1), "b": (0,), "c": (1,), "e": (0, 1)}[corner]
        else:
            members = {"a": (0,), "b": (0, 1), "c": (0, 1), "e": (1,)}[corner]
        for t in members:
            out.append((t1, t2)[t][si, sj])
    return np.asarray(out)


def ma_measure_2d(u: ConvexPotential, window: np.ndarray | None = None) -> MongeAmpereMeasure:
    """Hull area of the incident triangle gradients at every window vertex."""
    if u.d != 2:
        raise GridError("ma_measure_2d needs a 2D potential")
    if not u.convexified:
        u = convexify(u)
    mask = _resolve_window(u, window)
    t1, t2 = triangle_gradients(u)
    masses = np.zeros(u.shape)
    for i, j in zip(*np.nonzero(mask)):
        masses[i, j] = hull_area(vertex_gradients(u, int(i), int(j), t1, t2))
    vol = u.cell_volumes()
    heavy = mask & (masses >= _atom_threshold(masses, vol, mask))
    pts = u.points()
    atoms = [
        Atom(point=(float(pts[i, j, 0]), float(pts[i, j, 1])), mass=float(masses[i, j]))
        for i, j in zip(*np.nonzero(heavy))
    ]
    return MongeAmpereMeasure(masses=masses, window=mask, cell_volumes=vol, atoms=atoms)


def ma_measure(u: ConvexPotential, window: np.ndarray | None = None) -> MongeAmpereMeasure:
    return ma_measure_1d(u, window) if u.d == 1 else ma_measure_2d(u, window)


def ma_oracle_vertex_area(u: ConvexPotential, vertex: tuple[int, int], lattice: int = 200) -> float:
    """Subdifferential area at a vertex by exhaustive supporting-plane search over a slope lattice.

    The lattice spans the box of one-sided difference quotients around the
    vertex; a slope counts when its plane through the vertex stays below every
    sample.
    """
    if u.d != 2:
        raise GridError("the lattice oracle is two-dimensional")
    i, j = vertex
    v = u.values
    h0, h1 = u.spacing()
    if not (0 < i < u.shape[0] - 1 and 0 < j < u.shape[1] - 1):
        raise GridError("oracle vertex must be interior")
    lo0, hi0 = (v[i, j] - v[i - 1, j]) / h0, (v[i + 1, j] - v[i, j]) / h0
    lo1, hi1 = (v[i, j] - v[i, j - 1]) / h1, (v[i, j + 1] - v[i, j]) / h1
    if hi0 <= lo0 or hi1 <= lo1:
        return 0.0
    p0 = lo0 + (np.arange(lattice) + 0.5) * (hi0 - lo0) / lattice
    p1 = lo1 + (np.arange(lattice) + 0.5) * (hi1 - lo1) / lattice
    P0, P1 = np.meshgrid(p0, p1, indexing="ij")
    slopes = np.column_stack([P0.ravel(), P1.ravel()])

    pts = u.points().reshape(-1, 2)
    dx = pts - pts[i * u.shape[1] + j]
    gap = v.ravel() - v[i, j]
    scale = max(1.0, float(np.max(np.abs(v))))
    inside = np.ones(slopes.shape[0], dtype=bool)
    for start in range(0, slopes.shape[0], _PLANE_CHUNK):
        s = slopes[start:start + _PLANE_CHUNK]
        slack = gap[None, :] - s @ dx.T
        inside[start:start + _PLANE_CHUNK] = np.min(slack, axis=1) >= -1e-12 * scale
    cell = (hi0 - lo0) * (hi1 - lo1) / lattice**2
    return float(np.count_nonzero(inside) * cell)


# ── certification ───────────────────────────────────────────────────


class MaBoundReport(BaseModel):
    ok: bool
    lam: float
    worst_cell: tuple[int, ...] | None
    worst_ratio: float = Field(..., description="min mass / (lambda^d vol) over the window")
    slack: float = Field(..., description="Relative slack budget; ok means worst_ratio >= 1 - slack")
    delta_conv: float


class AmgmReport(BaseModel):
    ok: bool
    bound: float
    margin: float = Field(..., description="min over bumps of weighted-average Lap_h u minus the bound")
    slack: float
    worst_cell: tuple[int, ...] | None


def ma_lower_bound_check(
    u: ConvexPotential, lam: float, window: np.ndarray | None = None
) -> MaBoundReport:
    """Per-cell mass >= lambda^d vol - slack, slack = d delta_conv h^(d-2) + guard vol."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    if not u.convexified:
        u = convexify(u)
    measure = ma_measure(u, window)
    mask = measure.window
    d = u.d
    vol = measure.cell_volumes
    h = vol ** (1.0 / d)
    slack_mass = d * u.delta_conv * h ** (d - 2) + SLACK_GUARD * vol
    target = lam**d * vol

    cells = list(zip(*np.nonzero(mask)))
    if not cells:
        raise GridError("empty Monge-Ampère window")
    if lam == 0.0:
        deficit = (measure.masses + slack_mass)[mask]
        k = int(np.argmin(deficit))
        ok = bool(np.all(deficit >= 0.0))
        return MaBoundReport(ok=ok, lam=lam, worst_cell=tuple(int(c) for c in cells[k]),
                             worst_ratio=float("inf"), slack=0.0, delta_conv=u.delta_conv)

    ratio = measure.masses[mask] / target[mask]
    rel_slack = float(np.max(slack_mass[mask] / target[mask]))
    k = int(np.argmin(ratio))
    worst = float(ratio[k])
    ok = bool(np.all(measure.masses[mask] >= target[mask] - slack_mass[mask]))
    report = MaBoundReport(ok=ok, lam=lam, worst_cell=tuple(int(c) for c in cells[k]),
                           worst_ratio=worst, slack=rel_slack, delta_conv=u.delta_conv)
    log.debug(f"[CHECK] MA >= lambda^d: lam={lam:.6g} worst_ratio={worst:.6g} slack={rel_slack:.3e} ok={ok}")
    return report


def discrete_laplacian(values: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Three- or five-point Laplacian; zero on the outer ring."""
    lap = np.zeros_like(values)
    if len(axes) == 1:
        x = axes[0]
        slopes = np.diff(values) / np.diff(x)
        lap[1:-1] = (slopes[1:] - slopes[:-1]) / (0.5 * (x[2:] - x[:-2]))
        return lap
    h0 = float(axes[0][1] - axes[0][0])
    h1 = float(axes[1][1] - axes[1][0])
    v = values
    lap[1:-1, 1:-1] = (
        (v[2:, 1:-1] - 2.0 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h0**2
        + (v[1:-1, 2:] - 2.0 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h1**2
    )
    return lap


def _hat(width: int, d: int) -> np.ndarray:
    k = np.arange(-(width - 1), width)
    one = 1.0 - np.abs(k) / width
    return one if d == 1 else np.multiply.outer(one, one)


def weak_laplacian_margin(
    values: np.ndarray,
    axes: Sequence[np.ndarray],
    bound: float,
    window: np.ndarray,
    vol: np.ndarray | None = None,
    widths: Sequence[int] = BUMP_WIDTHS,
) -> tuple[float, tuple[int, ...] | None]:
    """min over tensor-hat bumps phi centred in the window of sum(vol phi Lap_h v)/sum(vol phi) - bound.

    Bumps whose support would reach the outer ring are skipped.
    """
    values = np.asarray(values, dtype=float)
    d = len(axes)
    if vol is None:
        vol = ConvexPotential(axes=tuple(axes), values=values, raw=values).cell_volumes()
    lap = discrete_laplacian(values, axes)
    best, where = np.inf, None
    for w in widths:
        K = _hat(w, d)
        num = ndimage.correlate(lap * vol, K, mode="constant", cval=0.0)
        den = ndimage.correlate(vol, K, mode="constant", cval=0.0)
        fits = np.zeros(values.shape, dtype=bool)
        fits[tuple(slice(w, n - w) for n in values.shape)] = True
        ok_mask = fits & window
        if not np.any(ok_mask):
            continue
        avg = np.where(ok_mask, num / np.where(den > 0.0, den, 1.0) - bound, np.inf)
        idx = np.unravel_index(int(np.argmin(avg)), avg.shape)
        if avg[idx] < best:
            best, where = float(avg[idx]), tuple(int(i) for i in idx)
    return best, where


def amgm_subharmonic_check(
    u: ConvexPotential, lam: float, window: np.ndarray | None = None
) -> AmgmReport:
    """Weak-form Lap u >= d lambda against hat bumps of widths 1, 2 and 3 cells."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    mask = u.default_window() if window is None else np.asarray(window, dtype=bool)
    d = u.d
    bound = d * lam
    vol = u.cell_volumes()
    margin, cell = weak_laplacian_margin(u.values, u.axes, bound, mask, vol)
    h_min = float(np.min(vol[mask])) ** (1.0 / d) if np.any(mask) else 1.0
    slack = 2.0 * d * u.delta_conv / h_min**2 + SLACK_GUARD * max(1.0, abs(bound))
    ok = bool(margin >= -slack)
    log.debug(f"[CHECK] weak Lap u >= {bound:.6g}: margin={margin:.3e} slack={slack:.3e} ok={ok}")
    return AmgmReport(ok=ok, bound=bound, margin=margin, slack=slack, worst_cell=cell)


__all__ = [
    "ConvexPotential",
    "Atom",
    "MongeAmpereMeasure",
    "MaBoundReport",
    "AmgmReport",
    "convexify",
    "lift_periodic",
    "ma_measure",
    "ma_measure_1d",
    "ma_measure_2d",
    "triangle_gradients",
    "vertex_gradients",
    "ma_oracle_vertex_area",
    "ma_lower_bound_check",
    "amgm_subharmonic_check",
    "weak_laplacian_margin",
    "discrete_laplacian",
]
