"""
Exact one-dimensional optimal transport in quantile coordinates.

• density_to_quantile / quantile_to_density: piecewise-linear CDF inversion
• w2_quantile, w2_atoms: W2 through quantile functions
• w2_bruteforce: small-instance oracle (permutations or a transport LP)
• brenier_potential_from_map: u, psi, phi = psi^c from a monotone map
• circle_ot: transport on the circle through an optimal cut

Relies on:
    • numpy for the CDF arithmetic
    • scipy.integrate.cumulative_trapezoid for the Brenier potential
    • scipy.optimize.linprog (HiGHS) and minimize_scalar (golden section)
"""
from __future__ import annotations
import itertools
import logging
import math
from typing import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, optimize

from numerics.domain_grid import Grid
from numerics.entropy_profiles import GridDensity
from numerics.errors import GridError, OracleSizeError, QuantileError

log = logging.getLogger(__name__)

BRUTEFORCE_CAP = 32
PERMUTATION_CAP = 8
CUT_SCAN_NODES = 256
MONOTONE_TOL = 1e-12


class QuantileFunction(BaseModel):
    """Nondecreasing inverse CDF sampled at s_j = (j + 1/2)/N."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    lo: float = Field(..., description="Lower domain bound")
    hi: float = Field(..., description="Upper domain bound")
    support: tuple[float, float] | None = Field(
        None, description="Q(0+) and Q(1), the ends of the support, when known"
    )

    @model_validator(mode="after")
    def _check(self) -> "QuantileFunction":
        q = self.samples
        if q.ndim != 1 or q.size < 2:
            raise ValueError("quantile samples must be a 1D array with N >= 2")
        if np.any(np.diff(q) < -MONOTONE_TOL * max(1.0, self.hi - self.lo)):
            raise ValueError("quantile samples must be nondecreasing")
        span = self.hi - self.lo
        if q[0] < self.lo - 1e-9 * span or q[-1] > self.hi + 1e-9 * span:
            raise ValueError("quantile samples leave the domain")
        return self

    @property
    def N(self) -> int:
        return int(self.samples.size)

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        """(positions, cumulative mass) of the piecewise-linear quantile, ends included."""
        q = self.samples
        if self.support is not None:
            a, b = self.support
        else:
            a = max(self.lo, q[0] - 0.5 * (q[1] - q[0]))
            b = min(self.hi, q[-1] + 0.5 * (q[-1] - q[-2]))
        z = np.concatenate([[min(a, q[0])], q, [max(b, q[-1])]])
        s = np.concatenate([[0.0], self.nodes, [1.0]])
        return z, s


class TransportMap1D(BaseModel):
    """Images T(x_i) of source points; monotone (lifted on the circle)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    images: np.ndarray
    period: float | None = Field(None, description="Circle length when the map lives on Torus1")

    @property
    def points(self) -> np.ndarray:
        return self.grid.axis_centers(0)

    @property
    def displacement(self) -> np.ndarray:
        disp = self.images - self.points
        if self.period is not None:
            L = self.period
            disp = disp - L * np.round(disp / L)
        return disp

    def is_monotone(self) -> bool:
        scale = max(1.0, float(np.ptp(self.images)))
        return bool(np.all(np.diff(self.images) >= -MONOTONE_TOL * scale))


class PotentialPair(BaseModel):
    """Kantorovich potentials (psi on sources, phi on targets) and Brenier potentials."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    grad_psi: np.ndarray | None = Field(None, description="x - T(x) at the source points")
    period: float | None = None

    def shifted(self, c: float) -> "PotentialPair":
        """psi -> psi - c, phi -> phi + c (duality preserved)."""
        return self.model_copy(update={
            "psi": self.psi - c, "phi": self.phi + c, "u": self.u + c, "v": self.v - c,
        })


# ── CDF / quantile conversion ───────────────────────────────────────


def _cdf_edges(rho: GridDensity) -> tuple[np.ndarray, np.ndarray]:
    if rho.grid.d != 1:
        raise GridError("1D transport needs a one-dimensional grid")
    edges = rho.grid.axis_edges(0)
    cum = np.concatenate([[0.0], np.cumsum(rho.cell_masses)])
    cum /= cum[-1]
    return edges, cum


def inverse_cdf(rho: GridDensity, s: np.ndarray) -> np.ndarray:
    """Left-continuous inverse of the piecewise-linear CDF; s = 0 maps to the support start."""
    edges, cum = _cdf_edges(rho)
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    idx = np.searchsorted(cum, s, side="left")
    start = int(np.searchsorted(cum, 0.0, side="right"))
    idx = np.where(s <= 0.0, start, np.clip(idx, 1, cum.size - 1))
    cell = idx - 1
    width = cum[idx] - cum[cell]
    frac = np.where(width > 0.0, (s - cum[cell]) / np.where(width > 0.0, width, 1.0), 0.0)
    frac = np.where(s <= 0.0, 0.0, np.clip(frac, 0.0, 1.0))
    return edges[cell] + frac * (edges[cell + 1] - edges[cell])


def cdf_at(rho: GridDensity, x: np.ndarray) -> np.ndarray:
    edges, cum = _cdf_edges(rho)
    return np.interp(x, edges, cum)


def density_to_quantile(rho: GridDensity, N: int | None = None) -> QuantileFunction:
    """Sample the inverse CDF at midpoint nodes (default N = 4 cells)."""
    N = 4 * rho.grid.n[0] if N is None else int(N)
    if N < 2:
        raise QuantileError("quantile resolution must be at least 2")
    s = (np.arange(N) + 0.5) / N
    lo, hi = rho.grid.domain.bounds[0]
    ends = inverse_cdf(rho, np.array([0.0, 1.0]))
    return QuantileFunction(
        samples=inverse_cdf(rho, s), lo=lo, hi=hi, support=(float(ends[0]), float(ends[1]))
    )


def quantile_to_density(Q: QuantileFunction, grid: Grid) -> GridDensity:
    """Cell averages of the density whose CDF interpolates the quantile knots."""
    z, s = Q.knots()
    z = np.maximum.accumulate(z)
    edges = grid.axis_edges(0)
    F = np.interp(edges, z, s, left=0.0, right=1.0)
    masses = np.maximum(np.diff(F), 0.0)
    return GridDensity.normalized(grid, masses / grid.cell_volume)


# ── distances ───────────────────────────────────────────────────────


def w2_quantile(Q1: QuantileFunction, Q2: QuantileFunction) -> float:
    """Root mean squared quantile difference."""
    if Q1.N != Q2.N:
        raise QuantileError(f"quantile resolutions differ: {Q1.N} vs {Q2.N}")
    diff = Q1.samples - Q2.samples
    return float(np.sqrt(np.mean(diff * diff)))


def _as_atoms(points: np.ndarray, weights: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(x),) or np.any(w < 0.0):
        raise ValueError("weights must be nonnegative, one per atom")
    return x, w


def w2_atoms(x1: np.ndarray, w1: np.ndarray, x2: np.ndarray, w2: np.ndarray) -> float:
    """Exact W2 between two weighted point sets on the line via their step quantiles."""
    o1, o2 = np.argsort(x1), np.argsort(x2)
    a, wa = np.asarray(x1, float)[o1], np.asarray(w1, float)[o1] / np.sum(w1)
    b, wb = np.asarray(x2, float)[o2], np.asarray(w2, float)[o2] / np.sum(w2)
    cuts = np.union1d(np.cumsum(wa)[:-1], np.cumsum(wb)[:-1])
    cuts = np.concatenate([[0.0], cuts[(cuts > 0.0) & (cuts < 1.0)], [1.0]])
    mid = 0.5 * (cuts[:-1] + cuts[1:])
    ia = np.minimum(np.searchsorted(np.cumsum(wa), mid, side="left"), a.size - 1)
    ib = np.minimum(np.searchsorted(np.cumsum(wb), mid, side="left"), b.size - 1)
    return float(np.sqrt(np.sum(np.diff(cuts) * (a[ia] - b[ib]) ** 2)))


def w2_bruteforce(
    points1: np.ndarray,
    points2: np.ndarray,
    weights1: np.ndarray | None = None,
    weights2: np.ndarray | None = None,
) -> float:
    """Exact discrete W2 on small instances, independent of any 1D ordering argument.

    Equal-size uniform instances (up to 8 atoms) enumerate every assignment;
    everything else solves the transport linear program.
    """
    x, a = _as_atoms(points1, weights1)
    y, b = _as_atoms(points2, weights2)
    if len(x) > BRUTEFORCE_CAP or len(y) > BRUTEFORCE_CAP:
        raise OracleSizeError(f"brute-force oracle is capped at {BRUTEFORCE_CAP} atoms per side")
    if not math.isclose(a.sum(), b.sum(), rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError("atom lists must carry equal total mass")
    cost = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)

    uniform = len(x) == len(y) and np.allclose(a, a[0]) and np.allclose(b, a[0])
    if uniform and len(x) <= PERMUTATION_CAP:
        n = len(x)
        rows = np.arange(n)
        best = min(cost[rows, list(p)].sum() for p in itertools.permutations(range(n)))
        return float(math.sqrt(max(best * a[0], 0.0)))

    n1, n2 = len(x), len(y)
    A_eq = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        A_eq[i, i * n2:(i + 1) * n2] = 1.0
    for j in range(n2):
        A_eq[n1 + j, j::n2] = 1.0
    res = optimize.linprog(
        cost.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs"
    )
    if res.status != 0:
        raise QuantileError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x, 0.0)
    return float(math.sqrt(max(float(plan @ cost.ravel()), 0.0)))


# ── potentials ──────────────────────────────────────────────────────


def _pair_cost(x: np.ndarray, y: np.ndarray, period: float | None) -> np.ndarray:
    diff = x[:, None] - y[None, :]
    if period is not None:
        diff = diff - period * np.round(diff / period)
    return 0.5 * diff * diff


def c_transform(psi: np.ndarray, x: np.ndarray, y: np.ndarray, period: float | None = None) -> np.ndarray:
    """psi^c(y) = min_x |x - y|^2/2 - psi(x) by exhaustive search over the samples."""
    return np.min(_pair_cost(x, y, period) - psi[:, None], axis=0)


def brenier_potential_from_map(T: TransportMap1D) -> PotentialPair:
    """u = integral of T from the left edge (u(lo) = 0), psi = x^2/2 - u, phi = psi^c."""
    if not T.is_monotone():
        raise QuantileError("transport map is not monotone")
    x = T.points
    lo = T.grid.domain.bounds[0][0]
    head = (x[0] - lo) * T.images[0]
    u = head + integrate.cumulative_trapezoid(T.images, x, initial=0.0)
    psi = 0.5 * x * x - u
    phi = c_transform(psi, x, x, T.period)
    v = 0.5 * x * x - phi
    return PotentialPair(
        x=x, y=x.copy(), psi=psi, phi=phi, u=u, v=v, grad_psi=x - T.images, period=T.period
    )


def duality_gaps(pair: PotentialPair, T: TransportMap1D) -> tuple[float, float]:
    """(max violation of psi + phi <= c, max |psi + phi - c| on the graph of T)."""
    c = _pair_cost(pair.x, pair.y, pair.period)
    violation = float(np.max(pair.psi[:, None] + pair.phi[None, :] - c))
    targets = T.images
    if pair.period is not None:
        lo = T.grid.domain.bounds[0][0]
        targets = lo + np.mod(targets - lo, pair.period)
    phi_T = np.interp(targets, pair.y, pair.phi)
    graph = pair.psi + phi_T - np.diag(_pair_cost(pair.x, targets, pair.period))
    return violation, float(np.max(np.abs(graph)))


def kantorovich_value(pair: PotentialPair, rho: GridDensity, mu: GridDensity) -> float:
    """int psi d rho + int phi d mu."""
    return float(np.sum(pair.psi * rho.cell_masses) + np.sum(pair.phi * mu.cell_masses))


def monotone_map(rho: GridDensity, mu: GridDensity) -> TransportMap1D:
    """T = Q_mu o F_rho at the cell centres of rho."""
    x = rho.grid.axis_centers(0)
    return TransportMap1D(grid=rho.grid, images=inverse_cdf(mu, cdf_at(rho, x)))


def pushforward_density(T: TransportMap1D, rho: GridDensity, target: Grid) -> GridDensity:
    """Image of rho under T, with each cell's mass spread along its image segment."""
    edges = T.grid.axis_edges(0)
    img = np.interp(edges, T.points, T.images)
    cum = np.concatenate([[0.0], np.cumsum(rho.cell_masses)])
    img = np.maximum.accumulate(img)
    F = np.interp(target.axis_edges(0), img, cum / cum[-1], left=0.0, right=1.0)
    return GridDensity.normalized(target, np.maximum(np.diff(F), 0.0) / target.cell_volume)


# ── circle transport ────────────────────────────────────────────────


class CircleTransport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    transport: TransportMap1D
    potentials: PotentialPair
    cost: float = Field(..., description="Squared W2 on the circle")
    theta: float = Field(..., description="Optimal cut in [0, 1)")


def lifted_inverse_cdf(mu: GridDensity, s: np.ndarray) -> np.ndarray:
    """Inverse CDF extended to all of R by Q(s + 1) = Q(s) + L."""
    lo, hi = mu.grid.domain.bounds[0]
    k = np.floor(s)
    return inverse_cdf(mu, s - k) + k * (hi - lo)


def _cut_cost(
    q: np.ndarray, target: Callable[[np.ndarray], np.ndarray], s: np.ndarray, theta: float, L: float
) -> tuple[float, float]:
    disp = q - target(s + theta)
    shift = L * np.round(np.mean(disp) / L)
    disp = disp - shift
    return float(np.mean(disp * disp)), float(shift)


def cut_for_quantiles(
    q: np.ndarray, target: Callable[[np.ndarray], np.ndarray], L: float
) -> tuple[float, float, float]:
    """(theta in [0, 1), squared cost, lift shift) for lifted source quantiles q at midpoint nodes.

    The cost mean_j (q_j - target(s_j + theta) - shift)^2 is scanned on a
    uniform grid of cuts and refined by golden section around the best node.
    """
    N = q.size
    s = (np.arange(N) + 0.5) / N
    thetas = np.arange(CUT_SCAN_NODES) / CUT_SCAN_NODES
    costs = np.array([_cut_cost(q, target, s, th, L)[0] for th in thetas])
    i = int(np.argmin(costs))
    theta, best = float(thetas[i]), float(costs[i])
    step = 1.0 / CUT_SCAN_NODES
    try:
        res = optimize.minimize_scalar(
            lambda th: _cut_cost(q, target, s, th, L)[0],
            bracket=(theta - step, theta, theta + step), method="golden", options={"xtol": 1e-12},
        )
        if res.fun < best:
            theta = float(res.x)
    except ValueError:
        # flat cost around the scan minimum (e.g. uniform data): keep the node
        pass
    theta %= 1.0
    cost, shift = _cut_cost(q, target, s, theta, L)
    return theta, cost, shift


def optimal_cut(rho: GridDensity, mu: GridDensity, N: int | None = None) -> tuple[float, float, float]:
    """(theta, squared cost, lift shift) minimizing the unrolled quantile cost."""
    if not rho.grid.domain.is_periodic:
        raise GridError("circle transport needs a Torus1 grid")
    lo, hi = rho.grid.domain.bounds[0]
    N = 4 * rho.grid.n[0] if N is None else int(N)
    s = (np.arange(N) + 0.5) / N
    return cut_for_quantiles(inverse_cdf(rho, s), lambda t: lifted_inverse_cdf(mu, t), hi - lo)


def circle_ot(rho: GridDensity, mu: GridDensity, N: int | None = None) -> CircleTransport:
    """Optimal transport on Torus1 by scanning and refining the cut parameter."""
    if rho.grid.shape != mu.grid.shape:
        raise GridError("circle transport needs both densities on the same grid")
    theta, cost, shift = optimal_cut(rho, mu, N)
    lo, hi = rho.grid.domain.bounds[0]
    L = hi - lo
    x = rho.grid.axis_centers(0)
    images = lifted_inverse_cdf(mu, cdf_at(rho, x) + theta) + shift
    T = TransportMap1D(grid=rho.grid, images=images, period=L)
    pair = brenier_potential_from_map(T)
    log.debug(f"[TRACE] circle cut theta={theta:.6f} cost={cost:.3e}")
    return CircleTransport(transport=T, potentials=pair, cost=cost, theta=theta)


__all__ = [
    "QuantileFunction",
    "TransportMap1D",
    "PotentialPair",
    "CircleTransport",
    "inverse_cdf",
    "cdf_at",
    "density_to_quantile",
    "quantile_to_density",
    "w2_quantile",
    "w2_atoms",
    "w2_bruteforce",
    "c_transform",
    "brenier_potential_from_map",
    "duality_gaps",
    "kantorovich_value",
    "monotone_map",
    "pushforward_density",
    "lifted_inverse_cdf",
    "cut_for_quantiles",
    "optimal_cut",
    "circle_ot",
]
