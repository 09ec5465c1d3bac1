"""Billiard table on the unit torus with circular scatterers.

The table is the unit square with periodic boundary conditions minus a
union of disjoint open discs.  All collision detection for straight
flights is exact: rays are unfolded over the periodic lattice and
intersected with scatterer circles by solving the quadratic directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonViolation, InputError

# Quadratic discriminants below this are treated as grazing misses.
TANGENCY_TOL = 1e-14
# Minimum advance along a ray; rejects the departure point itself.
MIN_RAY_T = 1e-12


def _torus_delta(a: np.ndarray, b: np.ndarray) -> float:
    """Shortest displacement length between two points on the unit torus."""
    d = np.abs(np.asarray(a, float) - np.asarray(b, float))
    d = np.minimum(d, 1.0 - d)
    return float(np.hypot(d[0], d[1]))


@dataclass(frozen=True)
class Disc:
    """Circular scatterer: center in [0,1)^2, radius in (0, 0.5)."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        cx, cy = self.center
        if not (0.0 <= cx < 1.0 and 0.0 <= cy < 1.0):
            raise InputError(f"disc center {self.center} outside [0,1)^2")
        if not (0.0 < self.radius < 0.5):
            raise InputError(f"disc radius {self.radius} not in (0, 0.5)")

    @property
    def circumference(self) -> float:
        return 2.0 * math.pi * self.radius


@dataclass(frozen=True)
class BoundaryCoord:
    """Point of the scatterer boundary: disc index plus arclength.

    ``s`` is measured counterclockwise from the +x point of the circle
    and wraps modulo the circumference.
    """

    disc_id: int
    s: float


@dataclass(frozen=True)
class Table:
    """Immutable scatterer layout plus precomputed lattice unfolding.

    ``horizon_bound`` is the configured length L of Assumption-C type:
    no straight free flight may exceed it.  Construction verifies that
    all discs (including their periodic copies) are pairwise disjoint.
    """

    discs: tuple[Disc, ...]
    horizon_bound: float = 2.0

    # filled in __post_init__; kernel-ready arrays
    centers: np.ndarray = field(init=False, repr=False, compare=False)
    radii: np.ndarray = field(init=False, repr=False, compare=False)
    s_offsets: np.ndarray = field(init=False, repr=False, compare=False)
    unfolded: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        discs = tuple(self.discs)
        object.__setattr__(self, "discs", discs)
        if self.horizon_bound <= 0:
            raise InputError("horizon_bound must be positive")
        for i, a in enumerate(discs):
            for j, b in enumerate(discs):
                if j <= i:
                    continue
                gap = _torus_delta(a.center, b.center) - a.radius - b.radius
                if gap <= 0:
                    raise InputError(
                        f"discs {i} and {j} overlap across the torus (gap {gap:.3g})"
                    )
        # self-overlap across periodic copies is excluded by radius < 0.5
        centers = np.array([d.center for d in discs], dtype=np.float64).reshape(-1, 2)
        radii = np.array([d.radius for d in discs], dtype=np.float64)
        circ = 2.0 * np.pi * radii
        s_offsets = np.concatenate(([0.0], np.cumsum(circ)))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "s_offsets", s_offsets)
        object.__setattr__(self, "unfolded", self._unfold(self.horizon_bound))

    def _unfold(self, length: float) -> np.ndarray:
        """Circle copies reachable by a ray of ``length`` from the unit cell.

        Rows are (cx, cy, r, disc_id, dmin), sorted by dmin = the distance
        from the inflated unit cell (cell grown by the largest radius,
        covering every possible departure point) to the circle surface.
        dmin lower-bounds any hit time, enabling early exit in scans.
        Offsets run over |o| <= ceil(L)+1, pruned to copies within
        ``length`` + radius of the inflated cell.
        """
        if len(self.discs) == 0:
            return np.zeros((0, 5), dtype=np.float64)
        rmax = max(d.radius for d in self.discs)
        m = int(math.ceil(length)) + 1
        rows = []
        for ox in range(-m, m + 1):
            for oy in range(-m, m + 1):
                for i, d in enumerate(self.discs):
                    cx = d.center[0] + ox
                    cy = d.center[1] + oy
                    # distance from the copy center to the inflated unit square
                    qx = min(max(cx, -rmax), 1.0 + rmax)
                    qy = min(max(cy, -rmax), 1.0 + rmax)
                    dmin = max(math.hypot(cx - qx, cy - qy) - d.radius, 0.0)
                    if dmin <= length + 1e-9:
                        rows.append((cx, cy, d.radius, float(i), dmin))
        arr = np.array(rows, dtype=np.float64).reshape(-1, 5)
        return arr[np.argsort(arr[:, 4], kind="stable")]

    @property
    def n_discs(self) -> int:
        return len(self.discs)

    @property
    def boundary_length(self) -> float:
        return float(self.s_offsets[-1])

    def flatten_arclength(self, bc: BoundaryCoord) -> float:
        """Global scalar arclength: concatenation of discs in order."""
        d = self.discs[bc.disc_id]
        return float(self.s_offsets[bc.disc_id] + (bc.s % d.circumference))


def domain_area(table: Table) -> float:
    """Free area of the table: 1 minus the scatterer area."""
    return float(1.0 - np.pi * np.sum(table.radii**2))


def boundary_point(table: Table, bc: BoundaryCoord) -> tuple[np.ndarray, np.ndarray]:
    """Position (wrapped to [0,1)^2) and inward normal at a boundary coordinate.

    The inward normal points from the circle into the free domain, i.e.
    away from the disc center.
    """
    if not (0 <= bc.disc_id < table.n_discs):
        raise InputError(f"disc_id {bc.disc_id} out of range")
    d = table.discs[bc.disc_id]
    alpha = (bc.s % d.circumference) / d.radius
    normal = np.array([math.cos(alpha), math.sin(alpha)])
    pos = (np.asarray(d.center) + d.radius * normal) % 1.0
    return pos, normal


def boundary_point_raw(table: Table, bc: BoundaryCoord) -> tuple[float, float, float]:
    """Unwrapped boundary position plus normal angle; internal chart for flights."""
    d = table.discs[bc.disc_id]
    alpha = (bc.s % d.circumference) / d.radius
    return (
        d.center[0] + d.radius * math.cos(alpha),
        d.center[1] + d.radius * math.sin(alpha),
        alpha,
    )


def first_hit_straight(
    table: Table, origin, direction
) -> tuple[float, BoundaryCoord]:
    """First scatterer hit of a straight ray, exact over the periodic lattice.

    Returns the flight time (= length, unit parameter) and the boundary
    coordinate of the hit.  Raises :class:`HorizonViolation` when no
    scatterer is met within ``table.horizon_bound``.
    """
    px, py = float(origin[0]), float(origin[1])
    dx, dy = float(direction[0]), float(direction[1])
    u = table.unfolded
    t, idx = _ray_scan(px, py, dx, dy, u)
    if idx < 0 or t > table.horizon_bound + 1e-9:
        raise HorizonViolation(
            f"no scatterer within L={table.horizon_bound} along ray",
            origin=(px, py),
            direction=(dx, dy),
        )
    disc_id = int(u[idx, 3])
    hx = px + t * dx
    hy = py + t * dy
    alpha = math.atan2(hy - u[idx, 1], hx - u[idx, 0]) % (2.0 * math.pi)
    s = table.discs[disc_id].radius * alpha
    return t, BoundaryCoord(disc_id, s)


def _ray_scan(px, py, dx, dy, unfolded) -> tuple[float, int]:
    """Smallest positive root over all unfolded circles (numpy, non-hot path)."""
    if unfolded.shape[0] == 0:
        return math.inf, -1
    rx = unfolded[:, 0] - px
    ry = unfolded[:, 1] - py
    b = rx * dx + ry * dy
    c = rx * rx + ry * ry - unfolded[:, 2] ** 2
    disc = b * b - c
    ok = (b > 0.0) & (disc > TANGENCY_TOL)
    t = np.where(ok, b - np.sqrt(np.where(ok, disc, 0.0)), math.inf)
    t = np.where(t > MIN_RAY_T, t, math.inf)
    idx = int(np.argmin(t))
    return float(t[idx]), (idx if math.isfinite(t[idx]) else -1)


@dataclass(frozen=True)
class HorizonReport:
    """Sampling evidence for the finite-horizon property (not a proof)."""

    max_free_path: float
    bound: float
    passes: bool
    n_rays: int
    violating_ray: tuple[tuple[float, float], tuple[float, float]] | None


def check_finite_horizon(
    table: Table,
    L: float | None = None,
    n_origins: int = 32,
    n_directions: int = 64,
    rng_seed: int = 0,
) -> HorizonReport:
    """Sample free chords through the table and compare against ``L``.

    Each sampled (origin, direction) contributes the full free chord
    through the origin (forward plus backward free flight), which is the
    quantity the finite-horizon property bounds.  Uses a grid of origins
    and directions plus an equal number of stratified random samples.
    A pass is evidence only; corridors thinner than the sampling may
    escape detection.
    """
    if n_origins < 1 or n_directions < 1:
        raise InputError("n_origins and n_directions must be >= 1")
    bound = table.horizon_bound if L is None else float(L)
    # scan distance > bound so violations are measurable
    probe = Table(table.discs, horizon_bound=max(4.0 * bound, bound + 2.0))
    u = probe.unfolded

    rng = np.random.default_rng(rng_seed)
    g = int(math.ceil(math.sqrt(n_origins)))
    xs = (np.arange(g) + 0.5) / g
    grid = np.array([(x, y) for x in xs for y in xs])
    rand = rng.random((n_origins, 2))
    origins = np.vstack([grid, rand])

    angles_grid = np.arange(n_directions) * (math.pi / n_directions)
    angles_rand = rng.random(n_directions) * math.pi
    angles = np.concatenate([angles_grid, angles_rand])

    max_free = 0.0
    worst = None
    n_rays = 0
    for ox, oy in origins:
        if _inside_scatterer(table, ox, oy):
            continue
        for a in angles:
            dx, dy = math.cos(a), math.sin(a)
            t_fwd, i_fwd = _ray_scan(ox, oy, dx, dy, u)
            t_bwd, i_bwd = _ray_scan(ox, oy, -dx, -dy, u)
            n_rays += 1
            if i_fwd < 0 or i_bwd < 0:
                chord = math.inf
            else:
                chord = t_fwd + t_bwd
            if chord > max_free:
                max_free = chord
                worst = ((float(ox), float(oy)), (dx, dy))
    passes = max_free < bound
    return HorizonReport(
        max_free_path=max_free,
        bound=bound,
        passes=passes,
        n_rays=n_rays,
        violating_ray=None if passes else worst,
    )


def _inside_scatterer(table: Table, x: float, y: float) -> bool:
    for ox in (-1.0, 0.0, 1.0):
        for oy in (-1.0, 0.0, 1.0):
            d2 = (table.centers[:, 0] + ox - x) ** 2 + (table.centers[:, 1] + oy - y) ** 2
            if np.any(d2 < table.radii**2):
                return True
    return False


def reference_table() -> Table:
    """Two-disc layout used throughout the test suite and default configs."""
    return Table(
        discs=(Disc(center=(0.0, 0.0), radius=0.40), Disc(center=(0.5, 0.5), radius=0.20)),
        horizon_bound=2.0,
    )
