"""Flight integration between collisions.

Straight flights (zero force) are resolved exactly by ray casting.
Curved flights use an embedded Cash-Karp 4(5) pair with two safeguards:

* local error per step <= tol (adaptive step control);
* step arc length <= max(clearance - floor/2, floor/2), where clearance
  is the distance to the nearest scatterer surface.  A step shorter
  than the clearance cannot reach a scatterer, so tunneling is
  impossible while far; crossing-capable steps are at most floor/2
  long.  Every step is checked for a boundary crossing, including
  interior dips of the step chord (a faithful proxy at that length),
  and the crossing time is polished by bisection plus Newton on the
  signed circle distance.

This module is the plain-Python reference used for general force models
and as the behavioural contract for the jitted fast path in
``_kernels``; the two are cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import GrazingCollision, HorizonViolation, InputError, IntegrationFailure
from .forces import ForceModel, h_value
from .geometry import BoundaryCoord, Table, first_hit_straight

# geometry of the stepper
CLEARANCE_FLOOR = 1e-3   # below this clearance, steps stop shrinking
CLEARANCE_CAP = 0.5      # 3x3 neighbor scan is exact below this value
DEPART_OFFSET = 1e-11    # departure lifted off the surface along the normal
REFINE_TOL = 1e-12       # |signed circle distance| at arrival
H_MIN = 1e-14
GRAZING_COS = 1e-8

# Cash-Karp tableau
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_B5 = (37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771)
_B4 = (2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4)


@dataclass(frozen=True)
class FlowState:
    """Point of the 3D phase space in the (x, y, theta) chart."""

    x: float
    y: float
    theta: float
    p: float = 1.0


@dataclass(frozen=True)
class FlightResult:
    """Arrival data of one free flight (pre-reflection)."""

    tau: float
    bc: BoundaryCoord
    theta_in: float  # incoming direction angle at arrival
    dx: float        # unfolded displacement over the flight
    dy: float
    n_steps: int


def _rhs(model: ForceModel, x, y, th):
    p = model.speed(x, y, th)
    return p * math.cos(th), p * math.sin(th), p * h_value(model, x, y, th)


def _nearby_circles(table: Table, x0, y0, x1=None, y1=None):
    """Scatterer copies in the 3x3 cell neighborhood of a point or segment."""
    if x1 is None:
        x1, y1 = x0, y0
    ox_lo = math.floor(min(x0, x1)) - 1
    ox_hi = math.floor(max(x0, x1)) + 1
    oy_lo = math.floor(min(y0, y1)) - 1
    oy_hi = math.floor(max(y0, y1)) + 1
    out = []
    for i in range(table.n_discs):
        cx, cy = table.centers[i]
        r = table.radii[i]
        for ox in range(ox_lo, ox_hi + 1):
            for oy in range(oy_lo, oy_hi + 1):
                out.append((cx + ox, cy + oy, r, i))
    return out


def _clearance(table: Table, x, y) -> float:
    d = CLEARANCE_CAP
    for cx, cy, r, _ in _nearby_circles(table, x, y):
        d = min(d, math.hypot(x - cx, y - cy) - r)
    return d


def _ck_step(model, x, y, th, h):
    """One Cash-Karp step: new state, embedded error estimate, end derivative."""
    k = [(0.0, 0.0, 0.0)] * 6
    k[0] = _rhs(model, x, y, th)
    for i in range(1, 6):
        ax = x + h * sum(_A[i][j] * k[j][0] for j in range(i))
        ay = y + h * sum(_A[i][j] * k[j][1] for j in range(i))
        at = th + h * sum(_A[i][j] * k[j][2] for j in range(i))
        k[i] = _rhs(model, ax, ay, at)
    x5 = x + h * sum(_B5[j] * k[j][0] for j in range(6))
    y5 = y + h * sum(_B5[j] * k[j][1] for j in range(6))
    t5 = th + h * sum(_B5[j] * k[j][2] for j in range(6))
    ex = h * sum((_B5[j] - _B4[j]) * k[j][0] for j in range(6))
    ey = h * sum((_B5[j] - _B4[j]) * k[j][1] for j in range(6))
    et = h * sum((_B5[j] - _B4[j]) * k[j][2] for j in range(6))
    err = math.sqrt(ex * ex + ey * ey + et * et)
    return x5, y5, t5, err


def _rk4_eval(model, x, y, th, dt):
    """Classical RK4 sub-step; used to probe states inside an accepted step."""
    k1 = _rhs(model, x, y, th)
    k2 = _rhs(model, x + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1], th + 0.5 * dt * k1[2])
    k3 = _rhs(model, x + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1], th + 0.5 * dt * k2[2])
    k4 = _rhs(model, x + dt * k3[0], y + dt * k3[1], th + dt * k3[2])
    return (
        x + dt * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0,
        y + dt * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0,
        th + dt * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]) / 6.0,
    )


def integrate_flight(
    table: Table,
    model: ForceModel,
    start: FlowState,
    tol: float = 1e-10,
    refine_tol: float = REFINE_TOL,
    path_hook=None,
    force_curved: bool = False,
) -> FlightResult:
    """Advance from a departure state to the next boundary crossing.

    ``start`` must lie in the closure of the free domain with the
    velocity pointing into it.  For straight models this delegates to
    the exact ray cast.  ``path_hook(t, x, y, theta)``, when given, is
    called at every accepted step endpoint including departure and
    arrival.  ``force_curved`` pushes even straight models through the
    adaptive stepper (degeneracy testing).
    """
    if model.is_straight and not force_curved:
        t, bc = first_hit_straight(table, (start.x, start.y),
                                   (math.cos(start.theta), math.sin(start.theta)))
        if path_hook is not None:
            path_hook(0.0, start.x, start.y, start.theta)
            path_hook(t, start.x + t * math.cos(start.theta),
                      start.y + t * math.sin(start.theta), start.theta)
        return FlightResult(
            tau=t, bc=bc, theta_in=start.theta,
            dx=t * math.cos(start.theta), dy=t * math.sin(start.theta),
            n_steps=1,
        )
    return _integrate_curved(table, model, start, tol, refine_tol, path_hook)


def _integrate_curved(table, model, start, tol, refine_tol, path_hook):
    max_time = table.horizon_bound / model.p_min + 0.5
    max_steps = 200_000

    x, y, th = start.x, start.y, start.theta
    # lift off the surface so the departure disc needs no special casing
    d0 = _clearance(table, x, y)
    if d0 < DEPART_OFFSET:
        own = _closest_circle(table, x, y)
        nx = (x - own[0]) / math.hypot(x - own[0], y - own[1])
        ny = (y - own[1]) / math.hypot(x - own[0], y - own[1])
        x += DEPART_OFFSET * nx
        y += DEPART_OFFSET * ny

    if path_hook is not None:
        path_hook(0.0, x, y, th)

    t = 0.0
    h = CLEARANCE_FLOOR / 2.0
    n_acc = 0
    for _ in range(max_steps):
        clearance = _clearance(table, x, y)
        # a step of (clearance - floor/2) path length cannot reach a scatterer;
        # crossing-capable steps are at most floor/2 long
        h_geo = max(clearance - 0.5 * CLEARANCE_FLOOR, 0.5 * CLEARANCE_FLOOR) / model.p_max
        h = min(h, h_geo)
        if h < H_MIN:
            raise IntegrationFailure(f"step underflow at t={t:.6g}")

        x1, y1, th1, err = _ck_step(model, x, y, th, h)
        scale = tol * (1.0 + max(abs(x), abs(y), abs(th)))
        if err > scale:
            h *= max(0.2, 0.9 * (scale / err) ** 0.25)
            continue

        hit = _find_crossing(table, model, x, y, th, x1, y1, h, refine_tol)
        if hit is not None:
            dt_hit, hx, hy, hth, row = hit
            if path_hook is not None:
                path_hook(t + dt_hit, hx, hy, hth)
            return _arrival(table, start, t + dt_hit, hx, hy, hth, row, n_acc + 1)

        t += h
        n_acc += 1
        x, y, th = x1, y1, th1
        if path_hook is not None:
            path_hook(t, x, y, th)
        if t > max_time:
            raise HorizonViolation(
                f"no collision within {max_time:.3g} time units",
                origin=(start.x, start.y), direction=None,
            )
        if err > 0:
            h = min(h * min(50.0, 0.9 * (scale / err) ** 0.2), 0.25)
        else:
            h = min(h * 50.0, 0.25)
    raise IntegrationFailure("step limit exceeded")


def _closest_circle(table, x, y):
    best = None
    bd = math.inf
    for c in _nearby_circles(table, x, y):
        d = math.hypot(x - c[0], y - c[1]) - c[2]
        if d < bd:
            bd = d
            best = c
    return best


def _find_crossing(table, model, x0, y0, th0, x1, y1, h, refine_tol):
    """Earliest boundary crossing inside an accepted step, or None.

    Checks both step endpoints and the interior of the step chord; the
    chord is a faithful proxy because crossing steps are short (the
    clearance cap keeps long steps away from scatterers).
    """
    best = None
    for cx, cy, r, disc_id in _nearby_circles(table, x0, y0, x1, y1):
        ddx, ddy = cx - x0, cy - y0
        lim = h * model.p_max + r + 1e-6  # the path stays within h*p_max of x0
        if ddx * ddx + ddy * ddy > lim * lim:
            continue
        sig1 = math.hypot(x1 - cx, y1 - cy) - r
        bracket_hi = None
        if sig1 < 0.0:
            bracket_hi = h
        else:
            # chord dip: closest approach of the segment to the center
            ux, uy = x1 - x0, y1 - y0
            L2 = ux * ux + uy * uy
            if L2 > 0.0:
                u = (ddx * ux + ddy * uy) / L2
                if 0.0 < u < 1.0:
                    px, py = x0 + u * ux, y0 + u * uy
                    if math.hypot(px - cx, py - cy) < r - 1e-12:
                        bracket_hi = u * h
        if bracket_hi is None:
            continue
        dt_hit, hx, hy, hth = _refine_crossing(
            model, x0, y0, th0, cx, cy, r, bracket_hi, refine_tol)
        if dt_hit is not None and (best is None or dt_hit < best[0]):
            best = (dt_hit, hx, hy, hth, (cx, cy, r, disc_id))
    return best


def _refine_crossing(model, x0, y0, th0, cx, cy, r, hi, refine_tol):
    def sigma(dt):
        px, py, pth = _rk4_eval(model, x0, y0, th0, dt)
        return math.hypot(px - cx, py - cy) - r, px, py, pth

    s_hi, *_ = sigma(hi)
    if s_hi >= 0.0:
        return None, None, None, None  # chord dip too shallow on the true path
    lo = 0.0
    dt = hi
    px = py = pth = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        s_mid, px, py, pth = sigma(mid)
        dt = mid
        if abs(s_mid) <= refine_tol or hi - lo < 1e-10:
            break
        if s_mid > 0.0:
            lo = mid
        else:
            hi = mid
    for _ in range(10):
        s, px, py, pth = sigma(dt)
        if abs(s) <= refine_tol:
            break
        p = model.speed(px, py, pth)
        nx, ny = px - cx, py - cy
        nn = math.hypot(nx, ny)
        ds = p * (math.cos(pth) * nx + math.sin(pth) * ny) / nn
        if ds == 0.0:
            break
        dt = dt - s / ds
    _, px, py, pth = sigma(dt)
    return dt, px, py, pth


def _arrival(table, start, tau, hx, hy, hth, row, n_steps):
    cx, cy, r, disc_id = row
    alpha = math.atan2(hy - cy, hx - cx) % (2.0 * math.pi)
    bc = BoundaryCoord(int(disc_id), r * alpha)
    return FlightResult(
        tau=tau, bc=bc, theta_in=hth,
        dx=hx - start.x, dy=hy - start.y, n_steps=n_steps,
    )


def reflect(theta_in: float, normal_angle: float) -> tuple[float, float]:
    """Specular reflection at a boundary point with inward normal angle beta.

    Returns (outgoing direction angle, phi) where phi is the signed angle
    from the inward normal to the outgoing velocity, in [-pi/2, pi/2].
    Raises :class:`GrazingCollision` when the incoming ray is tangent
    within tolerance (|cos angle to normal| < 1e-8).
    """
    inc = math.cos(theta_in - normal_angle)
    if abs(inc) <= GRAZING_COS:
        raise GrazingCollision(f"tangential incidence (cos={inc:.3e})")
    if inc > 0.0:
        raise InputError("incoming direction does not point into the scatterer")
    theta_out = _wrap(2.0 * normal_angle + math.pi - theta_in)
    phi = _wrap(theta_out - normal_angle)
    return theta_out, phi


def _wrap(a: float) -> float:
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w < 0:
        w += 2.0 * math.pi
    return w - math.pi if w != 0.0 else math.pi
