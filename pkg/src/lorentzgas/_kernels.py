"""Jitted hot loops: ray casting, curved flights, map iteration, flow sampling.

Every routine here is a performance twin of the plain-Python reference
in :mod:`lorentzgas.integrate` / :mod:`lorentzgas.geometry`, specialized
to zero/thermostat forces.  Constants must stay in sync with those
modules; the test suite cross-checks the two paths.

Layouts:
* ``u``        unfolded circles, rows (cx, cy, r, disc_id, dmin) sorted by
               dmin = lower bound on the hit distance from the unit cell.
* ``centers``  (k, 2) base disc centers, ``radii`` (k,).
* collision coordinates travel as parallel arrays (disc, s, phi).

Status codes: 0 ok, 1 horizon violation, 2 integration failure.
"""

import math

import numpy as np
from numba import njit

TANGENCY_TOL = 1e-14
MIN_RAY_T = 1e-12
CLEARANCE_FLOOR = 1e-3
CLEARANCE_CAP = 0.5
DEPART_OFFSET = 1e-11
H_MIN = 1e-14
GRAZING_COS = 1e-8
MAX_STEPS = 200_000
SAMPLE_BUF = 4096

TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True, inline="always")
def _wrap_pi(a):
    """Wrap angle to (-pi, pi]."""
    w = (a + math.pi) % TWO_PI
    return w - math.pi if w != 0.0 else math.pi


@njit(cache=True, nogil=True)
def ray_hit(px, py, dx, dy, u):
    """Smallest positive intersection parameter over the unfolded circles."""
    best_t = np.inf
    best_i = -1
    for i in range(u.shape[0]):
        if u[i, 4] >= best_t:
            break
        rx = u[i, 0] - px
        ry = u[i, 1] - py
        b = rx * dx + ry * dy
        if b <= 0.0:
            continue
        c = rx * rx + ry * ry - u[i, 2] * u[i, 2]
        disc = b * b - c
        if disc < TANGENCY_TOL:
            continue
        tt = b - math.sqrt(disc)
        if MIN_RAY_T < tt < best_t:
            best_t = tt
            best_i = i
    return best_t, best_i


@njit(cache=True, nogil=True, inline="always")
def _clearance(x, y, centers, radii):
    fx = math.floor(x)
    fy = math.floor(y)
    d = CLEARANCE_CAP
    for i in range(centers.shape[0]):
        r = radii[i]
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                ddx = x - centers[i, 0] - fx - ox
                ddy = y - centers[i, 1] - fy - oy
                q = ddx * ddx + ddy * ddy
                lim = d + r
                if q < lim * lim:
                    dd = math.sqrt(q) - r
                    if dd < d:
                        d = dd
    return d


# Cash-Karp 4(5) coefficients
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0
_A51, _A52, _A53, _A54 = -11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0
_A61, _A62, _A63, _A64, _A65 = (
    1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0,
    44275.0 / 110592.0, 253.0 / 4096.0,
)
_B51, _B53, _B54, _B56 = 37.0 / 378.0, 250.0 / 621.0, 125.0 / 594.0, 512.0 / 1771.0
_E1 = 37.0 / 378.0 - 2825.0 / 27648.0
_E3 = 250.0 / 621.0 - 18575.0 / 48384.0
_E4 = 125.0 / 594.0 - 13525.0 / 55296.0
_E5 = -277.0 / 14336.0
_E6 = 512.0 / 1771.0 - 1.0 / 4.0


@njit(cache=True, nogil=True, inline="always")
def _ck_step(x, y, th, h, eps, delta, cd, sd):
    """Cash-Karp step for x'=cos th, y'=sin th, th' = -eps sin(th - delta).

    cd, sd = cos(delta), sin(delta), hoisted by the caller so each stage
    needs two trig evaluations (sin(th - delta) expands through them).
    """
    k1x = math.cos(th)
    k1y = math.sin(th)
    k1t = -eps * (k1y * cd - k1x * sd)

    t2 = th + h * _A21 * k1t
    k2x = math.cos(t2)
    k2y = math.sin(t2)
    k2t = -eps * (k2y * cd - k2x * sd)

    t3 = th + h * (_A31 * k1t + _A32 * k2t)
    k3x = math.cos(t3)
    k3y = math.sin(t3)
    k3t = -eps * (k3y * cd - k3x * sd)

    t4 = th + h * (_A41 * k1t + _A42 * k2t + _A43 * k3t)
    k4x = math.cos(t4)
    k4y = math.sin(t4)
    k4t = -eps * (k4y * cd - k4x * sd)

    t5 = th + h * (_A51 * k1t + _A52 * k2t + _A53 * k3t + _A54 * k4t)
    k5x = math.cos(t5)
    k5y = math.sin(t5)
    k5t = -eps * (k5y * cd - k5x * sd)

    t6 = th + h * (_A61 * k1t + _A62 * k2t + _A63 * k3t + _A64 * k4t + _A65 * k5t)
    k6x = math.cos(t6)
    k6y = math.sin(t6)
    k6t = -eps * (k6y * cd - k6x * sd)

    x1 = x + h * (_B51 * k1x + _B53 * k3x + _B54 * k4x + _B56 * k6x)
    y1 = y + h * (_B51 * k1y + _B53 * k3y + _B54 * k4y + _B56 * k6y)
    th1 = th + h * (_B51 * k1t + _B53 * k3t + _B54 * k4t + _B56 * k6t)

    ex = h * (_E1 * k1x + _E3 * k3x + _E4 * k4x + _E5 * k5x + _E6 * k6x)
    ey = h * (_E1 * k1y + _E3 * k3y + _E4 * k4y + _E5 * k5y + _E6 * k6y)
    et = h * (_E1 * k1t + _E3 * k3t + _E4 * k4t + _E5 * k5t + _E6 * k6t)
    err = math.sqrt(ex * ex + ey * ey + et * et)
    return x1, y1, th1, err


@njit(cache=True, nogil=True, inline="always")
def _rk4_eval(x, y, th, dt, eps, delta):
    cd = math.cos(delta)
    sd = math.sin(delta)
    k1x = math.cos(th)
    k1y = math.sin(th)
    k1t = -eps * (k1y * cd - k1x * sd)
    t2 = th + 0.5 * dt * k1t
    k2x = math.cos(t2)
    k2y = math.sin(t2)
    k2t = -eps * (k2y * cd - k2x * sd)
    t3 = th + 0.5 * dt * k2t
    k3x = math.cos(t3)
    k3y = math.sin(t3)
    k3t = -eps * (k3y * cd - k3x * sd)
    t4 = th + dt * k3t
    k4x = math.cos(t4)
    k4y = math.sin(t4)
    k4t = -eps * (k4y * cd - k4x * sd)
    return (
        x + dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0,
        y + dt * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0,
        th + dt * (k1t + 2.0 * k2t + 2.0 * k3t + k4t) / 6.0,
    )


@njit(cache=True, nogil=True)
def _refine_crossing(x0, y0, th0, cx, cy, r, hi, refine_tol, eps, delta):
    """Bisection plus Newton for the crossing time inside one step."""
    px, py, pth = _rk4_eval(x0, y0, th0, hi, eps, delta)
    s_hi = math.hypot(px - cx, py - cy) - r
    if s_hi >= 0.0:
        return -1.0, 0.0, 0.0, 0.0
    lo = 0.0
    dt = hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        px, py, pth = _rk4_eval(x0, y0, th0, mid, eps, delta)
        s_mid = math.hypot(px - cx, py - cy) - r
        dt = mid
        if abs(s_mid) <= refine_tol or hi - lo < 1e-10:
            break
        if s_mid > 0.0:
            lo = mid
        else:
            hi = mid
    for _ in range(10):
        px, py, pth = _rk4_eval(x0, y0, th0, dt, eps, delta)
        s = math.hypot(px - cx, py - cy) - r
        if abs(s) <= refine_tol:
            break
        nx = px - cx
        ny = py - cy
        nn = math.hypot(nx, ny)
        ds = (math.cos(pth) * nx + math.sin(pth) * ny) / nn
        if ds == 0.0:
            break
        dt = dt - s / ds
    px, py, pth = _rk4_eval(x0, y0, th0, dt, eps, delta)
    return dt, px, py, pth


@njit(cache=True, nogil=True)
def _find_crossing(x0, y0, th0, x1, y1, h, centers, radii, refine_tol, eps, delta):
    """Earliest boundary crossing in the step [0, h], or dt < 0 when none."""
    best_dt = -1.0
    bx = by = bth = 0.0
    bdisc = -1
    bcx = bcy = 0.0
    ox_lo = int(math.floor(min(x0, x1))) - 1
    ox_hi = int(math.floor(max(x0, x1))) + 1
    oy_lo = int(math.floor(min(y0, y1))) - 1
    oy_hi = int(math.floor(max(y0, y1))) + 1
    ux = x1 - x0
    uy = y1 - y0
    L2 = ux * ux + uy * uy
    for i in range(centers.shape[0]):
        r = radii[i]
        for ox in range(ox_lo, ox_hi + 1):
            for oy in range(oy_lo, oy_hi + 1):
                cx = centers[i, 0] + ox
                cy = centers[i, 1] + oy
                ddx = cx - x0
                ddy = cy - y0
                lim = h + r + 1e-6
                if ddx * ddx + ddy * ddy > lim * lim:
                    continue  # the path stays within h of x0: cannot touch
                sig1 = math.hypot(x1 - cx, y1 - cy) - r
                hi = -1.0
                if sig1 < 0.0:
                    hi = h
                elif L2 > 0.0:
                    uu = (ddx * ux + ddy * uy) / L2
                    if 0.0 < uu < 1.0:
                        qx = x0 + uu * ux
                        qy = y0 + uu * uy
                        if math.hypot(qx - cx, qy - cy) < r - 1e-12:
                            hi = uu * h
                if hi < 0.0:
                    continue
                dt, px, py, pth = _refine_crossing(
                    x0, y0, th0, cx, cy, r, hi, refine_tol, eps, delta)
                if dt >= 0.0 and (best_dt < 0.0 or dt < best_dt):
                    best_dt = dt
                    bx, by, bth = px, py, pth
                    bdisc = i
                    bcx, bcy = cx, cy
    return best_dt, bx, by, bth, bdisc, bcx, bcy


@njit(cache=True, nogil=True)
def _curved_flight(x, y, th, eps, delta, tol, refine_tol, max_time,
                   centers, radii, sample_dt, sample_off, sample_buf):
    """Thermostat flight from a departure state to the next collision.

    When ``sample_dt > 0``, states at times (sample_off + j)*sample_dt are
    appended to ``sample_buf`` rows (x, y, theta), interpolated inside each
    accepted step by an RK4 sub-step from the step start.

    Returns (status, tau, hx, hy, th_in, disc, copy_cx, copy_cy, n_samples).
    """
    # lift off the surface: the departure disc then needs no special casing
    d0 = _clearance(x, y, centers, radii)
    if d0 < DEPART_OFFSET:
        bi = 0
        bd = np.inf
        bx = by = 0.0
        fx = math.floor(x)
        fy = math.floor(y)
        for i in range(centers.shape[0]):
            for ox in range(-1, 2):
                for oy in range(-1, 2):
                    cx = centers[i, 0] + fx + ox
                    cy = centers[i, 1] + fy + oy
                    dd = math.hypot(x - cx, y - cy) - radii[i]
                    if dd < bd:
                        bd = dd
                        bi = i
                        bx, by = cx, cy
        nn = math.hypot(x - bx, y - by)
        x += DEPART_OFFSET * (x - bx) / nn
        y += DEPART_OFFSET * (y - by) / nn

    t = 0.0
    h = CLEARANCE_FLOOR / 2.0
    n_samp = 0
    next_sample = sample_off * sample_dt if sample_dt > 0.0 else np.inf
    cd = math.cos(delta)
    sd = math.sin(delta)
    for _ in range(MAX_STEPS):
        clearance = _clearance(x, y, centers, radii)
        # unit speed: a step of (clearance - floor/2) cannot reach a scatterer;
        # crossing-capable steps are at most floor/2 long, keeping the chord
        # test reliable
        h_geo = max(clearance - 0.5 * CLEARANCE_FLOOR, 0.5 * CLEARANCE_FLOOR)
        if h > h_geo:
            h = h_geo
        if h < H_MIN:
            return 2, t, x, y, th, -1, 0.0, 0.0, n_samp

        x1, y1, th1, err = _ck_step(x, y, th, h, eps, delta, cd, sd)
        scale = tol * (1.0 + max(abs(x), max(abs(y), abs(th))))
        if err > scale:
            fac = 0.9 * (scale / err) ** 0.25
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue

        hx = hy = hth = bcx = bcy = 0.0
        bdisc = -1
        if clearance - h >= 0.25 * CLEARANCE_FLOOR:
            # path stays clear of every scatterer: no crossing, no dip
            dt_hit = -1.0
        else:
            dt_hit, hx, hy, hth, bdisc, bcx, bcy = _find_crossing(
                x, y, th, x1, y1, h, centers, radii, refine_tol, eps, delta)
        end = dt_hit if dt_hit >= 0.0 else h
        # emit time samples due inside [t, t+end)
        while next_sample < t + end:
            ddt = next_sample - t
            sx, sy, sth = _rk4_eval(x, y, th, ddt, eps, delta)
            if n_samp < sample_buf.shape[0]:
                sample_buf[n_samp, 0] = sx
                sample_buf[n_samp, 1] = sy
                sample_buf[n_samp, 2] = sth
                n_samp += 1
            next_sample += sample_dt

        if dt_hit >= 0.0:
            return 0, t + dt_hit, hx, hy, hth, bdisc, bcx, bcy, n_samp

        t += h
        x, y, th = x1, y1, th1
        if t > max_time:
            return 1, t, x, y, th, -1, 0.0, 0.0, n_samp
        if err > 0.0:
            # 5th-order scaling jumps straight to the error-allowed step;
            # the factor cap only guards against noise-floor estimates
            fac = 0.9 * (scale / err) ** 0.2
            if fac > 50.0:
                fac = 50.0
            h = min(h * fac, 0.25)
        else:
            h = min(h * 50.0, 0.25)
    return 2, t, x, y, th, -1, 0.0, 0.0, n_samp


@njit(cache=True, nogil=True, inline="always")
def _cf_eval(tt, x0, y0, delta, rel0, T0, uu, eps, cd, sd):
    """Exact thermostatted state at time tt (field-frame tangent T0, uu=T0^2).

    Solves theta' = -eps sin(theta - delta) in closed form:
    tan((theta-delta)/2) = T0 exp(-eps t), displacement by quadrature.
    Stable for eps*t -> 0 via expm1/log1p.  Returns (x, y, cos th, sin th,
    theta).
    """
    e1 = math.exp(-eps * tt)
    Tt = T0 * e1
    den = 1.0 + Tt * Tt
    crel = (1.0 - Tt * Tt) / den
    srel = 2.0 * Tt / den
    cth = crel * cd - srel * sd
    sth = srel * cd + crel * sd
    w = uu * math.expm1(-2.0 * eps * tt) / (1.0 + uu)
    dxr = tt + math.log1p(w) / eps
    # dtheta = rel0 - rel(t) = 2 (atan T0 - atan Tt), difference form
    dtheta = 2.0 * math.atan(-T0 * math.expm1(-eps * tt) / (1.0 + uu * e1))
    dyr = dtheta / eps
    x = x0 + cd * dxr - sd * dyr
    y = y0 + sd * dxr + cd * dyr
    th = _wrap_pi(rel0 - dtheta + delta)
    return x, y, cth, sth, th


@njit(cache=True, nogil=True)
def _cf_refine(x0, y0, delta, rel0, T0, uu, eps, cd, sd, cx, cy, r, lo, hi, refine_tol):
    """Crossing time of the exact path with one circle, in [lo, hi].

    Safeguarded Newton: the signed-distance root is bracketed (sigma(lo) > 0,
    sigma(hi) < 0); Newton steps that leave the bracket fall back to
    bisection.
    """
    px, py, cth, sth, pth = _cf_eval(hi, x0, y0, delta, rel0, T0, uu, eps, cd, sd)
    s_hi = math.hypot(px - cx, py - cy) - r
    if s_hi >= 0.0:
        return -1.0, 0.0, 0.0, 0.0
    dt = 0.5 * (lo + hi)
    for _ in range(80):
        px, py, cth, sth, pth = _cf_eval(dt, x0, y0, delta, rel0, T0, uu, eps, cd, sd)
        s = math.hypot(px - cx, py - cy) - r
        if abs(s) <= refine_tol:
            return dt, px, py, pth
        if s > 0.0:
            lo = dt
        else:
            hi = dt
        nx = px - cx
        ny = py - cy
        ds = (cth * nx + sth * ny) / math.hypot(nx, ny)
        step_ok = False
        if ds != 0.0:
            nt = dt - s / ds
            if lo < nt < hi:
                dt = nt
                step_ok = True
        if not step_ok:
            dt = 0.5 * (lo + hi)
        if hi - lo < 1e-15:
            break
    px, py, cth, sth, pth = _cf_eval(dt, x0, y0, delta, rel0, T0, uu, eps, cd, sd)
    return dt, px, py, pth


@njit(cache=True, nogil=True)
def _cf_flight(x, y, th, eps, delta, refine_tol, max_time,
               centers, radii, sample_dt, sample_off, sample_buf):
    """Thermostat flight on the exact closed-form path (production route).

    Identical stepping/crossing structure to :func:`_curved_flight`, but
    the propagator is the analytic solution, so no error control is
    needed and interior samples are exact.
    """
    d0 = _clearance(x, y, centers, radii)
    if d0 < DEPART_OFFSET:
        bi = 0
        bd = np.inf
        bx = by = 0.0
        fx = math.floor(x)
        fy = math.floor(y)
        for i in range(centers.shape[0]):
            for ox in range(-1, 2):
                for oy in range(-1, 2):
                    cx = centers[i, 0] + fx + ox
                    cy = centers[i, 1] + fy + oy
                    dd = math.hypot(x - cx, y - cy) - radii[i]
                    if dd < bd:
                        bd = dd
                        bi = i
                        bx, by = cx, cy
        nn = math.hypot(x - bx, y - by)
        x += DEPART_OFFSET * (x - bx) / nn
        y += DEPART_OFFSET * (y - by) / nn

    cd = math.cos(delta)
    sd = math.sin(delta)
    rel0 = _wrap_pi(th - delta)
    T0 = math.tan(0.5 * rel0)
    uu = T0 * T0
    x0 = x
    y0 = y

    t = 0.0
    px, py = x, y
    n_samp = 0
    next_sample = sample_off * sample_dt if sample_dt > 0.0 else np.inf
    for _ in range(MAX_STEPS):
        clearance = _clearance(px, py, centers, radii)
        h = max(clearance - 0.5 * CLEARANCE_FLOOR, 0.5 * CLEARANCE_FLOOR)
        if h > 0.25:
            h = 0.25
        t1 = t + h
        qx, qy, cth, sth, qth = _cf_eval(t1, x0, y0, delta, rel0, T0, uu, eps, cd, sd)

        dt_hit = -1.0
        hx = hy = hth = bcx = bcy = 0.0
        bdisc = -1
        if clearance - h < 0.25 * CLEARANCE_FLOOR:
            # crossing-capable step: chord tests against nearby circles
            ox_lo = int(math.floor(min(px, qx))) - 1
            ox_hi = int(math.floor(max(px, qx))) + 1
            oy_lo = int(math.floor(min(py, qy))) - 1
            oy_hi = int(math.floor(max(py, qy))) + 1
            ux = qx - px
            uy = qy - py
            L2 = ux * ux + uy * uy
            for i in range(centers.shape[0]):
                r = radii[i]
                for ox in range(ox_lo, ox_hi + 1):
                    for oy in range(oy_lo, oy_hi + 1):
                        cx = centers[i, 0] + ox
                        cy = centers[i, 1] + oy
                        ddx = cx - px
                        ddy = cy - py
                        lim = h + r + 1e-6
                        if ddx * ddx + ddy * ddy > lim * lim:
                            continue
                        sig1 = math.hypot(qx - cx, qy - cy) - r
                        hi = -1.0
                        if sig1 < 0.0:
                            hi = t1
                        elif L2 > 0.0:
                            vv = (ddx * ux + ddy * uy) / L2
                            if 0.0 < vv < 1.0:
                                wx = px + vv * ux
                                wy = py + vv * uy
                                if math.hypot(wx - cx, wy - cy) < r - 1e-12:
                                    hi = t + vv * h
                        if hi < 0.0:
                            continue
                        dt, ex, ey, eth = _cf_refine(
                            x0, y0, delta, rel0, T0, uu, eps, cd, sd,
                            cx, cy, r, t, hi, refine_tol)
                        if dt >= 0.0 and (dt_hit < 0.0 or dt < dt_hit):
                            dt_hit = dt
                            hx, hy, hth = ex, ey, eth
                            bdisc = i
                            bcx, bcy = cx, cy

        end = dt_hit if dt_hit >= 0.0 else t1
        while next_sample < end:
            sx, sy, scth, ssth, sth2 = _cf_eval(
                next_sample, x0, y0, delta, rel0, T0, uu, eps, cd, sd)
            if n_samp < sample_buf.shape[0]:
                sample_buf[n_samp, 0] = sx
                sample_buf[n_samp, 1] = sy
                sample_buf[n_samp, 2] = sth2
                n_samp += 1
            next_sample += sample_dt

        if dt_hit >= 0.0:
            return 0, dt_hit, hx, hy, hth, bdisc, bcx, bcy, n_samp
        t = t1
        px, py = qx, qy
        if t > max_time:
            return 1, t, px, py, qth, -1, 0.0, 0.0, n_samp
    return 2, t, px, py, th, -1, 0.0, 0.0, n_samp


@njit(cache=True, nogil=True)
def _straight_flight(x, y, th, u, horizon, sample_dt, sample_off, sample_buf):
    """Exact straight flight with optional time sampling."""
    dx = math.cos(th)
    dy = math.sin(th)
    t, irow = ray_hit(x, y, dx, dy, u)
    n_samp = 0
    if irow < 0 or t > horizon + 1e-9:
        return 1, t, x, y, th, -1, 0.0, 0.0, n_samp
    if sample_dt > 0.0:
        ts = sample_off * sample_dt
        while ts < t:
            if n_samp < sample_buf.shape[0]:
                sample_buf[n_samp, 0] = x + ts * dx
                sample_buf[n_samp, 1] = y + ts * dy
                sample_buf[n_samp, 2] = th
                n_samp += 1
            ts += sample_dt
    return 0, t, x + t * dx, y + t * dy, th, int(u[irow, 3]), u[irow, 0], u[irow, 1], n_samp


@njit(cache=True, nogil=True, inline="always")
def _lift(disc, s, phi, centers, radii):
    """Collision coordinate to outgoing flow state (unwrapped chart point)."""
    r = radii[disc]
    alpha = (s % (TWO_PI * r)) / r
    x = centers[disc, 0] + r * math.cos(alpha)
    y = centers[disc, 1] + r * math.sin(alpha)
    th = _wrap_pi(alpha + phi)
    return x, y, th


@njit(cache=True, nogil=True)
def map_once(disc, s, phi, u, centers, radii, eps, delta,
             tol, refine_tol, horizon, force_curved, sample_dt, sample_off, sample_buf):
    """One application of the collision map F_eps in chart coordinates.

    Straight flights are exact ray casts; thermostat flights follow the
    exact closed-form path.  ``force_curved`` routes through the adaptive
    Runge-Kutta stepper instead (cross-validation path).
    Returns (status, disc', s', phi', tau, dx, dy, flag, n_samples).
    """
    x, y, th = _lift(disc, s, phi, centers, radii)
    if force_curved:
        status, tau, hx, hy, th_in, hdisc, ccx, ccy, n_samp = _curved_flight(
            x, y, th, eps, delta, tol, refine_tol, 2.0 * horizon + 0.5,
            centers, radii, sample_dt, sample_off, sample_buf)
    elif eps == 0.0:
        status, tau, hx, hy, th_in, hdisc, ccx, ccy, n_samp = _straight_flight(
            x, y, th, u, horizon, sample_dt, sample_off, sample_buf)
    else:
        status, tau, hx, hy, th_in, hdisc, ccx, ccy, n_samp = _cf_flight(
            x, y, th, eps, delta, refine_tol, 2.0 * horizon + 0.5,
            centers, radii, sample_dt, sample_off, sample_buf)
    if status != 0:
        return status, disc, s, phi, tau, 0.0, 0.0, 1, n_samp
    beta = math.atan2(hy - ccy, hx - ccx)
    alpha = beta if beta >= 0.0 else beta + TWO_PI
    s2 = radii[hdisc] * alpha
    inc = math.cos(th_in - beta)
    flag = 0
    if -inc < GRAZING_COS:
        flag = 1
    phi2 = _wrap_pi(beta + math.pi - th_in)
    if phi2 > 0.5 * math.pi:
        phi2 = 0.5 * math.pi
        flag = 1
    elif phi2 < -0.5 * math.pi:
        phi2 = -0.5 * math.pi
        flag = 1
    return 0, hdisc, s2, phi2, tau, hx - x, hy - y, flag, n_samp


@njit(cache=True, nogil=True)
def map_batch(discs, ss, phis, u, centers, radii, eps, delta,
              tol, refine_tol, horizon, force_curved):
    """Apply the collision map to each coordinate independently."""
    n = discs.shape[0]
    o_disc = np.empty(n, dtype=np.int64)
    o_s = np.empty(n, dtype=np.float64)
    o_phi = np.empty(n, dtype=np.float64)
    o_tau = np.empty(n, dtype=np.float64)
    o_dx = np.empty(n, dtype=np.float64)
    o_dy = np.empty(n, dtype=np.float64)
    o_flag = np.zeros(n, dtype=np.int64)
    nobuf = np.empty((1, 3), dtype=np.float64)
    status = 0
    for i in range(n):
        st, d2, s2, p2, tau, dx, dy, fl, _ = map_once(
            discs[i], ss[i], phis[i], u, centers, radii, eps, delta,
            tol, refine_tol, horizon, force_curved, -1.0, 0.0, nobuf)
        o_disc[i] = d2
        o_s[i] = s2
        o_phi[i] = p2
        o_tau[i] = tau
        o_dx[i] = dx
        o_dy[i] = dy
        o_flag[i] = fl
        if st != 0 and status == 0:
            status = st
            o_flag[i] = 1
    return status, o_disc, o_s, o_phi, o_tau, o_dx, o_dy, o_flag


@njit(cache=True, nogil=True)
def map_chunk(disc, s, phi, n, u, centers, radii, eps, delta,
              tol, refine_tol, horizon,
              out_disc, out_s, out_phi, out_tau, out_dx, out_dy, out_flag):
    """Iterate the collision map n times from one coordinate.

    Output row i holds the post-collision coordinate after step i together
    with the flight data of step i.  Returns (status, n_done, disc, s, phi).
    """
    nobuf = np.empty((1, 3), dtype=np.float64)
    for i in range(n):
        st, disc, s, phi, tau, dx, dy, fl, _ = map_once(
            disc, s, phi, u, centers, radii, eps, delta,
            tol, refine_tol, horizon, False, -1.0, 0.0, nobuf)
        if st != 0:
            return st, i, disc, s, phi
        out_disc[i] = disc
        out_s[i] = s
        out_phi[i] = phi
        out_tau[i] = tau
        out_dx[i] = dx
        out_dy[i] = dy
        out_flag[i] = fl
    return 0, n, disc, s, phi


@njit(cache=True, nogil=True)
def flow_chunk(disc, s, phi, n_cap, t_start, t_budget, dt_sample, jitter,
               u, centers, radii, eps, delta, tol, refine_tol, horizon,
               n_batches, spat, thet, vel_w, vel_vx, vel_vy, curr):
    """Advance the flow, accumulating time-sampled histograms.

    spat:  (B, g, g) position occupation counts (torus-wrapped samples)
    thet:  (B, nb) direction-angle counts
    vel_*: (g, g) velocity-field accumulators (sample count, vx sum, vy sum)
    curr:  (B, 3) per-flight sums (dx, dy, tau) for the current estimate

    Attribution of a flight goes to the batch containing its start time.
    Returns (status, n_done, t_end, disc, s, phi, n_flagged, n_samples).
    """
    g = spat.shape[1]
    nb = thet.shape[1]
    buf = np.empty((SAMPLE_BUF, 3), dtype=np.float64)
    t_total = t_start
    flagged = 0
    n_samples = 0
    for i in range(n_cap):
        if t_total >= t_budget:
            return 0, i, t_total, disc, s, phi, flagged, n_samples
        b = int(t_total * n_batches / t_budget)
        if b >= n_batches:
            b = n_batches - 1
        st, disc, s, phi, tau, dx, dy, fl, n_samp = map_once(
            disc, s, phi, u, centers, radii, eps, delta,
            tol, refine_tol, horizon, False, dt_sample, jitter[i], buf)
        if st != 0:
            return st, i, t_total, disc, s, phi, flagged, n_samples
        flagged += fl
        curr[b, 0] += dx
        curr[b, 1] += dy
        curr[b, 2] += tau
        for j in range(n_samp):
            sx = buf[j, 0] % 1.0
            sy = buf[j, 1] % 1.0
            sth = buf[j, 2]
            ix = int(sx * g)
            iy = int(sy * g)
            if ix >= g:
                ix = g - 1
            if iy >= g:
                iy = g - 1
            spat[b, ix, iy] += 1.0
            w = _wrap_pi(sth)
            it = int((w + math.pi) * nb / TWO_PI)
            if it >= nb:
                it = nb - 1
            thet[b, it] += 1.0
            cth = math.cos(sth)
            sthn = math.sin(sth)
            vel_w[ix, iy] += 1.0
            vel_vx[ix, iy] += cth
            vel_vy[ix, iy] += sthn
        n_samples += n_samp
        t_total += tau
    return 0, n_cap, t_total, disc, s, phi, flagged, n_samples
