"""Stationary force models driving the flight dynamics.

In the (x, y, theta) chart the equations of motion are

    x' = p cos(theta),  y' = p sin(theta),  theta' = p * h(x, y, theta)

with h = (-F1 sin(theta) + F2 cos(theta)) / p^2.  Three variants:

* ``zero``        free flight, h = 0, straight lines.
* ``thermostat``  constant field E of strength epsilon with the speed
                  held at 1 by projecting out the parallel component,
                  F = E - (E.v)v.  This gives h = -epsilon*sin(theta-delta)
                  where delta is the field direction.
* ``general``     user-supplied smooth h(x,y,theta) and speed chart
                  p(x,y,theta) with explicit bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError

_FD = 1e-6  # step for sampled partials of general force data


@dataclass(frozen=True)
class ForceModel:
    kind: str
    epsilon: float = 0.0
    direction: float = 0.0  # field angle in radians
    h_func: Callable | None = field(default=None, compare=False)
    p_func: Callable | None = field(default=None, compare=False)
    p_min: float = 1.0
    p_max: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "thermostat", "general"):
            raise InputError(f"unknown force kind {self.kind!r}")
        if self.kind == "thermostat" and self.epsilon < 0:
            raise InputError("thermostat field strength must be >= 0")
        if self.kind == "general" and self.h_func is None:
            raise InputError("general force requires an h function")
        if not (0.0 < self.p_min <= self.p_max):
            raise InputError("need 0 < p_min <= p_max")

    @staticmethod
    def zero() -> "ForceModel":
        return ForceModel(kind="zero")

    @staticmethod
    def thermostat(epsilon: float, direction_deg: float = 0.0) -> "ForceModel":
        return ForceModel(
            kind="thermostat", epsilon=float(epsilon),
            direction=math.radians(direction_deg),
        )

    @staticmethod
    def general(h_func, p_func=None, p_min=1.0, p_max=1.0) -> "ForceModel":
        return ForceModel(
            kind="general", h_func=h_func,
            p_func=p_func, p_min=p_min, p_max=p_max,
        )

    def with_epsilon(self, epsilon: float) -> "ForceModel":
        """Same family at a different field strength (thermostat/zero only)."""
        if self.kind == "general":
            raise InputError("general force models are not epsilon-parameterized")
        if self.kind == "zero":
            return self
        return ForceModel(kind="thermostat", epsilon=float(epsilon), direction=self.direction)

    @property
    def is_straight(self) -> bool:
        return self.kind == "zero" or (self.kind == "thermostat" and self.epsilon == 0.0)

    def speed(self, x: float, y: float, theta: float) -> float:
        if self.kind == "general" and self.p_func is not None:
            return float(self.p_func(x, y, theta))
        return 1.0


def h_value(model: ForceModel, x: float, y: float, theta: float) -> float:
    """Turning rate h at a phase point (theta' = p*h)."""
    if model.kind == "zero":
        return 0.0
    if model.kind == "thermostat":
        return -model.epsilon * math.sin(theta - model.direction)
    return float(model.h_func(x, y, theta))


def h_partials(model: ForceModel, x: float, y: float, theta: float):
    """(h_x, h_y, h_theta); analytic for zero/thermostat, central FD otherwise."""
    if model.kind == "zero":
        return 0.0, 0.0, 0.0
    if model.kind == "thermostat":
        return 0.0, 0.0, -model.epsilon * math.cos(theta - model.direction)
    hx = (h_value(model, x + _FD, y, theta) - h_value(model, x - _FD, y, theta)) / (2 * _FD)
    hy = (h_value(model, x, y + _FD, theta) - h_value(model, x, y - _FD, theta)) / (2 * _FD)
    ht = (h_value(model, x, y, theta + _FD) - h_value(model, x, y, theta - _FD)) / (2 * _FD)
    return hx, hy, ht


@dataclass(frozen=True)
class SmallnessReport:
    max_h: float
    max_hx: float
    max_hy: float
    max_htheta: float
    delta0: float
    passes: bool


def assumption_b_report(model: ForceModel, delta0: float, grid: int = 24) -> SmallnessReport:
    """Check max(|h|, |h_x|, |h_y|, |h_theta|) <= delta0.

    Analytic bounds for zero/thermostat; a (grid^3)-point sample of the
    chart for general forces.
    """
    if model.kind == "zero":
        mh = mx = my = mt = 0.0
    elif model.kind == "thermostat":
        mh = mt = model.epsilon
        mx = my = 0.0
    else:
        xs = np.linspace(0.0, 1.0, grid, endpoint=False)
        ths = np.linspace(-math.pi, math.pi, grid, endpoint=False)
        mh = mx = my = mt = 0.0
        for x in xs:
            for y in xs:
                for th in ths:
                    mh = max(mh, abs(h_value(model, x, y, th)))
                    hx, hy, ht = h_partials(model, x, y, th)
                    mx = max(mx, abs(hx))
                    my = max(my, abs(hy))
                    mt = max(mt, abs(ht))
    passes = max(mh, mx, my, mt) <= delta0
    return SmallnessReport(mh, mx, my, mt, delta0, passes)


def thermostat_closed_form(theta0, epsilon: float, t, direction: float = 0.0):
    """Exact thermostatted free motion (no scatterers): theta(t) and displacement.

    In the frame of the field, theta obeys theta' = -eps*sin(theta), solved by
    tan(theta(t)/2) = tan(theta0/2) * exp(-eps*t).  The displacement follows by
    quadrature:

        dx = t + log((1 + T^2 e^{-2 eps t}) / (1 + T^2)) / eps
        dy = (theta0 - theta(t)) / eps

    with T = tan(theta0/2).  Returns (theta(t), dx, dy) in lab coordinates,
    broadcast over theta0 and t.
    """
    t = np.asarray(t, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if epsilon == 0.0:
        th = np.broadcast_to(theta0, np.broadcast(theta0, t).shape).astype(float)
        return th, t * np.cos(theta0), t * np.sin(theta0)
    rel = _wrap_angle(theta0 - direction)
    anti = np.abs(np.abs(rel) - math.pi) < 1e-15  # unstable equilibrium
    T = np.tan(np.where(anti, 0.0, rel) / 2.0)
    Tt = T * np.exp(-epsilon * t)
    rel_t = 2.0 * np.arctan(Tt)
    dxr = t + np.log((1.0 + Tt * Tt) / (1.0 + T * T)) / epsilon
    dyr = (rel - rel_t) / epsilon
    rel_t = np.where(anti, rel, rel_t)
    dxr = np.where(anti, -t, dxr)
    dyr = np.where(anti, 0.0, dyr)
    cd, sd = math.cos(direction), math.sin(direction)
    dx = cd * dxr - sd * dyr
    dy = sd * dxr + cd * dyr
    theta_t = _wrap_angle(rel_t + direction)
    return theta_t, dx, dy


def _wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return w if w.ndim else float(w)
