"""Collision map of the perturbed billiard and its inverse.

The collision space is parameterized by (disc_id, s, phi): arclength
along a scatterer plus the signed angle between the outgoing velocity
and the inward normal, phi in [-pi/2, pi/2].  One application of the
map lifts the coordinate to an outgoing flow state, integrates the
flight to the next boundary crossing, and reflects.

Two execution routes exist with identical semantics: the plain-Python
route built on :func:`lorentzgas.integrate.integrate_flight` (works for
any force model, used as the reference), and jitted batch drivers in
:mod:`lorentzgas._kernels` for zero/thermostat forces (used by the
estimators).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InputError, LorentzGasError
from .forces import ForceModel
from .geometry import BoundaryCoord, Table, boundary_point_raw
from .integrate import FlowState, integrate_flight

GRAZING_COS = _kernels.GRAZING_COS


@dataclass(frozen=True)
class CollisionCoord:
    """Post-reflection boundary state (disc, arclength, outgoing angle)."""

    disc_id: int
    s: float
    phi: float

    def __post_init__(self):
        if not (-math.pi / 2 - 1e-12 <= self.phi <= math.pi / 2 + 1e-12):
            raise InputError(f"phi {self.phi} outside [-pi/2, pi/2]")

    @property
    def bc(self) -> BoundaryCoord:
        return BoundaryCoord(self.disc_id, self.s)


@dataclass(frozen=True)
class StepResult:
    coord: CollisionCoord
    tau: float
    dx: float
    dy: float
    flagged: bool


def lift(table: Table, X: CollisionCoord) -> FlowState:
    """Outgoing flow state at a collision coordinate."""
    x, y, alpha = boundary_point_raw(table, X.bc)
    return FlowState(x=x, y=y, theta=_wrap(alpha + X.phi))


def collision_step(
    table: Table, model: ForceModel, X: CollisionCoord,
    tol: float = 1e-10, refine_tol: float = 1e-12,
) -> StepResult:
    """One collision-map application with flight data and grazing flag."""
    start = lift(table, X)
    fl = integrate_flight(table, model, start, tol=tol, refine_tol=refine_tol)
    r = table.discs[fl.bc.disc_id].radius
    beta = (fl.bc.s % table.discs[fl.bc.disc_id].circumference) / r
    phi = _wrap(beta + math.pi - fl.theta_in)
    flagged = math.cos(phi) < GRAZING_COS
    if phi > math.pi / 2:
        phi, flagged = math.pi / 2, True
    elif phi < -math.pi / 2:
        phi, flagged = -math.pi / 2, True
    return StepResult(
        coord=CollisionCoord(fl.bc.disc_id, fl.bc.s, phi),
        tau=fl.tau, dx=fl.dx, dy=fl.dy, flagged=flagged,
    )


def collision_map(
    table: Table, model: ForceModel, X: CollisionCoord, tol: float = 1e-10,
) -> tuple[CollisionCoord, float]:
    """F_eps(X) and the flight time tau(X)."""
    st = collision_step(table, model, X, tol=tol)
    return st.coord, st.tau


def reversal_involution(X: CollisionCoord) -> CollisionCoord:
    """Time reversal iota(r, phi) = (r, -phi)."""
    return CollisionCoord(X.disc_id, X.s, -X.phi)


def collision_map_inverse(
    table: Table, model: ForceModel, X: CollisionCoord, tol: float = 1e-10,
) -> tuple[CollisionCoord, float]:
    """F_eps^{-1}(X) realized as iota o F_eps o iota.

    Valid for time-reversible models (zero and thermostat); backward ODE
    integration is never needed.
    """
    if model.kind == "general":
        raise InputError("inverse map requires a reversible model (zero/thermostat)")
    Y, tau = collision_map(table, model, reversal_involution(X), tol=tol)
    return reversal_involution(Y), tau


def _wrap(a: float) -> float:
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w < 0:
        w += 2.0 * math.pi
    return w - math.pi if w != 0.0 else math.pi


# ---------------------------------------------------------------------------
# batched fast route


def kernel_force_params(model: ForceModel) -> tuple[float, float]:
    """(epsilon, field angle) for the jitted kernels; rejects general models."""
    if model.kind == "zero":
        return 0.0, 0.0
    if model.kind == "thermostat":
        return model.epsilon, model.direction
    raise InputError("jitted kernels support zero/thermostat models only")


def apply_map_batch(
    table: Table, model: ForceModel,
    disc: np.ndarray, s: np.ndarray, phi: np.ndarray,
    tol: float = 1e-10, refine_tol: float = 1e-12, force_curved: bool = False,
) -> dict:
    """Vectorized collision map over arrays of coordinates.

    Returns dict with disc, s, phi (mapped), tau, dx, dy, flag arrays.
    Falls back to the Python route for general force models.
    """
    disc = np.ascontiguousarray(disc, dtype=np.int64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if model.kind == "general":
        n = disc.shape[0]
        out = {k: np.empty(n) for k in ("s", "phi", "tau", "dx", "dy")}
        out["disc"] = np.empty(n, dtype=np.int64)
        out["flag"] = np.zeros(n, dtype=np.int64)
        for i in range(n):
            st = collision_step(table, model, CollisionCoord(int(disc[i]), s[i], phi[i]),
                                tol=tol, refine_tol=refine_tol)
            out["disc"][i] = st.coord.disc_id
            out["s"][i] = st.coord.s
            out["phi"][i] = st.coord.phi
            out["tau"][i] = st.tau
            out["dx"][i] = st.dx
            out["dy"][i] = st.dy
            out["flag"][i] = int(st.flagged)
        return out
    eps, delta = kernel_force_params(model)
    status, o_disc, o_s, o_phi, o_tau, o_dx, o_dy, o_flag = _kernels.map_batch(
        disc, s, phi, table.unfolded, table.centers, table.radii,
        eps, delta, tol, refine_tol, table.horizon_bound, force_curved)
    if status != 0:
        raise LorentzGasError(f"collision map failed with status {status}")
    return {"disc": o_disc, "s": o_s, "phi": o_phi, "tau": o_tau,
            "dx": o_dx, "dy": o_dy, "flag": o_flag}


def free_flight_data(table: Table, disc, s, phi) -> dict:
    """Unperturbed (straight) flight data from each coordinate.

    The per-collision displacement of the zero-field map is the fixed,
    field-independent observable used by the response estimators.
    """
    return apply_map_batch(table, ForceModel.zero(), disc, s, phi)
