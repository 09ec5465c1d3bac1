"""Periodic Lorentz gas simulator with thermostatted fields.

Simulates a point particle on the unit torus with disc scatterers under
small stationary forces (flagship: constant field with a Gaussian
thermostat), estimates the steady state's observable marginals, and
evaluates the Kawasaki-series / linear-response identities for the
collision map.
"""

from .dynamics import (
    CollisionCoord,
    collision_map,
    collision_map_inverse,
    collision_step,
    reversal_involution,
)
from .errors import (
    GrazingCollision,
    HorizonViolation,
    InputError,
    IntegrationFailure,
    LorentzGasError,
)
from .forces import ForceModel, assumption_b_report, h_value, thermostat_closed_form
from .geometry import (
    BoundaryCoord,
    Disc,
    Table,
    boundary_point,
    check_finite_horizon,
    domain_area,
    first_hit_straight,
    reference_table,
)
from .integrate import FlightResult, FlowState, integrate_flight, reflect
from .measure import (
    birkhoff_map_average,
    classify_homogeneity,
    current,
    flow_average,
    phi_density,
    r_density,
    sample_nu0,
    sample_nu0_batch,
    spatial_density,
    theta_density,
    velocity_field,
)
from .response import (
    conductivity,
    delta0_batch,
    delta_eps_batch,
    expansion_diagnostic,
    g_eps,
    g_eps_batch,
    jacobian_det,
    jacobian_det_batch,
    kawasaki_rhs,
    linear_response_fit,
    series_slope,
)

__version__ = "0.1.0"
