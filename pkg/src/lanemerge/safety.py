"""Inter-vehicle clearance and terminal feasibility.

Footprints are three circles of radius w (half-width) centered on the heading
axis at offsets {-(h-w), 0, +(h-w)}; the clearance metric is the minimum over
the nine center pairs of center distance minus the radius sum. Negative means
the footprints overlap.

The directional check projects the clearance onto the bearing of the other
vehicle in the ego frame and compares against longitudinal/lateral buffers.
The two inequalities are gated jointly: a pose is unsafe only when *both*
projections fall short, so a pure lateral neighbor at clearance above the
default buffer does not trigger braking (over-conservative otherwise).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import atan2, cos, sin, sqrt

from .dynamics import VehicleParams, VehicleState

_OFFSETS = (-1.0, 0.0, 1.0)


@dataclass(frozen=True)
class SafetyMargins:
    eps0: float = 0.5
    eps_lng: float = 0.0
    eps_lat: float = 0.0


@dataclass(frozen=True)
class TerminalHalfPlane:
    """Affine feasible set for terminal positions near the dead end.

    theta is the road angle; slope is the max steering angle used as the
    affine slope; direction is +1 for a change to the left lane, -1 right.
    """

    theta: float
    x_end: float
    y_end: float
    slope: float = 0.5
    direction: int = 1


def min_circle_distance(a: VehicleState, ap: VehicleParams,
                        b: VehicleState, bp: VehicleParams) -> float:
    """Min over the 9 circle pairs of center distance - (w_a + w_b)."""
    da = ap.half_length - ap.half_width
    db = bp.half_length - bp.half_width
    ca, sa = cos(a.psi), sin(a.psi)
    cb, sb = cos(b.psi), sin(b.psi)
    rsum = ap.half_width + bp.half_width
    best = None
    for p in _OFFSETS:
        ax = a.x + p * da * ca
        ay = a.y + p * da * sa
        for q in _OFFSETS:
            dx = ax - (b.x + q * db * cb)
            dy = ay - (b.y + q * db * sb)
            d = sqrt(dx * dx + dy * dy)
            if best is None or d < best:
                best = d
    return best - rsum


def check_safety(ego: VehicleState, ego_params: VehicleParams,
                 other: VehicleState, other_params: VehicleParams,
                 margins: SafetyMargins) -> bool:
    """True iff the pose pair clears the directionally gated buffers."""
    d = min_circle_distance(ego, ego_params, other, other_params)
    bearing = atan2(other.y - ego.y, other.x - ego.x) - ego.psi
    lng = d * abs(cos(bearing))
    lat = d * abs(sin(bearing))
    unsafe = (lng < margins.eps0 + margins.eps_lng
              and lat < margins.eps0 + margins.eps_lat)
    return not unsafe


def safety_shortfall(ego: VehicleState, ego_params: VehicleParams,
                     other: VehicleState, other_params: VehicleParams,
                     margins: SafetyMargins) -> float:
    """Violation depth of the gated check; 0 when safe.

    Used by the soft-constraint mode: the smaller of the two projection
    shortfalls is the least distance by which one direction misses its
    buffer.
    """
    d = min_circle_distance(ego, ego_params, other, other_params)
    bearing = atan2(other.y - ego.y, other.x - ego.x) - ego.psi
    s_lng = (margins.eps0 + margins.eps_lng) - d * abs(cos(bearing))
    s_lat = (margins.eps0 + margins.eps_lat) - d * abs(sin(bearing))
    short = min(s_lng, s_lat)
    return short if short > 0.0 else 0.0


def terminal_feasible(pose: VehicleState, hp: TerminalHalfPlane) -> bool:
    """Closed half-plane test in the road frame.

    Feasible iff the lateral coordinate (toward the target lane) is at least
    the affine line slope*(longitudinal - dead_end_longitudinal) + dead_end_lateral.
    """
    ct, st = cos(hp.theta), sin(hp.theta)
    xr = pose.x * ct + pose.y * st
    yr = -pose.x * st + pose.y * ct
    xe = hp.x_end * ct + hp.y_end * st
    ye = -hp.x_end * st + hp.y_end * ct
    return hp.direction * (yr - ye) >= hp.slope * (xr - xe) - 1e-12
