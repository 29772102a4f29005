"""Kinematic bicycle model with explicit Euler integration.

State is measured at the vehicle center; the slip angle couples front-wheel
steering into the center-velocity direction. Derivatives are evaluated at the
current state (explicit Euler), so position updates use the pre-update speed.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import atan, cos, pi, sin, tan


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = (a + pi) % (2.0 * pi) - pi
    if a == -pi:
        return pi
    return a


@dataclass(slots=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v: float = 0.0


@dataclass(slots=True)
class ControlInput:
    accel: float = 0.0
    steer: float = 0.0


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and actuation bounds shared by planner and simulator.

    lf/lr are center-to-axle distances; half_width/half_length bound the
    footprint used by the three-circle collision metric (half_length >
    half_width required there).
    """

    lf: float = 1.3
    lr: float = 1.3
    half_width: float = 0.9
    half_length: float = 2.0
    a_min: float = -4.0
    a_max: float = 3.0
    steer_min: float = -0.5
    steer_max: float = 0.5

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


def slip_angle(steer: float, params: VehicleParams) -> float:
    """Center-velocity slip angle beta = atan(lr/(lf+lr) * tan(steer))."""
    return atan(params.lr / (params.lf + params.lr) * tan(steer))


def step(z: VehicleState, u: ControlInput, params: VehicleParams, dt: float) -> VehicleState:
    """One explicit-Euler step; speed clamped at zero (no reverse).

    Caller is responsible for keeping u within the params bounds; this
    function does not clip.
    """
    beta = slip_angle(u.steer, params)
    v = z.v
    x = z.x + v * cos(z.psi + beta) * dt
    y = z.y + v * sin(z.psi + beta) * dt
    psi = wrap_angle(z.psi + v / params.lr * sin(beta) * dt)
    v_next = v + u.accel * dt
    if v_next < 0.0:
        v_next = 0.0
    return VehicleState(x, y, psi, v_next)


def clip_control(u: ControlInput, params: VehicleParams) -> ControlInput:
    """Clamp a control to the actuation box of params."""
    a = min(max(u.accel, params.a_min), params.a_max)
    d = min(max(u.steer, params.steer_min), params.steer_max)
    return ControlInput(a, d)
