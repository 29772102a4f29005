"""Low-level tracking: PID speed control and one-step lateral steering search.

The speed loop outputs a normalized command in [-1, 1] which the plant maps
back to acceleration (positive scaled by a_max, negative by |a_min|). The
lateral loop does an exhaustive one-step lookahead over a fixed steering
grid; the grid is built antisymmetrically so mirrored scenes produce exactly
mirrored commands.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleParams, VehicleState


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.5
    ki: float = 0.1
    kd: float = 0.05
    integral_clamp: float = 2.0


class SpeedPid:
    """Normalized-output PID on the speed error, with anti-windup clamping."""

    def __init__(self, gains: PidGains | None = None):
        self.gains = gains or PidGains()
        self.integral = 0.0
        self.prev_error: float | None = None

    def reset(self):
        self.integral = 0.0
        self.prev_error = None

    def step(self, v_target: float, v: float, dt: float,
             feedforward: float = 0.0) -> float:
        """Normalized command; feedforward is added before the final clamp.

        Receding-horizon references restart at the measured speed every
        replan, so the error term alone cannot hold a sustained ramp; the
        caller passes the planned acceleration (normalized) as feedforward
        and the PID only cleans up the residual.
        """
        g = self.gains
        e = v_target - v
        self.integral = min(max(self.integral + e * dt, -g.integral_clamp),
                            g.integral_clamp)
        de = 0.0 if self.prev_error is None else (e - self.prev_error) / dt
        self.prev_error = e
        raw = g.kp * e + g.ki * self.integral + g.kd * de + feedforward
        return min(max(raw, -1.0), 1.0)


def pid_throttle(v_target: float, v: float, gains: PidGains, dt: float,
                 controller: SpeedPid | None = None) -> float:
    """One PID step; stateless (pure P on first call) unless a controller is kept."""
    if controller is None:
        controller = SpeedPid(gains)
    return controller.step(v_target, v, dt)


def command_to_accel(cmd: float, params: VehicleParams) -> float:
    """Plant-side interpretation of the normalized longitudinal command."""
    cmd = min(max(cmd, -1.0), 1.0)
    return cmd * params.a_max if cmd >= 0.0 else cmd * (-params.a_min)


@dataclass(frozen=True)
class LateralConfig:
    resolution: float = 0.005  # rad between tested steering values
    lambda_psi: float = 1.0    # heading error weight vs position error
    trust_band: float = 0.35   # max correction away from the planned steer
    slew_rate: float = 3.0     # rad/s actuator limit on steering changes
    # replanning restarts the reference at the measured pose every cycle, so
    # the per-tick tracker only bridges the gap between plans; give it a slow
    # time constant or it feeds pose noise straight to the wheels
    fb_alpha: float = 0.12     # low-pass factor applied to the raw tracker


_GRID_CACHE: dict = {}


def _steer_grid(params: VehicleParams, resolution: float):
    key = (params.steer_min, params.steer_max, params.lf, params.lr, resolution)
    hit = _GRID_CACHE.get(key)
    if hit is not None:
        return hit
    if params.steer_min != -params.steer_max:
        raise ValueError("steering bounds must be symmetric")
    half = np.arange(0.0, params.steer_max + 0.5 * resolution, resolution)
    grid = np.concatenate((-half[::-1], half[1:]))
    betas = np.arctan(params.lr / params.wheelbase * np.tan(grid))
    hit = (grid, betas, np.abs(grid))
    _GRID_CACHE[key] = hit
    return hit


def lateral_mpc(state: VehicleState, ref: tuple[float, float, float],
                params: VehicleParams, dt: float,
                config: LateralConfig | None = None) -> float:
    """Steering minimizing one-step pose error against the reference.

    Cost: (x' - xr)^2 + (y' - yr)^2 + lambda_psi * wrap(psi' - psir)^2 after a
    single bicycle step at the current speed. Ties resolve to the smallest
    steering magnitude, so a stationary vehicle commands zero.
    """
    cfg = config or LateralConfig()
    grid, betas, mags = _steer_grid(params, cfg.resolution)
    rx, ry, rpsi = ref
    v = state.v
    psi_n = state.psi + (v / params.lr) * np.sin(betas) * dt
    ang = state.psi + betas
    x_n = state.x + v * np.cos(ang) * dt
    y_n = state.y + v * np.sin(ang) * dt
    dpsi = np.mod(psi_n - rpsi + np.pi, 2.0 * np.pi) - np.pi
    cost = ((x_n - rx) ** 2 + (y_n - ry) ** 2 + cfg.lambda_psi * dpsi * dpsi)
    best = cost.min()
    ties = np.nonzero(cost == best)[0]
    if len(ties) == 1:
        return float(grid[ties[0]])
    return float(grid[ties[np.argmin(mags[ties])]])


def smooth_steer(raw: float, planned: float, prev: float, dt: float,
                 config: LateralConfig | None = None) -> float:
    """Condition a raw tracker output before it reaches the wheels.

    The one-step tracker reacts to every pose-measurement wiggle, so its raw
    output is clamped to a trust band around the planned steering (the plan
    is what was collision-checked) and then slew-rate limited against the
    previously applied command.
    """
    cfg = config or LateralConfig()
    lo, hi = planned - cfg.trust_band, planned + cfg.trust_band
    want = min(max(raw, lo), hi)
    step = cfg.slew_rate * dt
    return prev + min(max(want - prev, -step), step)


def deviation_bound(delta_plan: float, delta_cmd: float, k_max: float = 0.5,
                    delta_max: float = 0.5) -> bool:
    """Tracking deviation guarantee: |planned - commanded| <= K_max + delta_max."""
    return abs(delta_cmd - delta_plan) <= k_max + delta_max + 1e-9
