"""Intention-tagged candidate trajectories for the lane-change planner.

Each planning cycle enumerates a small fixed set of maneuvers instead of
solving a free trajectory optimization: keep the reference lane, change to
the target lane (both realized as minimum-bending-energy spirals sampled at
speed-consistent arc positions), and constant accelerate/decelerate
heading-holds. Every candidate is materialized as a control sequence plus
the exact model propagation of those controls, so downstream cost and
safety checks see precisely what the vehicle would do.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import asin, atan, cos, hypot, inf, sin, tan

from .dynamics import ControlInput, VehicleParams, VehicleState, step, wrap_angle
from .geometry import LaneGeometry
from .spiral import (CurvatureKnots, PathBoundary, SpiralWeights, heading_at,
                     march_poses, solve_spiral)


class Intention(Enum):
    KEEP_SOURCE_LANE = "KeepSourceLane"
    CHANGE_TO_TARGET_LANE = "ChangeToTargetLane"
    ACCELERATE = "Accelerate"
    DECELERATE = "Decelerate"


MAX_BRAKE_LABEL = "MaxBrake"


@dataclass
class CandidateTrajectory:
    intention: Intention
    controls: list[ControlInput]
    states: list[VehicleState]  # len(controls) + 1, exact model propagation
    spiral_residual: float = 0.0

    @property
    def label(self) -> str:
        return self.intention.value


def speed_profile(v0: float, v_ref: float, count: int, dt: float,
                  ramp: float, gain: float = 1.2) -> list[float]:
    """Trapezoidal speed plan: approach v_ref at bounded rate, never below 0.

    Near the setpoint the commanded rate tapers proportionally (gain per
    second) instead of holding the full ramp; replanning with a full-rate
    profile flips the first acceleration between +ramp and -ramp whenever the
    current speed straddles a slightly moving reference.
    """
    out = [max(v0, 0.0)]
    for _ in range(count - 1):
        rate = min(max(gain * (v_ref - out[-1]), -ramp), ramp)
        out.append(max(out[-1] + rate * dt, 0.0))
    return out


def path_to_controls(waypoints: list[tuple[float, float, float]],
                     speeds: list[float], params: VehicleParams, dt: float,
                     curvatures: list[float] | None = None) -> list[ControlInput]:
    """Convert a time-indexed pose/speed plan into clipped control inputs.

    Steering inverts the path curvature through delta = atan(wheelbase * K);
    when curvatures are not supplied they are recovered from consecutive
    heading differences. Acceleration is the forward speed difference.
    """
    if len(waypoints) != len(speeds):
        raise ValueError("waypoints and speeds must align")
    n = len(waypoints) - 1
    out = []
    for k in range(n):
        if curvatures is not None:
            kappa = curvatures[k]
        else:
            x0, y0, psi0 = waypoints[k]
            x1, y1, psi1 = waypoints[k + 1]
            dl = max(hypot(x1 - x0, y1 - y0), 1e-6)
            kappa = wrap_angle(psi1 - psi0) / dl
        delta = atan(params.wheelbase * kappa)
        accel = (speeds[k + 1] - speeds[k]) / dt
        out.append(ControlInput(
            min(max(accel, params.a_min), params.a_max),
            min(max(delta, params.steer_min), params.steer_max)))
    return out


def propagate(ego: VehicleState, controls: list[ControlInput],
              params: VehicleParams, dt: float) -> list[VehicleState]:
    states = [ego]
    for u in controls:
        states.append(step(states[-1], u, params, dt))
    return states


def make_fallback(ego: VehicleState, params: VehicleParams, horizon: int,
                  dt: float) -> CandidateTrajectory:
    """Maximum braking with frozen steering; always available."""
    controls = [ControlInput(params.a_min, 0.0)] * horizon
    return CandidateTrajectory(Intention.DECELERATE, controls,
                               propagate(ego, controls, params, dt))


class CandidateGenerator:
    """Builds the per-cycle candidate set, warm-starting spiral solves.

    The interior curvature bound passed to the spiral solver is tightened to
    what the steering range can actually track, so sampled paths stay
    dynamically feasible.
    """

    def __init__(self, lanes: LaneGeometry, params: VehicleParams,
                 a_nom: float = 1.5, ramp: float = 1.5,
                 advance_min: float = 15.0, advance_frac: float = 0.8,
                 residual_tol: float = 0.5, align_tc: float = 0.8):
        self.lanes = lanes
        self.params = params
        self.a_nom = a_nom
        self.ramp = ramp
        self.advance_min = advance_min
        self.advance_frac = advance_frac
        self.residual_tol = residual_tol
        self.align_tc = align_tc
        k_track = tan(params.steer_max) / params.wheelbase
        self.weights = SpiralWeights(k_max=min(0.5, k_track))
        self._warm: dict[tuple, CurvatureKnots] = {}
        self._cap_filt: dict[str, float] = {}
        self._dead_end_s = lanes.source.project(*lanes.dead_end)[0]

    def generate(self, ego: VehicleState, v_ref: float, horizon: int, dt: float,
                 include_change: bool = True, ref_lane: str = "source",
                 kappa0: float = 0.0,
                 leads: dict | None = None) -> list[CandidateTrajectory]:
        """Candidate set for one cycle; empty iff ego passed the dead end.

        kappa0 is the path curvature the ego is currently executing; spirals
        start from it so that consecutive replans keep bending instead of
        restarting the lateral motion from a straight pose every cycle.

        leads maps a lane key to (bumper gap, speed) of the nearest vehicle
        ahead in that corridor. Spiral speed profiles are capped so they do
        not plan into the leader; without the cap a slow leader makes the
        lane-change candidate flicker in and out of feasibility.
        """
        if ref_lane == "source":
            s, off, _ = self.lanes.source.project(ego.x, ego.y)
            # out of road: beyond the dead end while still in the old corridor
            if s > self._dead_end_s and abs(off) <= 0.5 * self.lanes.width:
                return []
        k_max = self.weights.k_max
        kappa0 = min(max(kappa0, -k_max), k_max)
        out = []
        # keeping the doomed source lane is not a following task: let the
        # profile track v_ref and the blocker's safety margin veto it, which
        # forces the commit while there is still room to swing out
        keep_leads = leads if ref_lane == "target" else None
        keep = self._spiral_candidate(ego, ref_lane, v_ref, horizon, dt,
                                      Intention.KEEP_SOURCE_LANE, kappa0,
                                      keep_leads)
        if keep is not None:
            out.append(keep)
        if include_change and ref_lane == "source":
            change = self._spiral_candidate(ego, "target", v_ref, horizon, dt,
                                            Intention.CHANGE_TO_TARGET_LANE,
                                            kappa0, leads)
            if change is not None:
                out.append(change)
        out.append(self._accel_candidate(ego, ref_lane, self.a_nom, horizon,
                                         dt, Intention.ACCELERATE))
        out.append(self._accel_candidate(ego, ref_lane, -self.a_nom, horizon,
                                         dt, Intention.DECELERATE))
        return out

    def _headway_cap(self, lead, t_h: float) -> float:
        """Highest sustained speed that keeps the bumper gap open over t_h."""
        if lead is None:
            return inf
        gap, v_lead = lead
        g_min = 3.0
        if gap <= g_min:
            return max(0.0, v_lead * max(gap, 0.0) / g_min)
        return v_lead + (gap - g_min) / t_h

    def _spiral_candidate(self, ego: VehicleState, goal_lane: str, v_ref: float,
                          horizon: int, dt: float, intention: Intention,
                          kappa0: float = 0.0,
                          leads: dict | None = None) -> CandidateTrajectory | None:
        lane = self.lanes.lane(goal_lane)
        if leads:
            cap = self._headway_cap(leads.get(goal_lane), horizon * dt)
            old = self._cap_filt.get(goal_lane)
            # smooth the cap between cycles: estimate jitter otherwise turns
            # into a reference that wobbles faster than the speed loop
            if cap == inf or old is None or old == inf:
                filt = cap
            else:
                filt = old + 0.25 * (cap - old)
            self._cap_filt[goal_lane] = filt
            v_ref = min(v_ref, filt)
        speeds = speed_profile(ego.v, v_ref, horizon + 1, dt, self.ramp)
        run = sum(speeds[k] * dt for k in range(horizon))
        s0, off0, _ = lane.project(ego.x, ego.y)
        # short remaining offset wants a short goal advance, otherwise the
        # replanned spiral flattens out and the last half metre takes forever
        adv_floor = min(self.advance_min, 6.0 + 1.6 * abs(off0))
        advance = max(self.advance_frac * run, adv_floor)
        if intention is Intention.CHANGE_TO_TARGET_LANE:
            # while still inside the blocked corridor, finish crossing before
            # its dead end; the sharpest legal spiral bounds how short the
            # crossing can get. Once the body has swung clear the dead end no
            # longer constrains the path and the cap would only starve the
            # solver of arc length.
            s_src, off_src, _ = self.lanes.source.project(ego.x, ego.y)
            if abs(off_src) < 0.5 * self.lanes.width:
                room = (self._dead_end_s - s_src
                        - 2.0 * self.params.half_length - 0.5)
                l_min = (8.0 * abs(off0) / self.weights.k_max) ** 0.5
                advance = min(advance, max(room, l_min))
        gx, gy, gpsi = lane.point_at(s0 + advance)
        boundary = PathBoundary(ego.x, ego.y, ego.psi, kappa0, gx, gy, gpsi)
        if boundary.chord < 0.3:
            return None
        key = (intention, goal_lane)
        sol = solve_spiral(boundary, self.weights, init=self._warm.get(key))
        if sol.residual > self.residual_tol:
            self._warm.pop(key, None)
            return None
        self._warm[key] = sol.knots

        sf = sol.knots.s_f
        arcs = [0.0]
        for k in range(horizon):
            arcs.append(arcs[-1] + speeds[k] * dt)
        clamped = [min(a, sf) for a in arcs]
        poses = march_poses(sol.coeffs, (ego.x, ego.y, ego.psi), clamped)
        psi_end = heading_at(sol.coeffs, ego.psi, sf)
        waypoints = []
        ce, se = cos(psi_end), sin(psi_end)
        for a, (x, y, psi) in zip(arcs, poses):
            if a > sf:
                over = a - sf
                waypoints.append((x + over * ce, y + over * se, psi_end))
            else:
                waypoints.append((x, y, psi))
        curvatures = []
        for k in range(horizon):
            mid = 0.5 * (arcs[k] + arcs[k + 1])
            curvatures.append(sol.coeffs.curvature(mid) if mid < sf else 0.0)
        controls = path_to_controls(waypoints, speeds, self.params, dt, curvatures)
        states = propagate(ego, controls, self.params, dt)
        return CandidateTrajectory(intention, controls, states, sol.residual)

    def _accel_candidate(self, ego: VehicleState, ref_lane: str, accel: float,
                         horizon: int, dt: float,
                         intention: Intention) -> CandidateTrajectory:
        """Constant accelerate/decelerate while holding the lane heading.

        Heading alignment is spread over align_tc seconds rather than forced
        in a single step, so the first control stays far from the steering
        stops and switching onto this candidate does not jerk the wheel.
        """
        lane = self.lanes.lane(ref_lane)
        params = self.params
        a = min(max(accel, params.a_min), params.a_max)
        beta_lim = sin(atan(params.lr / params.wheelbase * tan(params.steer_max)))
        delta_cap = atan(params.wheelbase * self.weights.k_max)
        controls = []
        states = [ego]
        for _ in range(horizon):
            st = states[-1]
            heading = lane.project(st.x, st.y)[2]
            dpsi = wrap_angle(heading - st.psi)
            if st.v < 0.5 or dpsi == 0.0:
                delta = 0.0
            else:
                sin_b = min(max(dpsi * params.lr / (st.v * self.align_tc),
                                -beta_lim), beta_lim)
                delta = atan(params.wheelbase / params.lr * tan(asin(sin_b)))
                delta = min(max(delta, -delta_cap), delta_cap)
            u = ControlInput(a, delta)
            controls.append(u)
            states.append(step(st, u, params, dt))
        return CandidateTrajectory(intention, controls, states)
