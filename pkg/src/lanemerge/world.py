"""Closed-loop traffic environment.

Agents follow the intelligent driver model along their lane, gated by yield
zones (zone A: forced stop for any vehicle overlapping the agent's own lane
corridor ahead; zone B: probabilistic stop, cooperativeness eta_c, for a
vehicle ahead near the adjacent lane centerline), with optional MOBIL lane
changes. A Stop decision turns the intruder into a virtual stopped leader for
IDM, which realizes stop-and-wait behavior and makes zone-A yields provably
non-accelerating.

Sensor noise is zero-mean Gaussian in each vehicle's body frame; estimates
are smoothed by per-axis constant-velocity Kalman filters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import atan, asin, cos, isfinite, sin, sqrt, tan

import numpy as np

from .dynamics import ControlInput, VehicleParams, VehicleState, step, wrap_angle
from .geometry import LaneGeometry
from .safety import min_circle_distance

EMERGENCY_DECEL = -7.5  # applied when the bumper gap is gone (m/s^2)


@dataclass(frozen=True)
class DriverParams:
    """IDM/yield parameters of one simulated driver."""

    v_ref: float = 3.5     # desired speed (m/s)
    headway: float = 1.5   # safe time headway (s)
    a_max: float = 3.0     # max acceleration (m/s^2)
    b_comf: float = 2.0    # comfortable deceleration (m/s^2)
    exponent: float = 4.0  # free-road acceleration exponent
    s0: float = 2.0        # minimum gap (m)
    eta_c: float = 0.5     # cooperativeness: zone-B stop probability
    eta_p: float = 0.0     # zone-B lateral range offset (m)


def midpoint_driver(eta_c: float = 0.5) -> DriverParams:
    """Midpoints of the sampling ranges used by the benchmark scenarios."""
    return DriverParams(v_ref=3.5, headway=1.5, a_max=3.0, b_comf=2.0,
                        exponent=4.0, s0=2.0, eta_c=eta_c, eta_p=0.0)


def sample_driver(rng: np.random.Generator, eta_c: float | None = None) -> DriverParams:
    """Draw driver parameters from the benchmark uniform ranges."""
    return DriverParams(
        v_ref=rng.uniform(2.0, 5.0),
        headway=rng.uniform(1.0, 2.0),
        a_max=rng.uniform(2.5, 3.5),
        b_comf=rng.uniform(1.5, 2.5),
        exponent=rng.uniform(3.5, 4.5),
        s0=rng.uniform(1.0, 3.0),
        eta_c=rng.uniform(0.0, 1.0) if eta_c is None else eta_c,
        eta_p=rng.uniform(-0.15, 0.15),
    )


@dataclass
class Vehicle:
    vid: int
    state: VehicleState
    params: VehicleParams
    driver: DriverParams | None  # None = static obstacle (e.g. the broken car)
    lane: str                    # "source" | "target"
    role: str = "agent"          # "agent" | "ego" | "static"


@dataclass
class WorldState:
    vehicles: list[Vehicle]
    lanes: LaneGeometry
    ego_id: int
    time: float = 0.0
    rng: np.random.Generator | None = None
    yield_draws: dict = field(default_factory=dict)
    collisions: list = field(default_factory=list)
    allow_lane_changes: bool = False

    def ego(self) -> Vehicle:
        for v in self.vehicles:
            if v.vid == self.ego_id:
                return v
        raise KeyError("ego not present")

    def vehicle(self, vid: int) -> Vehicle:
        for v in self.vehicles:
            if v.vid == vid:
                return v
        raise KeyError(vid)


def idm_accel(v: float, gap: float | None, dv: float, p: DriverParams) -> float:
    """IDM acceleration; gap None means free road, gap <= 0 is emergency.

    s* = s0 + v*T + v*dv / (2*sqrt(a_max*b_comf)); a = a_max*(1 - (v/v_ref)^d
    - (s*/gap)^2). dv is the closing speed (own minus leader).
    """
    free = 1.0 - (v / p.v_ref) ** p.exponent
    if gap is None:
        return p.a_max * free
    if gap <= 0.0:
        return EMERGENCY_DECEL
    s_star = p.s0 + v * p.headway + v * dv / (2.0 * sqrt(p.a_max * p.b_comf))
    return p.a_max * (free - (s_star / gap) ** 2)


def yield_decision(zone: str | None, eta_c: float, key: tuple,
                   draws: dict, rng: np.random.Generator | None) -> bool:
    """Stop/Proceed for one intruder. Zone A stops unconditionally.

    Zone B draws a Bernoulli(eta_c) once per intruder episode and holds it;
    the caller clears `key` from `draws` when the episode ends. Degenerate
    eta_c (0 or 1) never consumes randomness. With rng=None the draw is
    replaced by the expected response (Stop iff eta_c >= 0.5), which is what
    prediction rollouts use so that plans do not churn on simulated coins.
    """
    if zone == "A":
        return True
    if zone == "B":
        if key not in draws:
            if eta_c >= 1.0:
                draws[key] = True
            elif eta_c <= 0.0:
                draws[key] = False
            elif rng is None:
                draws[key] = eta_c >= 0.5
            else:
                draws[key] = bool(rng.random() < eta_c)
        return draws[key]
    return False


@dataclass(frozen=True)
class AgentView:
    """Snapshot row consumed by the shared driver-decision core."""

    vid: int
    x: float
    y: float
    psi: float
    v: float
    half_width: float
    half_length: float
    lane: str
    role: str
    driver: DriverParams | None


_ROLE_AGENT, _ROLE_EGO, _ROLE_STATIC = 0, 1, 2
_ROLE_CODE = {"agent": _ROLE_AGENT, "ego": _ROLE_EGO, "static": _ROLE_STATIC}


def _project_lists(lane, xs, ys, n, s_out, o_out):
    """Batch point-to-lane projection into preallocated lists."""
    seg = lane._seg
    if len(seg) == 1:
        ax, ay, ux, uy, length, _, _ = seg[0]
        for i in range(n):
            dx = xs[i] - ax
            dy = ys[i] - ay
            t = dx * ux + dy * uy
            if t < 0.0:
                t = 0.0
            elif t > length:
                t = length
            s_out[i] = t
            o_out[i] = ux * (dy - uy * t) - uy * (dx - ux * t)
    else:
        for i in range(n):
            s_out[i], o_out[i], _ = lane.project(xs[i], ys[i])


def _decide(n, vids, xs, ys, vs, hws, hls, lane_idx, roles, drivers,
            lanes: LaneGeometry, draws: dict,
            rng: np.random.Generator | None, out: list) -> list:
    """Core synchronous driver decision over parallel state lists.

    Shared by the simulator step and the model-rollout predictor so that
    predictions replicate simulated behavior exactly. lane_idx holds 0 for
    source, 1 for target; out receives one acceleration per agent row (None
    elsewhere).
    """
    s0l = [0.0] * n
    o0l = [0.0] * n
    s1l = [0.0] * n
    o1l = [0.0] * n
    _project_lists(lanes.source, xs, ys, n, s0l, o0l)
    _project_lists(lanes.target, xs, ys, n, s1l, o1l)
    half = 0.5 * lanes.width
    eff = lane_idx[:]
    for i in range(n):
        if roles[i] == _ROLE_EGO:
            eff[i] = 0 if abs(o0l[i]) <= abs(o1l[i]) else 1

    for i in range(n):
        if roles[i] != _ROLE_AGENT:
            out[i] = None
            continue
        d = drivers[i]
        v = vs[i]
        if lane_idx[i] == 0:
            a_s, s_own, o_own, o_adj = s0l[i], s0l, o0l, o1l
        else:
            a_s, s_own, o_own, o_adj = s1l[i], s1l, o1l, o0l
        # reach uses the nominal speed: a driver who has already stopped to
        # yield keeps honoring the zone instead of lunging the moment the
        # intruder pulls ahead of the shrunken v*T window
        reach = d.s0 + d.v_ref * d.headway
        own = lane_idx[i]
        vid_i = vids[i]
        hl_i = hls[i]
        leader_ds = None
        leader_gap = 0.0
        leader_dv = 0.0
        stop_gap = None
        for j in range(n):
            if j == i:
                continue
            ds = s_own[j] - a_s
            if ds <= 0.0:
                if draws:
                    draws.pop((vid_i, vids[j]), None)
                continue
            bumper = ds - hl_i - hls[j]
            if eff[j] == own:
                if draws:
                    draws.pop((vid_i, vids[j]), None)
                if leader_ds is None or ds < leader_ds:
                    leader_ds, leader_gap, leader_dv = ds, bumper, v - vs[j]
                continue
            if roles[j] == _ROLE_STATIC:
                continue  # a parked obstacle in another lane is not an intruder
            zone = None
            if bumper <= reach:
                if abs(o_own[j]) < half + hws[j]:
                    zone = "A"
                elif abs(o_adj[j]) <= half + d.eta_p:
                    zone = "B"
            key = (vid_i, vids[j])
            if zone is None:
                if draws:
                    draws.pop(key, None)
            elif yield_decision(zone, d.eta_c, key, draws, rng):
                if stop_gap is None or bumper < stop_gap:
                    stop_gap = bumper
        acc = idm_accel(v, None, 0.0, d)
        if leader_ds is not None:
            a2 = idm_accel(v, leader_gap, leader_dv, d)
            if a2 < acc:
                acc = a2
        if stop_gap is not None:
            a2 = idm_accel(v, stop_gap, v, d)
            if a2 < acc:
                acc = a2
        if acc < EMERGENCY_DECEL:
            acc = EMERGENCY_DECEL
        elif acc > d.a_max:
            acc = d.a_max
        out[i] = acc
    return out


def decide_accels(views: list[AgentView], lanes: LaneGeometry,
                  draws: dict, rng: np.random.Generator | None) -> dict[int, float]:
    """Synchronous IDM + yield decision for every agent view."""
    n = len(views)
    vids = [v.vid for v in views]
    accels = _decide(
        n, vids,
        [v.x for v in views], [v.y for v in views], [v.v for v in views],
        [v.half_width for v in views], [v.half_length for v in views],
        [0 if v.lane == "source" else 1 for v in views],
        [_ROLE_CODE[v.role] for v in views],
        [v.driver for v in views],
        lanes, draws, rng, [None] * n)
    return {vids[i]: accels[i] for i in range(n) if accels[i] is not None}


def mobil_step(agent: AgentView, views: list[AgentView], lanes: LaneGeometry,
               politeness: float = 0.5, threshold: float = 0.1) -> str | None:
    """MOBIL lane-change decision for one agent; returns the new lane or None.

    Incentive: (a_new - a_cur) + politeness * (follower deltas in both lanes)
    must exceed the switching threshold; the safety criterion vetoes changes
    that would force the new follower below -b_comf.
    """
    d = agent.driver
    own = agent.lane
    other = lanes.adjacent(own)

    def neighbors(lane_name: str):
        lane = lanes.lane(lane_name)
        a_s = lane.project(agent.x, agent.y)[0]
        lead = follow = None
        for o in views:
            if o.vid == agent.vid or o.lane != lane_name:
                continue
            o_s = lane.project(o.x, o.y)[0]
            ds = o_s - a_s
            gap = abs(ds) - agent.half_length - o.half_length
            if ds > 0.0 and (lead is None or ds < lead[0]):
                lead = (ds, gap, o)
            elif ds <= 0.0 and (follow is None or -ds < follow[0]):
                follow = (-ds, gap, o)
        return lead, follow

    def accel_for(view: AgentView, lead) -> float:
        if lead is None:
            return idm_accel(view.v, None, 0.0, view.driver)
        return idm_accel(view.v, lead[1], view.v - lead[2].v, view.driver)

    lead_cur, follow_cur = neighbors(own)
    lead_new, follow_new = neighbors(other)

    a_cur = accel_for(agent, lead_cur)
    a_new = accel_for(agent, lead_new)

    gain_followers = 0.0
    if follow_new is not None:
        _, gap_f, f = follow_new
        before = accel_for(f, lead_new)
        after = idm_accel(f.v, gap_f, f.v - agent.v, f.driver)
        if after < -f.driver.b_comf:
            return None  # safety veto
        gain_followers += after - before
    if follow_cur is not None:
        _, _, f = follow_cur
        before = idm_accel(
            f.v,
            lanes.lane(own).project(agent.x, agent.y)[0]
            - lanes.lane(own).project(f.x, f.y)[0]
            - f.half_length - agent.half_length,
            f.v - agent.v, f.driver)
        after = accel_for(f, lead_cur)
        gain_followers += after - before

    if a_new - a_cur + politeness * gain_followers > threshold:
        return other
    return None


def _lane_steer(state: VehicleState, lanes: LaneGeometry, lane_name: str,
                params: VehicleParams, dt: float) -> float:
    """Steering that holds an agent on its lane centerline (0 when aligned)."""
    _, off, heading = lanes.lane(lane_name).project(state.x, state.y)
    if state.v < 0.2:
        return 0.0
    desired = heading - atan(off / 6.0)
    dpsi = wrap_angle(desired - state.psi)
    if dpsi == 0.0:
        return 0.0
    sin_b = dpsi * params.lr / (state.v * dt)
    limit = sin(atan(params.lr / params.wheelbase * tan(params.steer_max)))
    sin_b = min(max(sin_b, -limit), limit)
    beta = asin(sin_b)
    delta = atan(params.wheelbase / params.lr * tan(beta))
    return min(max(delta, params.steer_min), params.steer_max)


def make_views(world: WorldState) -> list[AgentView]:
    return [AgentView(v.vid, v.state.x, v.state.y, v.state.psi, v.state.v,
                      v.params.half_width, v.params.half_length, v.lane,
                      v.role, v.driver)
            for v in world.vehicles]


def step_world(world: WorldState, ego_controls: ControlInput, dt: float) -> WorldState:
    """Advance the world one tick (synchronous update); mutates and returns it.

    Agent decisions are taken from the pre-step snapshot; the ego applies the
    supplied controls clipped to its own bounds. Ego-involved overlaps are
    recorded as collision events.
    """
    views = make_views(world)
    accels = decide_accels(views, world.lanes, world.yield_draws, world.rng)

    if world.allow_lane_changes:
        by_vid = {v.vid: v for v in world.vehicles}
        for a in views:
            if a.role == "agent" and a.vid in accels:
                new_lane = mobil_step(a, views, world.lanes)
                if new_lane is not None:
                    by_vid[a.vid].lane = new_lane

    ego = world.ego()
    for veh in world.vehicles:
        if veh.role == "static":
            continue
        if veh.vid == world.ego_id:
            a = min(max(ego_controls.accel, veh.params.a_min), veh.params.a_max)
            d = min(max(ego_controls.steer, veh.params.steer_min), veh.params.steer_max)
            veh.state = step(veh.state, ControlInput(a, d), veh.params, dt)
        else:
            steer = _lane_steer(veh.state, world.lanes, veh.lane, veh.params, dt)
            veh.state = step(veh.state, ControlInput(accels[veh.vid], steer),
                             veh.params, dt)

    world.time += dt
    for veh in world.vehicles:
        if veh.vid == world.ego_id:
            continue
        if min_circle_distance(ego.state, ego.params, veh.state, veh.params) <= 0.0:
            world.collisions.append((world.time, world.ego_id, veh.vid))
    return world


# --- sensing and filtering -------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    """Body-frame Gaussian noise levels; scales multiply the base stds."""

    loc_std_lng: float = 0.3
    loc_std_lat: float = 0.1
    loc_std_psi: float = 0.08
    per_std_lng: float = 0.1
    per_std_lat: float = 0.1
    per_std_psi: float = 0.08
    loc_scale: float = 1.0
    per_scale: float = 1.0

    @classmethod
    def scaled(cls, scale: float, target: str = "both") -> "NoiseConfig":
        loc = scale if target in ("localization", "both") else 1.0
        per = scale if target in ("perception", "both") else 1.0
        return cls(loc_scale=loc, per_scale=per)


@dataclass(frozen=True)
class SensedVehicle:
    vid: int
    x: float
    y: float
    psi: float
    half_width: float
    half_length: float


@dataclass(frozen=True)
class RawObservation:
    time: float
    ego_x: float
    ego_y: float
    ego_psi: float
    ego_v: float  # odometry speed, not perturbed
    vehicles: tuple[SensedVehicle, ...]


def _perturb(x: float, y: float, psi: float, std_lng: float, std_lat: float,
             std_psi: float, rng: np.random.Generator) -> tuple[float, float, float]:
    if std_lng == 0.0 and std_lat == 0.0 and std_psi == 0.0:
        return x, y, psi
    dl = rng.normal(0.0, std_lng) if std_lng > 0.0 else 0.0
    dt_ = rng.normal(0.0, std_lat) if std_lat > 0.0 else 0.0
    dp = rng.normal(0.0, std_psi) if std_psi > 0.0 else 0.0
    c, s = cos(psi), sin(psi)
    return x + dl * c - dt_ * s, y + dl * s + dt_ * c, wrap_angle(psi + dp)


def sense(world: WorldState, noise: NoiseConfig, rng: np.random.Generator) -> RawObservation:
    """Noisy snapshot: ego pose via localization noise, others via perception."""
    ego = world.ego()
    ls = noise.loc_scale
    ex, ey, epsi = _perturb(ego.state.x, ego.state.y, ego.state.psi,
                            noise.loc_std_lng * ls, noise.loc_std_lat * ls,
                            noise.loc_std_psi * ls, rng)
    ps = noise.per_scale
    out = []
    for veh in world.vehicles:
        if veh.vid == world.ego_id:
            continue
        vx, vy, vpsi = _perturb(veh.state.x, veh.state.y, veh.state.psi,
                                noise.per_std_lng * ps, noise.per_std_lat * ps,
                                noise.per_std_psi * ps, rng)
        out.append(SensedVehicle(veh.vid, vx, vy, vpsi,
                                 veh.params.half_width, veh.params.half_length))
    return RawObservation(world.time, ex, ey, epsi, ego.state.v, tuple(out))


@dataclass(frozen=True)
class FilterState:
    """Two decoupled (pos, vel) constant-velocity Kalman filters.

    cov_* holds the packed symmetric 2x2 covariance (p11, p12, p22).
    """

    x: float
    y: float
    vx: float
    vy: float
    cov_x: tuple[float, float, float]
    cov_y: tuple[float, float, float]
    q_std: float = 2.0

    @classmethod
    def init(cls, x: float, y: float, var_x: float, var_y: float,
             q_std: float = 2.0) -> "FilterState":
        var_x = max(var_x, 1e-12)
        var_y = max(var_y, 1e-12)
        return cls(x, y, 0.0, 0.0, (var_x, 0.0, 25.0), (var_y, 0.0, 25.0), q_std)

    @property
    def cov_trace(self) -> float:
        return self.cov_x[0] + self.cov_x[2] + self.cov_y[0] + self.cov_y[2]


def _kf_axis(pos: float, vel: float, cov: tuple[float, float, float],
             z: float | None, r: float, dt: float, q_std: float):
    p11, p12, p22 = cov
    # predict
    pos += vel * dt
    q = q_std * q_std
    p11 += 2.0 * dt * p12 + dt * dt * p22 + q * dt ** 4 / 4.0
    p12 += dt * p22 + q * dt ** 3 / 2.0
    p22 += q * dt * dt
    if z is None:
        return pos, vel, (p11, p12, p22)
    s = p11 + max(r, 1e-12)
    k1 = p11 / s
    k2 = p12 / s
    innov = z - pos
    pos += k1 * innov
    vel += k2 * innov
    return pos, vel, ((1.0 - k1) * p11, (1.0 - k1) * p12, p22 - k2 * p12)


def kf_update(f: FilterState, meas: tuple[float, float] | None,
              dt: float, meas_var: tuple[float, float]) -> FilterState:
    """Predict-update on both axes; non-finite or missing measurement predicts only."""
    zx = zy = None
    if meas is not None and isfinite(meas[0]) and isfinite(meas[1]):
        zx, zy = meas
    x, vx, cx = _kf_axis(f.x, f.vx, f.cov_x, zx, meas_var[0], dt, f.q_std)
    y, vy, cy = _kf_axis(f.y, f.vy, f.cov_y, zy, meas_var[1], dt, f.q_std)
    return FilterState(x, y, vx, vy, cx, cy, f.q_std)


def body_noise_var(psi: float, std_lng: float, std_lat: float) -> tuple[float, float]:
    """World-axis measurement variances of body-frame noise at heading psi."""
    c2 = cos(psi) ** 2
    s2 = sin(psi) ** 2
    vl = std_lng * std_lng
    vt = std_lat * std_lat
    return vl * c2 + vt * s2, vl * s2 + vt * c2
