"""Receding-horizon lane-change planner over intention candidates.

Each cycle: fold the previous committed prediction into the error tracker,
enumerate candidates, roll the interaction predictor along each one, score
discounted stage costs, enforce safety (hard rejection or soft quadratic
penalty), enforce the terminal half-plane, and pick the cheapest feasible
candidate. Max braking with frozen steering is the fallback when nothing
survives. Prediction error inflates the safety buffers directionally, so the
planner grows conservative exactly when its model of others is wrong.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import hypot, tan
from time import perf_counter

from .candidates import (MAX_BRAKE_LABEL, CandidateGenerator,
                         CandidateTrajectory, Intention, make_fallback,
                         propagate)
from .dynamics import ControlInput, VehicleParams, VehicleState, wrap_angle
from .geometry import Lane, LaneGeometry
from .prediction import (AdeTracker, ObservationBuffer, PredictedScene,
                         adaptive_margins, update_ade)
from .safety import (TerminalHalfPlane, check_safety, safety_shortfall,
                     terminal_feasible)

BOOTSTRAP_LABEL = "Bootstrap"


@dataclass(frozen=True)
class CostWeights:
    # balance matters more than magnitude here: lambda_v large enough that
    # sitting still is expensive, actuator weights small enough that pulling
    # away from a stop is affordable, both small against the lane-attraction
    # term once the dead end is near
    lambda_v: float = 0.1       # speed tracking
    lambda_delta: float = 5.0   # steering magnitude
    lambda_a: float = 0.2       # acceleration magnitude
    lambda_ddelta: float = 20.0  # steering rate
    lambda_da: float = 0.5      # acceleration rate
    lambda_g: float = 100.0     # soft safety shortfall
    gamma: float = 0.95         # stage discount


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 30
    dt: float = 0.1
    v_ref: float = 5.0
    eps_min: float = 0.2      # lane-center capture radius ending the maneuver
    hard_safety: bool = True
    eps0: float = 0.5
    n_tracked: int = 3
    track_range: float = 40.0
    buffer_len: int = 8


@dataclass(frozen=True)
class TrackedVehicle:
    vid: int
    x: float
    y: float
    psi: float
    half_width: float = 0.9
    half_length: float = 2.0


@dataclass(frozen=True)
class PlannerObservation:
    """Filtered scene handed to plan_step: ego state plus tracked others."""

    time: float
    ego: VehicleState
    vehicles: tuple[TrackedVehicle, ...]


@dataclass
class CandidateReport:
    label: str
    feasible: bool
    cost: float
    first_violation: int | None
    blocker: int | None = None  # vehicle id behind the violation, if any


@dataclass
class PlanResult:
    time: float
    dt: float
    chosen: str
    controls: list[ControlInput]
    states: list[VehicleState]
    reports: list[CandidateReport]
    fallback: bool
    done: bool
    ade_max: float
    wall_time: float

    def sample(self, tau: float) -> tuple[float, float, float, float]:
        """Reference (x, y, psi, v) at time offset tau from the plan start."""
        n = len(self.states) - 1
        if tau <= 0.0:
            s = self.states[0]
            return s.x, s.y, s.psi, s.v
        k = int(tau / self.dt)
        if k >= n:
            s = self.states[n]
            return s.x, s.y, s.psi, s.v
        f = tau / self.dt - k
        a, b = self.states[k], self.states[k + 1]
        return (a.x + f * (b.x - a.x), a.y + f * (b.y - a.y),
                a.psi + f * wrap_angle(b.psi - a.psi), a.v + f * (b.v - a.v))

    def control_at(self, tau: float) -> ControlInput:
        k = min(max(int(tau / self.dt), 0), len(self.controls) - 1)
        return self.controls[k]


def dynamic_weight(xy: tuple[float, float], dead_end: tuple[float, float]) -> float:
    """Lane-divergence weight growing inversely with dead-end distance."""
    d = hypot(xy[0] - dead_end[0], xy[1] - dead_end[1])
    return 1.0 / max(d, 0.1)


def stage_cost(state: VehicleState, control: ControlInput | None,
               prev_control: ControlInput | None, weights: CostWeights,
               dead_end: tuple[float, float], target_lane: Lane,
               v_ref: float) -> float:
    """One stage of the candidate cost; rate terms need a predecessor."""
    lam = dynamic_weight((state.x, state.y), dead_end)
    dv = state.v - v_ref
    c = lam * target_lane.distance_to(state.x, state.y) + weights.lambda_v * dv * dv
    if control is not None:
        c += (weights.lambda_delta * control.steer * control.steer
              + weights.lambda_a * control.accel * control.accel)
        if prev_control is not None:
            dd = control.steer - prev_control.steer
            da = control.accel - prev_control.accel
            c += weights.lambda_ddelta * dd * dd + weights.lambda_da * da * da
    return c


@dataclass
class EvalContext:
    """Everything evaluate_candidate needs besides the candidate itself."""

    target_lane: Lane
    dead_end: tuple[float, float]
    halfplane: TerminalHalfPlane
    margins: dict
    dims: dict
    ego_params: VehicleParams
    v_ref: float
    hard: bool = True
    merged_off: float = 1.75  # half lane width: terminal poses this close
                              # to the target centerline skip the half-plane
    prev_control: ControlInput | None = None  # what the ego executed last;
                                              # anchors the k=0 rate terms


def evaluate_candidate(candidate: CandidateTrajectory, session,
                       first_scene: PredictedScene, ctx: EvalContext,
                       weights: CostWeights
                       ) -> tuple[bool, float, int | None, int | None]:
    """(feasible, discounted cost, first violating step or None, blocker id).

    The session must already be advanced to the first prediction step
    (first_scene); violations report the 1-based state index. In soft mode
    safety shortfalls become quadratic penalties, but actuation bounds and
    the terminal set stay hard.
    """
    states = candidate.states
    controls = candidate.controls
    p = ctx.ego_params
    for k, u in enumerate(controls):
        if not (p.a_min - 1e-9 <= u.accel <= p.a_max + 1e-9
                and p.steer_min - 1e-9 <= u.steer <= p.steer_max + 1e-9):
            return False, 0.0, k + 1, None
    cost = 0.0
    gk = 1.0
    n = len(controls)
    margins = ctx.margins
    dims = ctx.dims
    for k in range(n):
        cost += gk * stage_cost(states[k], controls[k],
                                controls[k - 1] if k else ctx.prev_control,
                                weights, ctx.dead_end, ctx.target_lane,
                                ctx.v_ref)
        if k == 0:
            scene = first_scene
        else:
            sk = states[k]
            scene = session.advance((sk.x, sk.y), sk.v)
        gk *= weights.gamma
        nxt = states[k + 1]
        for vid, m in margins.items():
            pos = scene.positions.get(vid)
            if pos is None:
                continue
            other = VehicleState(pos[0], pos[1], scene.headings[vid], 0.0)
            if ctx.hard:
                if not check_safety(nxt, p, other, dims[vid], m):
                    return False, cost, k + 1, vid
            else:
                short = safety_shortfall(nxt, p, other, dims[vid], m)
                if short > 0.0:
                    cost += gk * weights.lambda_g * short * short
    cost += gk * stage_cost(states[n], None, None, weights, ctx.dead_end,
                            ctx.target_lane, ctx.v_ref)
    # a horizon ending inside the target corridor has escaped the dead end;
    # the half-plane only guards candidates that end still unmerged
    last = states[n]
    if ctx.target_lane.distance_to(last.x, last.y) > ctx.merged_off:
        if not terminal_feasible(last, ctx.halfplane):
            return False, cost, n, None
    return True, cost, None, None


class Planner:
    """Stateful planner: observation buffer, error tracker, merge latch."""

    def __init__(self, lanes: LaneGeometry, ego_params: VehicleParams,
                 predictor, config: PlannerConfig | None = None,
                 weights: CostWeights | None = None, ego_id: int = 0):
        self.lanes = lanes
        self.ego_params = ego_params
        self.predictor = predictor
        self.config = config or PlannerConfig()
        self.weights = weights or CostWeights()
        self.ego_id = ego_id
        self.generator = CandidateGenerator(lanes, ego_params)
        self.halfplane = TerminalHalfPlane(
            theta=lanes.theta, x_end=lanes.dead_end[0], y_end=lanes.dead_end[1],
            slope=ego_params.steer_max, direction=lanes.direction)
        self.buffer = ObservationBuffer(ego_id, maxlen=self.config.buffer_len,
                                        dt=self.config.dt)
        self.tracker = AdeTracker(window=self.config.horizon)
        self.merged = False
        self._committed: PredictedScene | None = None
        self._kappa = 0.0  # curvature the last chosen plan started with
        self._prev_control: ControlInput | None = None
        self._seen: dict[int, tuple] = {}
        self._v_est: dict[int, float] = {}
        self._last_label: str | None = None

    def _corridor_leads(self, obs: PlannerObservation) -> dict:
        """Nearest vehicle ahead per lane corridor with its speed estimate."""
        out = {}
        for key in ("source", "target"):
            lane = self.lanes.lane(key)
            s_ego = lane.project(obs.ego.x, obs.ego.y)[0]
            best = None
            for tv in obs.vehicles:
                s, off, _ = lane.project(tv.x, tv.y)
                if abs(off) > 0.5 * self.lanes.width or s <= s_ego:
                    continue
                gap = s - s_ego - tv.half_length - self.ego_params.half_length
                if best is None or gap < best[0]:
                    best = (gap, tv.vid)
            if best is not None:
                est = self._v_est.get(best[1])
                if est is not None:
                    speed = hypot(est[0], est[1])
                    if speed < 0.15:
                        speed = 0.0
                    out[key] = (best[0], speed)
        return out

    def plan_step(self, obs: PlannerObservation) -> PlanResult:
        t0 = perf_counter()
        cfg = self.config
        ego = obs.ego
        frame = {self.ego_id: (ego.x, ego.y, ego.psi)}
        dims_map = {}
        actual = {}
        for tv in obs.vehicles:
            frame[tv.vid] = (tv.x, tv.y, tv.psi)
            actual[tv.vid] = (tv.x, tv.y)
            dims_map[tv.vid] = (tv.half_width, tv.half_length)
        if self._committed is not None:
            update_ade(self.tracker, self._committed, actual)
        self.buffer.push(frame, dims_map)
        for tv in obs.vehicles:
            prev = self._seen.get(tv.vid)
            if prev is not None and obs.time > prev[0]:
                span = obs.time - prev[0]
                vx = (tv.x - prev[1]) / span
                vy = (tv.y - prev[2]) / span
                old = self._v_est.get(tv.vid)
                # average the velocity vector, not the speed: position jitter
                # rectifies into a phantom ~0.5 m/s for parked vehicles
                if old is None:
                    est = (vx, vy)
                else:
                    # slow: per-cycle displacement is dominated by filter
                    # jitter, and the headway caps downstream must not wobble
                    est = (old[0] + 0.12 * (vx - old[0]),
                           old[1] + 0.12 * (vy - old[1]))
                self._v_est[tv.vid] = est
            self._seen[tv.vid] = (obs.time, tv.x, tv.y)

        if self.buffer.frames(self.ego_id) < 2:
            # not enough history to reconstruct speeds; hold and observe
            controls = [ControlInput(0.0, 0.0)] * cfg.horizon
            states = propagate(ego, controls, self.ego_params, cfg.dt)
            self._committed = None
            self._kappa = 0.0
            return PlanResult(obs.time, cfg.dt, BOOTSTRAP_LABEL, controls,
                              states, [], False, self.merged, 0.0,
                              perf_counter() - t0)

        if not self.merged and self.lanes.target.distance_to(ego.x, ego.y) < cfg.eps_min:
            self.merged = True
        ref_lane = "target" if self.merged else "source"
        candidates = self.generator.generate(
            ego, cfg.v_ref, cfg.horizon, cfg.dt,
            include_change=not self.merged, ref_lane=ref_lane,
            kappa0=self._kappa, leads=self._corridor_leads(obs))

        # nearest few per lane: a dense adjacent stream must not crowd the
        # dead-ahead blocker out of the safety check
        by_lane: dict[str, list] = {"source": [], "target": []}
        for tv in obs.vehicles:
            dist = hypot(tv.x - ego.x, tv.y - ego.y)
            if dist > cfg.track_range:
                continue
            key = min(("source", "target"),
                      key=lambda k: abs(self.lanes.lane(k).project(tv.x, tv.y)[1]))
            by_lane[key].append((dist, tv.vid, tv))
        tracked = []
        for group in by_lane.values():
            group.sort(key=lambda r: (r[0], r[1]))
            tracked.extend(tv for _, _, tv in group[:cfg.n_tracked])
        ade_max = self.tracker.max_ade([tv.vid for tv in tracked])
        margins = {tv.vid: adaptive_margins(ade_max, tv.psi, cfg.eps0)
                   for tv in tracked}
        dims = {tv.vid: VehicleParams(half_width=tv.half_width,
                                      half_length=tv.half_length)
                for tv in tracked}
        ctx = EvalContext(self.lanes.target, self.lanes.dead_end,
                          self.halfplane, margins, dims, self.ego_params,
                          cfg.v_ref, cfg.hard_safety,
                          merged_off=0.5 * self.lanes.width,
                          prev_control=self._prev_control)

        base = self.predictor.start(self.buffer)
        first_scene = base.advance((ego.x, ego.y), ego.v)
        self._committed = first_scene

        reports = []
        best: CandidateTrajectory | None = None
        best_cost = float("inf")
        for cand in candidates:
            feasible, cost, violation, blocker = evaluate_candidate(
                cand, base.clone(), first_scene, ctx, self.weights)
            reports.append(CandidateReport(cand.label, feasible, cost,
                                           violation, blocker))
            # commitment to an in-progress swing only: measurement noise moves
            # costs by a few percent each cycle, and flip-flopping between the
            # change and a lane-hold executes a blend of first controls that
            # drifts into the blocker instead of arcing past it
            ranked_cost = cost
            if (cand.intention is Intention.CHANGE_TO_TARGET_LANE
                    and self._last_label == cand.label):
                ranked_cost = 0.8 * cost
            if feasible and ranked_cost < best_cost:
                best, best_cost = cand, ranked_cost

        if best is None:
            chosen = make_fallback(ego, self.ego_params, cfg.horizon, cfg.dt)
            label = MAX_BRAKE_LABEL
            self._kappa = 0.0
            self._last_label = None
        else:
            chosen = best
            label = chosen.label
            self._kappa = tan(chosen.controls[0].steer) / self.ego_params.wheelbase
            self._last_label = label
        self._prev_control = chosen.controls[0]
        return PlanResult(obs.time, cfg.dt, label, chosen.controls,
                          chosen.states, reports, best is None, self.merged,
                          ade_max, perf_counter() - t0)
