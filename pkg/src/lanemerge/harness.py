"""Closed-loop runner and batch evaluation.

One run wires the full pipeline at two rates: sensing/filtering/tracking at
the control period, planning every plan_dt/control_dt-th tick. Verdicts are
Success (goal arc reached on the target lane, small offset), Collision
(ego footprint overlap), or Timeout. Batch aggregation mirrors the usual
benchmark table: rates, completion times, effort channels, planning time.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from math import sin

import numpy as np

from .control import (LateralConfig, SpeedPid, command_to_accel,
                      deviation_bound, lateral_mpc, smooth_steer)
from .dynamics import ControlInput, VehicleState, slip_angle, wrap_angle
from .planner import (BOOTSTRAP_LABEL, CostWeights, Planner, PlannerConfig,
                      PlannerObservation, TrackedVehicle)
from .prediction import (ConstantVelocityPredictor, ExternalPredictor,
                         ModelRolloutPredictor)
from .scenario import ScenarioSpec, build_layout, layout_to_world
from .world import FilterState, body_noise_var, kf_update, sense, step_world


@dataclass
class RunOutcome:
    verdict: str
    seed: int
    duration: float
    steps: int
    merge_time: float | None
    plan_calls: int
    plan_wall_mean: float
    plan_wall_max: float
    fallback_plans: int
    deviation_ok: bool
    collisions: list
    jerk_lng_mean: float
    steer_rate_mean: float
    steer_rate_max: float
    steer_jerk_mean: float
    throttle_avg: float
    throttle_jerk_mean: float
    brake_avg: float
    brake_jerk_mean: float
    accel_cmd_max: float
    trace: list | None = None

    @property
    def success(self) -> bool:
        return self.verdict == "Success"


def make_predictor(kind: str, lanes, meta, ego_id: int, plan_dt: float,
                   external_command=(), buffer_len: int = 8):
    if kind == "rollout":
        return ModelRolloutPredictor(
            lanes, meta.drivers, meta.dims, plan_dt, ego_id,
            ego_dims=(meta.ego_params.half_width, meta.ego_params.half_length),
            static_ids=meta.static_ids, seed=meta.predictor_seed)
    if kind == "cv":
        return ConstantVelocityPredictor()
    if kind == "external":
        if not external_command:
            raise ValueError("external predictor needs a command line")
        return ExternalPredictor(list(external_command), t_obs=buffer_len)
    raise KeyError(f"unknown predictor {kind!r}")


def _trace_row(world, cmd, accel, steer, label, ade, reports=None,
               ref=None) -> dict:
    ego = world.ego()
    others = []
    for v in world.vehicles:
        if v.vid == world.ego_id:
            continue
        others.append([v.vid, v.state.x, v.state.y, v.state.psi, v.state.v])
    row = {
        "t": world.time,
        "ego": [ego.state.x, ego.state.y, ego.state.psi, ego.state.v],
        "cmd": cmd, "accel": accel, "steer": steer,
        "plan": label, "ade": ade, "others": others,
    }
    if ref is not None:
        row["ref"] = ref
    if reports is not None:
        row["cands"] = [[r.label, int(r.feasible),
                         r.cost if r.feasible else None, r.first_violation,
                         r.blocker]
                        for r in reports]
    return row


def _mean_abs_diff(series: list, dt: float) -> tuple[float, float]:
    if len(series) < 2:
        return 0.0, 0.0
    total = 0.0
    peak = 0.0
    prev = series[0]
    for v in series[1:]:
        d = abs(v - prev) / dt
        total += d
        if d > peak:
            peak = d
        prev = v
    return total / (len(series) - 1), peak


def run_scenario(spec: ScenarioSpec, seed: int, keep_trace: bool = False,
                 layout: dict | None = None,
                 weights: CostWeights | None = None) -> RunOutcome:
    """Execute one seeded closed-loop run to a verdict."""
    if layout is None:
        layout = build_layout(spec, seed)
    world, meta = layout_to_world(layout)
    lanes = world.lanes
    sim = meta.sim
    dt_c = float(sim["control_dt"])
    dt_p = float(sim["plan_dt"])
    plan_every = max(int(round(dt_p / dt_c)), 1)
    if abs(plan_every * dt_c - dt_p) > 1e-9:
        raise ValueError("plan_dt must be an integer multiple of control_dt")

    noise = meta.noise
    nrng = np.random.default_rng(meta.noise_seed)
    pcfg = PlannerConfig(dt=dt_p, v_ref=meta.ego_v_ref,
                         hard_safety=bool(sim["hard_safety"]))
    predictor = make_predictor(sim["predictor"], lanes, meta, world.ego_id,
                               dt_p, sim.get("external_command", ()),
                               pcfg.buffer_len)
    planner = Planner(lanes, meta.ego_params, predictor, pcfg, weights,
                      ego_id=world.ego_id)
    # replanning restarts the speed reference at the measured state every
    # cycle, so the per-tick loop only cleans up residuals; default gains
    # amplify measurement noise into ~1 m/s^2 brake spikes
    pid = SpeedPid(PidGains(kp=0.25, ki=0.05, kd=0.05))
    lat_cfg = LateralConfig()

    target = lanes.target
    ego0 = world.ego().state
    goal_s = target.project(ego0.x, ego0.y)[0] + float(sim["goal_advance"])
    loc_zero = noise.loc_scale == 0.0
    per_zero = noise.per_scale == 0.0

    ego_filter: FilterState | None = None
    psi_hat: float | None = None
    psi_alpha = 0.3
    prev_steer = 0.0
    steer_filt = 0.0
    cmd_filt = 0.0
    ff_filt: float | None = None
    filters: dict[int, FilterState] = {}
    cmd_hist: list[float] = []
    acc_hist: list[float] = []
    steer_hist: list[float] = []
    wall_times: list[float] = []
    fallbacks = 0
    plan_calls = 0
    merge_time = None
    deviation_ok = True
    verdict = "Timeout"
    plan = None
    plan_time = 0.0
    trace = [_trace_row(world, None, None, None, None, None)] if keep_trace else None

    n_ticks = int(round(float(sim["time_limit"]) / dt_c))
    steps = 0
    try:
        for tick in range(n_ticks):
            raw = sense(world, noise, nrng)
            if loc_zero:
                e = world.ego().state
                ex, ey, epsi = e.x, e.y, e.psi
            else:
                var = body_noise_var(raw.ego_psi,
                                     noise.loc_std_lng * noise.loc_scale,
                                     noise.loc_std_lat * noise.loc_scale)
                if ego_filter is None:
                    ego_filter = FilterState.init(raw.ego_x, raw.ego_y, *var)
                else:
                    ego_filter = kf_update(ego_filter, (raw.ego_x, raw.ego_y),
                                           dt_c, var)
                if psi_hat is None:
                    psi_hat = raw.ego_psi
                else:
                    # complementary filter: yaw-rate prediction from the last
                    # steering command, light correction from the noisy compass
                    beta = slip_angle(prev_steer, meta.ego_params)
                    psi_hat += raw.ego_v / meta.ego_params.lr * sin(beta) * dt_c
                    psi_hat = wrap_angle(
                        psi_hat + psi_alpha * wrap_angle(raw.ego_psi - psi_hat))
                ex, ey, epsi = ego_filter.x, ego_filter.y, psi_hat
            ego_v = raw.ego_v

            tracked = []
            seen = set()
            for sv in raw.vehicles:
                seen.add(sv.vid)
                if per_zero:
                    x, y = sv.x, sv.y
                else:
                    var = body_noise_var(sv.psi,
                                         noise.per_std_lng * noise.per_scale,
                                         noise.per_std_lat * noise.per_scale)
                    f = filters.get(sv.vid)
                    if f is None:
                        f = FilterState.init(sv.x, sv.y, *var)
                    else:
                        f = kf_update(f, (sv.x, sv.y), dt_c, var)
                    filters[sv.vid] = f
                    x, y = f.x, f.y
                tracked.append(TrackedVehicle(sv.vid, x, y, sv.psi,
                                              sv.half_width, sv.half_length))
            for vid in list(filters):
                if vid not in seen:
                    del filters[vid]

            if tick % plan_every == 0:
                pobs = PlannerObservation(world.time,
                                          VehicleState(ex, ey, epsi, ego_v),
                                          tuple(tracked))
                plan = planner.plan_step(pobs)
                plan_time = world.time
                plan_calls += 1
                wall_times.append(plan.wall_time)
                if plan.fallback:
                    fallbacks += 1
                if plan.done and merge_time is None:
                    merge_time = world.time

            tau = world.time + dt_c - plan_time
            rx, ry, rpsi, rv = plan.sample(tau)
            planned_steer = None
            raw_steer = None
            if plan.fallback:
                # emergency stop is applied open loop, not tracked
                pid.reset()
                cmd = -1.0
                accel = meta.ego_params.a_min
                steer = 0.0
            else:
                planned = plan.control_at(world.time - plan_time + 1e-12)
                ff = (planned.accel / meta.ego_params.a_max
                      if planned.accel >= 0.0
                      else planned.accel / -meta.ego_params.a_min)
                ff_filt = ff if ff_filt is None else ff_filt + 0.35 * (ff - ff_filt)
                # the feedback residual carries the measurement noise and is
                # low-passed harder than the planned feedforward
                fb = pid.step(rv, ego_v, dt_c)
                cmd_filt += 0.2 * (fb - cmd_filt)
                cmd = min(max(ff_filt + cmd_filt, -1.0), 1.0)
                accel = command_to_accel(cmd, meta.ego_params)
                raw_steer = lateral_mpc(VehicleState(ex, ey, epsi, ego_v),
                                        (rx, ry, rpsi), meta.ego_params, dt_c,
                                        lat_cfg)
                planned_steer = planned.steer
                steer_filt += lat_cfg.fb_alpha * (raw_steer - steer_filt)
                steer = smooth_steer(steer_filt, planned.steer, prev_steer,
                                     dt_c, lat_cfg)
                if plan.chosen != BOOTSTRAP_LABEL:
                    if not deviation_bound(planned.steer, steer):
                        deviation_ok = False
            prev_steer = steer

            step_world(world, ControlInput(accel, steer), dt_c)
            steps += 1
            cmd_hist.append(cmd)
            acc_hist.append(accel)
            steer_hist.append(steer)
            if keep_trace:
                trace.append(_trace_row(world, cmd, accel, steer, plan.chosen,
                                        plan.ade_max,
                                        plan.reports if tick % plan_every == 0
                                        else None,
                                        ref=[rx, ry, rpsi, rv,
                                             planned_steer, raw_steer]))

            if world.collisions:
                verdict = "Collision"
                break
            est = world.ego().state
            s, off, _ = target.project(est.x, est.y)
            if s >= goal_s and abs(off) <= 0.5:
                verdict = "Success"
                break
    finally:
        close = getattr(predictor, "close", None)
        if close is not None:
            close()

    jerk_mean, _ = _mean_abs_diff(acc_hist, dt_c)
    sr_mean, sr_max = _mean_abs_diff(steer_hist, dt_c)
    steer_rates = [(b - a) / dt_c for a, b in zip(steer_hist, steer_hist[1:])]
    sj_mean, _ = _mean_abs_diff(steer_rates, dt_c) if steer_rates else (0.0, 0.0)
    thr = [max(c, 0.0) for c in cmd_hist]
    brk = [min(c, 0.0) for c in cmd_hist]
    thr_j, _ = _mean_abs_diff(thr, dt_c)
    brk_j, _ = _mean_abs_diff(brk, dt_c)
    return RunOutcome(
        verdict=verdict, seed=seed, duration=world.time, steps=steps,
        merge_time=merge_time, plan_calls=plan_calls,
        plan_wall_mean=sum(wall_times) / len(wall_times) if wall_times else 0.0,
        plan_wall_max=max(wall_times) if wall_times else 0.0,
        fallback_plans=fallbacks, deviation_ok=deviation_ok,
        collisions=list(world.collisions),
        jerk_lng_mean=jerk_mean, steer_rate_mean=sr_mean,
        steer_rate_max=sr_max, steer_jerk_mean=sj_mean,
        throttle_avg=sum(thr) / len(thr) if thr else 0.0,
        throttle_jerk_mean=thr_j,
        brake_avg=sum(brk) / len(brk) if brk else 0.0,
        brake_jerk_mean=brk_j,
        accel_cmd_max=max(thr) if thr else 0.0,
        trace=trace)


_COLUMNS = ["label", "runs", "success_rate", "collision_rate", "timeout_rate",
            "time_mean", "merge_time_mean", "jerk_lng_mean",
            "steer_rate_mean", "steer_rate_max", "steer_jerk_mean",
            "throttle_avg", "throttle_jerk_mean", "brake_avg",
            "brake_jerk_mean", "accel_cmd_max", "plan_wall_mean",
            "plan_wall_max", "fallback_rate"]


@dataclass
class MetricsRow:
    """One aggregated batch, column layout fixed by _COLUMNS.

    Rates are fractions of runs; effort channels average per-run means, with
    smoothness channels (jerk, steering rates) taken over successful runs
    only; time_mean likewise. *_jerk columns are mean |per-tick derivative|
    of the named command channel.
    """

    label: str
    runs: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    time_mean: float | None
    merge_time_mean: float | None
    jerk_lng_mean: float
    steer_rate_mean: float
    steer_rate_max: float
    steer_jerk_mean: float
    throttle_avg: float
    throttle_jerk_mean: float
    brake_avg: float
    brake_jerk_mean: float
    accel_cmd_max: float
    plan_wall_mean: float
    plan_wall_max: float
    fallback_rate: float

    @classmethod
    def aggregate(cls, outcomes: list[RunOutcome], label: str) -> "MetricsRow":
        n = len(outcomes)
        if n == 0:
            raise ValueError("no outcomes to aggregate")
        wins = [o for o in outcomes if o.success]

        def mean(vals):
            vals = list(vals)
            return sum(vals) / len(vals) if vals else 0.0

        merge_times = [o.merge_time for o in wins if o.merge_time is not None]
        return cls(
            label=label, runs=n,
            success_rate=len(wins) / n,
            collision_rate=sum(o.verdict == "Collision" for o in outcomes) / n,
            timeout_rate=sum(o.verdict == "Timeout" for o in outcomes) / n,
            time_mean=mean(o.duration for o in wins) if wins else None,
            merge_time_mean=mean(merge_times) if merge_times else None,
            jerk_lng_mean=mean(o.jerk_lng_mean for o in wins),
            steer_rate_mean=mean(o.steer_rate_mean for o in wins),
            steer_rate_max=max((o.steer_rate_max for o in wins), default=0.0),
            steer_jerk_mean=mean(o.steer_jerk_mean for o in wins),
            throttle_avg=mean(o.throttle_avg for o in outcomes),
            throttle_jerk_mean=mean(o.throttle_jerk_mean for o in outcomes),
            brake_avg=mean(o.brake_avg for o in outcomes),
            brake_jerk_mean=mean(o.brake_jerk_mean for o in outcomes),
            accel_cmd_max=mean(o.accel_cmd_max for o in outcomes),
            plan_wall_mean=mean(o.plan_wall_mean for o in outcomes),
            plan_wall_max=max(o.plan_wall_max for o in outcomes),
            fallback_rate=mean(o.fallback_plans / max(o.plan_calls, 1)
                               for o in outcomes))

    def to_row(self) -> list:
        out = []
        for c in _COLUMNS:
            v = getattr(self, c)
            out.append("" if v is None else v)
        return out

    @classmethod
    def from_row(cls, row: list) -> "MetricsRow":
        kwargs = {}
        for c, v in zip(_COLUMNS, row):
            if c == "label":
                kwargs[c] = v
            elif c == "runs":
                kwargs[c] = int(v)
            else:
                kwargs[c] = None if v == "" else float(v)
        return cls(**kwargs)


def _run_one(args) -> RunOutcome:
    spec, seed, keep, weights = args
    return run_scenario(spec, seed, keep_trace=keep, weights=weights)


def run_batch(spec: ScenarioSpec, runs: int | None = None,
              seeds: list[int] | None = None, workers: int = 1,
              keep_traces: bool = False, label: str | None = None,
              weights=None) -> tuple[list[RunOutcome], MetricsRow]:
    """Seeded batch; each run is an isolated world, reduce is single-threaded."""
    if seeds is None:
        runs = spec.runs if runs is None else runs
        seeds = list(range(spec.seed_base, spec.seed_base + runs))
    jobs = [(spec, s, keep_traces, weights) for s in seeds]
    if workers > 1:
        import multiprocessing as mp
        with mp.Pool(workers) as pool:
            outcomes = pool.map(_run_one, jobs)
    else:
        outcomes = [_run_one(j) for j in jobs]
    outcomes.sort(key=lambda o: o.seed)
    if label is None:
        label = f"{spec.cooperativeness}-{spec.density}"
    return outcomes, MetricsRow.aggregate(outcomes, label)


def sweep(spec: ScenarioSpec, scales: list[float], target: str,
          runs: int | None = None, workers: int = 1,
          weights=None) -> list[MetricsRow]:
    """Noise sweep: one aggregated row per scale, same seeds across cells."""
    rows = []
    for scale in scales:
        cell = replace(spec, noise_scale=scale, noise_target=target)
        _, row = run_batch(cell, runs=runs, workers=workers,
                           label=f"{spec.cooperativeness}-{spec.density}"
                                 f"/{target}@{scale:g}x", weights=weights)
        rows.append(row)
    return rows


def export(outcomes: list[RunOutcome], metrics: list[MetricsRow],
           out_dir: str) -> dict:
    """Write metrics.csv and one JSONL trace per retained run.

    Trace files carry a meta line then one line per executed tick; floats go
    through repr so identical runs export byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {"metrics": os.path.join(out_dir, "metrics.csv"), "traces": []}
    with open(paths["metrics"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for row in metrics:
            writer.writerow(row.to_row())
    for o in outcomes:
        if o.trace is None:
            continue
        path = os.path.join(out_dir, f"trace_{o.seed:05d}.jsonl")
        with open(path, "w") as fh:
            meta = {"type": "meta", "seed": o.seed, "verdict": o.verdict,
                    "duration": o.duration, "steps": o.steps}
            fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            for row in o.trace:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
                fh.write("\n")
        paths["traces"].append(path)
    return paths


def load_metrics(path: str) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _COLUMNS:
            raise ValueError("unexpected metrics header")
        return [MetricsRow.from_row(r) for r in reader]
