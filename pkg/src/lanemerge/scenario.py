"""Benchmark scenario construction: dense-traffic merges toward a dead end.

A scenario spec describes the family (cooperativeness x density x noise); a
layout is one concrete, fully serializable draw of that family (vehicle
placements, driver parameters, derived RNG seeds). Layouts round-trip
through YAML so a run can be archived and replayed exactly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from math import cos, sin

import numpy as np
import yaml

from .dynamics import VehicleParams, VehicleState
from .geometry import LaneGeometry, straight_lane
from .world import (DriverParams, NoiseConfig, Vehicle, WorldState,
                    sample_driver)

ROAD_BACK = 30.0    # pavement behind the ego start (m)
ROAD_LENGTH = 150.0


@dataclass(frozen=True)
class ScenarioSpec:
    cooperativeness: str = "coop"   # "coop" | "aggressive"
    density: str = "sparse"         # "sparse" | "dense"
    noise_scale: float = 1.0
    noise_target: str = "both"      # "localization" | "perception" | "both"
    predictor: str = "rollout"      # "rollout" | "cv" | "external"
    external_command: tuple = ()
    hard_safety: bool = True
    time_limit: float = 80.0
    goal_advance: float = 50.0
    control_dt: float = 0.05
    plan_dt: float = 0.1
    n_agents: int = 8
    lane_width: float = 3.5
    road_angle: float = 0.0
    dead_end_ahead: float = 40.0    # from the ego start, along the source lane
    ego_speed: float = 3.0
    ego_v_ref: float = 5.0
    traffic_speed: float = 3.0
    agent_lane_changes: bool = False
    seed_base: int = 0
    runs: int = 50

    # center-to-center spacing before jitter = bumper gap + one car length
    def base_spacing(self) -> float:
        gap = 10.0 if self.density == "sparse" else 7.75
        return gap + 4.0

    def eta_c(self) -> float:
        return 1.0 if self.cooperativeness == "coop" else 0.0


PRESETS: dict[str, ScenarioSpec] = {
    "coop-sparse": ScenarioSpec("coop", "sparse"),
    "coop-dense": ScenarioSpec("coop", "dense"),
    "agg-sparse": ScenarioSpec("aggressive", "sparse"),
    "agg-dense": ScenarioSpec("aggressive", "dense"),
}


def lanes_from_road(road: dict) -> LaneGeometry:
    angle = float(road["angle"])
    width = float(road["width"])
    x0, y0 = road["origin"]
    length = float(road["length"])
    source = straight_lane(x0, y0, angle, length)
    target = straight_lane(x0 - width * sin(angle), y0 + width * cos(angle),
                           angle, length)
    return LaneGeometry(source=source, target=target, width=width,
                        dead_end=(float(road["dead_end"][0]),
                                  float(road["dead_end"][1])),
                        theta=angle)


def build_layout(spec: ScenarioSpec, seed: int) -> dict:
    """One concrete scenario draw; everything downstream is deterministic."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, spec.seed_base]))
    noise_seed = int(rng.integers(2 ** 63))
    world_seed = int(rng.integers(2 ** 63))
    predictor_seed = int(rng.integers(2 ** 63))

    angle = spec.road_angle
    ox = -ROAD_BACK * cos(angle)
    oy = -ROAD_BACK * sin(angle)
    road = {
        "angle": float(angle),
        "width": float(spec.lane_width),
        "origin": [float(ox), float(oy)],
        "length": float(ROAD_LENGTH),
        "dead_end": [float(spec.dead_end_ahead * cos(angle)),
                     float(spec.dead_end_ahead * sin(angle))],
    }
    lanes = lanes_from_road(road)

    ego = {
        "id": 0,
        "state": [0.0, 0.0, float(angle), float(spec.ego_speed)],
        "v_ref": float(spec.ego_v_ref),
        "params": asdict(VehicleParams()),
    }

    vehicles = [{
        "id": 1,
        "lane": "source",
        "s": float(ROAD_BACK + spec.dead_end_ahead),
        "v": 0.0,
        "static": True,
        "half_width": 0.9,
        "half_length": 2.0,
        "driver": None,
    }]
    s = ROAD_BACK - 22.0  # first agent starts 22 m behind the ego abreast point
    for i in range(spec.n_agents):
        drv = sample_driver(rng, eta_c=spec.eta_c())
        vehicles.append({
            "id": 2 + i,
            "lane": "target",
            "s": float(s),
            "v": float(spec.traffic_speed),
            "static": False,
            "half_width": 0.9,
            "half_length": 2.0,
            "driver": asdict(drv),
        })
        s += spec.base_spacing() + float(rng.uniform(-1.0, 1.0))

    return {
        "road": road,
        "ego": ego,
        "vehicles": vehicles,
        "sim": {
            "control_dt": float(spec.control_dt),
            "plan_dt": float(spec.plan_dt),
            "time_limit": float(spec.time_limit),
            "goal_advance": float(spec.goal_advance),
            "agent_lane_changes": bool(spec.agent_lane_changes),
            "hard_safety": bool(spec.hard_safety),
            "predictor": spec.predictor,
            "external_command": list(spec.external_command),
        },
        "noise": {"scale": float(spec.noise_scale), "target": spec.noise_target},
        "seeds": {"noise": noise_seed, "world": world_seed,
                  "predictor": predictor_seed},
        "meta": {"seed": int(seed),
                 "spec": {**asdict(spec),
                          "external_command": list(spec.external_command)}},
    }


@dataclass
class WorldMeta:
    """Derived handles the harness needs beyond the world itself."""

    ego_params: VehicleParams
    ego_v_ref: float
    drivers: dict
    dims: dict
    static_ids: frozenset
    noise: NoiseConfig
    noise_seed: int
    predictor_seed: int
    sim: dict


def layout_to_world(layout: dict) -> tuple[WorldState, WorldMeta]:
    lanes = lanes_from_road(layout["road"])
    ego_cfg = layout["ego"]
    ego_params = VehicleParams(**ego_cfg["params"])
    ego = Vehicle(vid=int(ego_cfg["id"]),
                  state=VehicleState(*ego_cfg["state"]),
                  params=ego_params, driver=None, lane="source", role="ego")
    vehicles = [ego]
    drivers = {}
    dims = {}
    static_ids = set()
    for row in layout["vehicles"]:
        lane = lanes.lane(row["lane"])
        x, y, heading = lane.point_at(float(row["s"]))
        params = VehicleParams(half_width=float(row["half_width"]),
                               half_length=float(row["half_length"]))
        dims[int(row["id"])] = (params.half_width, params.half_length)
        if row["static"]:
            static_ids.add(int(row["id"]))
            veh = Vehicle(int(row["id"]), VehicleState(x, y, heading, 0.0),
                          params, None, row["lane"], role="static")
        else:
            drv = DriverParams(**row["driver"])
            drivers[int(row["id"])] = drv
            veh = Vehicle(int(row["id"]),
                          VehicleState(x, y, heading, float(row["v"])),
                          params, drv, row["lane"], role="agent")
        vehicles.append(veh)
    world = WorldState(
        vehicles=vehicles, lanes=lanes, ego_id=ego.vid,
        rng=np.random.default_rng(int(layout["seeds"]["world"])),
        allow_lane_changes=bool(layout["sim"]["agent_lane_changes"]))
    noise_cfg = NoiseConfig.scaled(float(layout["noise"]["scale"]),
                                   layout["noise"]["target"])
    meta = WorldMeta(
        ego_params=ego_params, ego_v_ref=float(ego_cfg["v_ref"]),
        drivers=drivers, dims=dims, static_ids=frozenset(static_ids),
        noise=noise_cfg, noise_seed=int(layout["seeds"]["noise"]),
        predictor_seed=int(layout["seeds"]["predictor"]), sim=dict(layout["sim"]))
    return world, meta


def save_layout(layout: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(layout, fh, sort_keys=True)


def load_layout(path) -> dict:
    with open(path) as fh:
        return yaml.safe_load(fh)


def spec_from_dict(d: dict) -> ScenarioSpec:
    d = dict(d)
    if "external_command" in d and d["external_command"] is not None:
        d["external_command"] = tuple(d["external_command"])
    return ScenarioSpec(**d)


def preset(name: str, **overrides) -> ScenarioSpec:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown scenario preset {name!r}; "
                       f"choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base
