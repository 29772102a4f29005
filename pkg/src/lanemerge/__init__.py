"""Cooperation-aware lane changing in dense traffic.

The package splits into a handful of layers:

- ``dynamics``: kinematic bicycle model and control clipping.
- ``spiral``: cubic curvature spirals for lane-change path generation.
- ``geometry``: lane polylines and the two-lane merge layout.
- ``safety``: circle-decomposition collision checks, directional safety
  margins, and the dead-end terminal constraint.
- ``world``: traffic micro-simulation (car following, yield zones, lane
  changes), sensing noise, and tracking filters.
- ``prediction``: interaction predictors behind a common session protocol,
  plus accuracy tracking that feeds adaptive safety margins.
- ``candidates``/``planner``: intention candidates and the receding-horizon
  chooser with its interaction-aware cost.
- ``control``: speed PID and one-step steering tracker.
- ``scenario``/``harness``/``cli``: benchmark scenarios, the closed-loop
  runner, batch metrics, and the command line front end.
"""
from .candidates import CandidateGenerator, CandidateTrajectory, Intention
from .control import LateralConfig, PidGains, SpeedPid, lateral_mpc
from .dynamics import ControlInput, VehicleParams, VehicleState, step
from .geometry import Lane, LaneGeometry, straight_lane
from .harness import (MetricsRow, RunOutcome, export, load_metrics, run_batch,
                      run_scenario, sweep)
from .planner import (CostWeights, Planner, PlannerConfig, PlannerObservation,
                      PlanResult, TrackedVehicle)
from .prediction import (AdeTracker, ConstantVelocityPredictor,
                         ExternalPredictor, ModelRolloutPredictor,
                         ObservationBuffer, adaptive_margins)
from .safety import (SafetyMargins, TerminalHalfPlane, check_safety,
                     min_circle_distance, terminal_feasible)
from .scenario import PRESETS, ScenarioSpec, build_layout, load_layout, preset
from .world import DriverParams, NoiseConfig, Vehicle, WorldState, step_world

__version__ = "0.1.0"

__all__ = [
    "AdeTracker", "CandidateGenerator", "CandidateTrajectory",
    "ConstantVelocityPredictor", "ControlInput", "CostWeights",
    "DriverParams", "ExternalPredictor", "Intention", "Lane", "LaneGeometry",
    "LateralConfig", "MetricsRow", "ModelRolloutPredictor", "NoiseConfig",
    "ObservationBuffer", "PRESETS", "PidGains", "PlanResult", "Planner",
    "PlannerConfig", "PlannerObservation", "RunOutcome", "SafetyMargins",
    "ScenarioSpec", "SpeedPid", "TerminalHalfPlane", "TrackedVehicle",
    "Vehicle", "VehicleParams", "VehicleState", "WorldState",
    "adaptive_margins", "build_layout", "check_safety", "export",
    "lateral_mpc", "load_layout", "load_metrics", "min_circle_distance",
    "preset", "run_batch", "run_scenario", "step", "step_world",
    "straight_lane", "sweep", "terminal_feasible",
]
