"""Interaction prediction behind a single pluggable interface.

A predictor exposes ``start(buffer) -> session``; the session's
``advance(ego_xy, ego_v=None)`` returns the predicted scene one step ahead,
conditioned on the hypothetical ego position for the current step. Calling
``advance`` repeatedly rolls the scene forward along a candidate ego
trajectory, which is how candidate evaluation consumes predictions.

Three predictors are provided: constant velocity, a model rollout that
replays the simulator's driver logic (exact when observations are clean and
driver draws are degenerate), and a line-protocol bridge to an external
process, e.g. a learned trajectory model served out-of-process.
"""
from __future__ import annotations

import subprocess
from collections import deque
from dataclasses import dataclass
from math import atan2, cos, hypot, sin

from .geometry import LaneGeometry
from .safety import SafetyMargins
from .world import (_ROLE_AGENT, _ROLE_EGO, _ROLE_STATIC, _decide,
                    DriverParams, midpoint_driver)


class ObservationBuffer:
    """Rolling window of sensed positions per vehicle id (ego included).

    A vehicle absent from a pushed frame loses its track entirely; frames are
    expected at the planning period so displacements encode speeds.
    """

    def __init__(self, ego_id: int, maxlen: int = 8, dt: float = 0.1):
        self.ego_id = ego_id
        self.maxlen = maxlen
        self.dt = dt
        self._tracks: dict[int, deque] = {}
        self._psi: dict[int, float] = {}
        self._dims: dict[int, tuple[float, float]] = {}

    def push(self, frame: dict[int, tuple], dims: dict[int, tuple[float, float]] | None = None):
        """frame maps vid -> (x, y, psi); dims maps vid -> (half_w, half_l)."""
        for vid in list(self._tracks):
            if vid not in frame:
                del self._tracks[vid]
                self._psi.pop(vid, None)
        for vid, (x, y, psi) in frame.items():
            self._tracks.setdefault(vid, deque(maxlen=self.maxlen)).append((x, y))
            self._psi[vid] = psi
        if dims:
            self._dims.update(dims)

    def ids(self, min_frames: int = 1) -> list[int]:
        return sorted(v for v, t in self._tracks.items() if len(t) >= min_frames)

    def track(self, vid: int) -> tuple:
        return tuple(self._tracks[vid])

    def psi(self, vid: int) -> float:
        return self._psi[vid]

    def dims(self, vid: int) -> tuple[float, float]:
        return self._dims.get(vid, (0.9, 2.0))

    def frames(self, vid: int) -> int:
        t = self._tracks.get(vid)
        return 0 if t is None else len(t)


@dataclass(frozen=True)
class PredictedScene:
    """One-step-ahead positions and headings for every non-ego vehicle."""

    positions: dict
    headings: dict


def _ego_xy(ego) -> tuple[float, float]:
    if hasattr(ego, "x"):
        return ego.x, ego.y
    return float(ego[0]), float(ego[1])


def predict_step(predictor, buffer: ObservationBuffer, hypothetical_ego) -> PredictedScene:
    """Single-step convenience around start/advance."""
    session = predictor.start(buffer)
    x, y = _ego_xy(hypothetical_ego)
    v = getattr(hypothetical_ego, "v", None)
    return session.advance((x, y), v)


# --- constant velocity -----------------------------------------------------

class _CvSession:
    def __init__(self, pos, disp, psi):
        self._pos = pos
        self._disp = disp
        self._psi = psi

    def clone(self) -> "_CvSession":
        return _CvSession(dict(self._pos), self._disp, self._psi)

    def advance(self, ego_xy, ego_v=None) -> PredictedScene:
        positions = {}
        headings = {}
        for vid in self._pos:
            x, y = self._pos[vid]
            dx, dy = self._disp[vid]
            x, y = x + dx, y + dy
            self._pos[vid] = (x, y)
            if hypot(dx, dy) > 1e-9:
                headings[vid] = atan2(dy, dx)
            else:
                headings[vid] = self._psi[vid]
            positions[vid] = (x, y)
        return PredictedScene(positions, headings)


class ConstantVelocityPredictor:
    """Extrapolates each track by its last per-frame displacement."""

    def start(self, buffer: ObservationBuffer) -> _CvSession:
        pos, disp, psi = {}, {}, {}
        for vid in buffer.ids():
            if vid == buffer.ego_id:
                continue
            track = buffer.track(vid)
            pos[vid] = track[-1]
            if len(track) >= 2:
                disp[vid] = (track[-1][0] - track[-2][0], track[-1][1] - track[-2][1])
            else:
                disp[vid] = (0.0, 0.0)
            psi[vid] = buffer.psi(vid)
        return _CvSession(pos, disp, psi)


# --- model rollout ----------------------------------------------------------

class _RolloutSession:
    """Scene rolled forward on parallel state lists; row 0 is the ego."""

    __slots__ = ("_p", "n", "vids", "xs", "ys", "vs", "hws", "hls",
                 "lane_idx", "roles", "drivers", "coss", "sins", "heads",
                 "_draws", "_ego_prev", "_out")

    def __init__(self, predictor, n, vids, xs, ys, vs, hws, hls, lane_idx,
                 roles, drivers, coss, sins, heads, draws, ego_prev):
        self._p = predictor
        self.n = n
        self.vids = vids
        self.xs = xs
        self.ys = ys
        self.vs = vs
        self.hws = hws
        self.hls = hls
        self.lane_idx = lane_idx
        self.roles = roles
        self.drivers = drivers
        self.coss = coss
        self.sins = sins
        self.heads = heads
        self._draws = draws
        self._ego_prev = ego_prev
        self._out = [None] * n

    def clone(self) -> "_RolloutSession":
        return _RolloutSession(
            self._p, self.n, self.vids, self.xs[:], self.ys[:], self.vs[:],
            self.hws, self.hls, self.lane_idx, self.roles, self.drivers,
            self.coss[:], self.sins[:], self.heads[:], dict(self._draws),
            self._ego_prev)

    def advance(self, ego_xy, ego_v=None) -> PredictedScene:
        p = self._p
        dt = p.dt
        xs, ys, vs = self.xs, self.ys, self.vs
        ex, ey = float(ego_xy[0]), float(ego_xy[1])
        if ego_v is None:
            ego_v = hypot(ex - self._ego_prev[0], ey - self._ego_prev[1]) / dt
        xs[0], ys[0], vs[0] = ex, ey, float(ego_v)
        accels = _decide(self.n, self.vids, xs, ys, vs, self.hws, self.hls,
                         self.lane_idx, self.roles, self.drivers, p.lanes,
                         self._draws, None, self._out)
        positions = {}
        headings = {}
        curved = p._curved
        lanes = (p.lanes.source, p.lanes.target)
        for i in range(1, self.n):
            x = xs[i] + vs[i] * self.coss[i] * dt
            y = ys[i] + vs[i] * self.sins[i] * dt
            xs[i], ys[i] = x, y
            a = accels[i]
            if a is not None:
                v = vs[i] + a * dt
                vs[i] = v if v > 0.0 else 0.0
            if curved:
                h = lanes[self.lane_idx[i]].project(x, y)[2]
                self.heads[i] = h
                self.coss[i] = cos(h)
                self.sins[i] = sin(h)
            vid = self.vids[i]
            positions[vid] = (x, y)
            headings[vid] = self.heads[i]
        self._ego_prev = (ex, ey)
        return PredictedScene(positions, headings)


class ModelRolloutPredictor:
    """Replays the simulator's driver model over the observed scene.

    Speeds are reconstructed from the last two buffered frames (positions
    advance with pre-update speed, so one displacement recovers the previous
    speed exactly), then one driver-model step closes the gap to the current
    frame. Every buffered vehicle is rolled so queue interactions propagate.
    Vehicles without a known driver profile get the nominal midpoint one.
    """

    def __init__(self, lanes: LaneGeometry, drivers: dict[int, DriverParams],
                 dims: dict[int, tuple[float, float]], dt: float, ego_id: int,
                 ego_dims: tuple[float, float] = (0.9, 2.0),
                 static_ids: frozenset = frozenset(), seed: int = 0):
        self.lanes = lanes
        self.drivers = drivers
        self.dims = dims
        self.dt = dt
        self.ego_id = ego_id
        self.ego_dims = ego_dims
        self.static_ids = frozenset(static_ids)
        # seed kept for interface parity; rollouts resolve yield coins by
        # expected response, so prediction is deterministic given the buffer
        self.seed = seed
        self._default_driver = midpoint_driver()
        self._curved = len(lanes.source._seg) > 1 or len(lanes.target._seg) > 1

    def start(self, buffer: ObservationBuffer) -> _RolloutSession:
        return self._prepare(buffer).clone()

    def start_many(self, buffer: ObservationBuffer, n: int) -> list[_RolloutSession]:
        base = self._prepare(buffer)
        return [base.clone() for _ in range(n)]

    def _prepare(self, buffer: ObservationBuffer) -> _RolloutSession:
        dt = self.dt
        lanes = self.lanes
        ego_track = buffer.track(buffer.ego_id)
        vids = [buffer.ego_id]
        for vid in buffer.ids():
            if vid != buffer.ego_id:
                vids.append(vid)
        n = len(vids)
        xs, ys, vs = [0.0] * n, [0.0] * n, [0.0] * n
        pxs, pys, pvs = [0.0] * n, [0.0] * n, [0.0] * n
        hws, hls = [0.0] * n, [0.0] * n
        lane_idx = [0] * n
        roles = [_ROLE_AGENT] * n
        drivers: list = [None] * n
        coss, sins, heads = [1.0] * n, [0.0] * n, [0.0] * n
        for i, vid in enumerate(vids):
            track = buffer.track(vid)
            x, y = track[-1]
            if len(track) >= 2 and vid not in self.static_ids:
                px, py = track[-2]
                v_prev = hypot(x - px, y - py) / dt
            else:
                px, py = x, y
                v_prev = 0.0
            xs[i], ys[i] = x, y
            pxs[i], pys[i], pvs[i] = px, py, v_prev
            if vid == buffer.ego_id:
                roles[i] = _ROLE_EGO
                hws[i], hls[i] = self.ego_dims
                continue
            hws[i], hls[i] = self.dims.get(vid, buffer.dims(vid))
            _, off_s, h_s = lanes.source.project(x, y)
            _, off_t, h_t = lanes.target.project(x, y)
            if abs(off_s) <= abs(off_t):
                lane_idx[i], h = 0, h_s
            else:
                lane_idx[i], h = 1, h_t
            heads[i], coss[i], sins[i] = h, cos(h), sin(h)
            if vid in self.static_ids:
                roles[i] = _ROLE_STATIC
                vs[i] = pvs[i] = 0.0
            else:
                drivers[i] = self.drivers.get(vid, self._default_driver)
        draws: dict = {}
        accels = _decide(n, vids, pxs, pys, pvs, hws, hls, lane_idx, roles,
                         drivers, lanes, draws, None, [None] * n)
        for i in range(n):
            if accels[i] is not None:
                v = pvs[i] + accels[i] * dt
                vs[i] = v if v > 0.0 else 0.0
            elif roles[i] != _ROLE_EGO:
                vs[i] = pvs[i]
        return _RolloutSession(self, n, vids, xs, ys, vs, hws, hls, lane_idx,
                               roles, drivers, coss, sins, heads, draws,
                               ego_track[-1])


# --- external process bridge ------------------------------------------------

class _ExternalSession:
    def __init__(self, predictor: "ExternalPredictor", tracks: dict, psi: dict):
        self._p = predictor
        self._tracks = tracks
        self._psi = psi

    def clone(self) -> "_ExternalSession":
        return _ExternalSession(self._p, {k: list(v) for k, v in self._tracks.items()},
                                self._psi)

    def advance(self, ego_xy, ego_v=None) -> PredictedScene:
        p = self._p
        vids = sorted(self._tracks)
        lines = [f"{p.t_obs} {len(vids)}"]
        for k in range(p.t_obs):
            for vid in vids:
                track = self._tracks[vid]
                i = max(len(track) - p.t_obs + k, 0)
                x, y = track[i]
                lines.append(f"{vid},{x!r},{y!r}")
        lines.append(f"ego,{float(ego_xy[0])!r},{float(ego_xy[1])!r}")
        lines.append("")
        reply = p._exchange("\n".join(lines) + "\n")
        steps: dict[int, list] = {vid: [] for vid in vids}
        for line in reply:
            vid_s, x_s, y_s = line.split(",")
            steps[int(vid_s)].append((float(x_s), float(y_s)))
        positions = {}
        headings = {}
        for vid in vids:
            if not steps[vid]:
                raise ValueError(f"external predictor returned no rows for {vid}")
            x, y = steps[vid][0]
            px, py = self._tracks[vid][-1]
            self._tracks[vid].append((x, y))
            positions[vid] = (x, y)
            if hypot(x - px, y - py) > 1e-9:
                headings[vid] = atan2(y - py, x - px)
            else:
                headings[vid] = self._psi[vid]
        return PredictedScene(positions, headings)


class ExternalPredictor:
    """Bridges to a prediction process over a line protocol on stdio.

    Query: header ``"<t_obs> <n>"``, then n lines ``vid,x,y`` per frame for
    t_obs frames (oldest first, ids ascending within a frame), then one
    ``ego,x,y`` line with the hypothetical ego position, then a blank line.
    Reply: ``vid,x,y`` lines covering each vehicle's predicted steps in
    order, terminated by a blank line; the first row per vehicle is the
    one-step prediction used here. Both sides agree on t_obs out of band.
    """

    def __init__(self, command: list[str], t_obs: int = 8):
        self.command = list(command)
        self.t_obs = t_obs
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        return self._proc

    def _exchange(self, query: str) -> list[str]:
        proc = self._ensure()
        proc.stdin.write(query)
        proc.stdin.flush()
        out = []
        while True:
            line = proc.stdout.readline()
            if line == "":
                raise RuntimeError("external predictor closed its output")
            line = line.strip()
            if not line:
                return out
            out.append(line)

    def start(self, buffer: ObservationBuffer) -> _ExternalSession:
        tracks = {}
        psi = {}
        for vid in buffer.ids():
            if vid == buffer.ego_id:
                continue
            tracks[vid] = list(buffer.track(vid))
            psi[vid] = buffer.psi(vid)
        return _ExternalSession(self, tracks, psi)

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


# --- prediction-error tracking ----------------------------------------------

class AdeTracker:
    """Windowed mean displacement error per vehicle id."""

    def __init__(self, window: int = 30):
        self.window = window
        self._errors: dict[int, deque] = {}

    def record(self, predicted: dict, actual: dict):
        for vid, (px, py) in predicted.items():
            if vid not in actual:
                continue
            ax, ay = actual[vid]
            self._errors.setdefault(vid, deque(maxlen=self.window)).append(
                hypot(px - ax, py - ay))

    def ade(self, vid: int) -> float | None:
        errs = self._errors.get(vid)
        if not errs:
            return None
        return sum(errs) / len(errs)

    def max_ade(self, vids) -> float:
        best = 0.0
        for vid in vids:
            a = self.ade(vid)
            if a is not None and a > best:
                best = a
        return best


def update_ade(tracker: AdeTracker, predicted: PredictedScene, actual: dict) -> AdeTracker:
    """Fold one committed prediction against the newly observed positions."""
    tracker.record(predicted.positions, actual)
    return tracker


def adaptive_margins(ade_max: float, psi_i: float, eps0: float = 0.5) -> SafetyMargins:
    """Inflate safety margins by prediction error resolved along/across lane.

    Directional split uses the other vehicle's heading; absolute values keep
    both margins nonnegative.
    """
    return SafetyMargins(eps0=eps0,
                         eps_lng=ade_max * abs(cos(psi_i)),
                         eps_lat=ade_max * abs(sin(psi_i)))
