"""Lane centerlines as polylines, plus the two-lane road-with-dead-end layout."""
from __future__ import annotations

from dataclasses import dataclass
from math import atan2, cos, sin


class Lane:
    """Polyline centerline with per-segment heading and arc parameterization.

    Offsets are signed: positive to the left of the direction of travel.
    """

    def __init__(self, points: list[tuple[float, float]]):
        if len(points) < 2:
            raise ValueError("a lane needs at least two points")
        self.points = [(float(x), float(y)) for x, y in points]
        self._seg = []
        s = 0.0
        for (ax, ay), (bx, by) in zip(self.points, self.points[1:]):
            dx, dy = bx - ax, by - ay
            length = (dx * dx + dy * dy) ** 0.5
            if length <= 0.0:
                raise ValueError("degenerate lane segment")
            self._seg.append((ax, ay, dx / length, dy / length, length, s,
                              atan2(dy, dx)))
            s += length
        self.length = s

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """(arc position, signed lateral offset, local heading) of the closest point.

        Extends tangentially past both ends, mirroring point_at: otherwise a
        vehicle that has driven off the end of the road projects onto the last
        vertex and sits there as a phantom stopped leader.
        """
        best = None
        last = len(self._seg) - 1
        for i, (ax, ay, ux, uy, length, s0, heading) in enumerate(self._seg):
            t = (x - ax) * ux + (y - ay) * uy
            if t < 0.0 and i > 0:
                t = 0.0
            elif t > length and i < last:
                t = length
            cx, cy = ax + ux * t, ay + uy * t
            dx, dy = x - cx, y - cy
            d2 = dx * dx + dy * dy
            if best is None or d2 < best[0]:
                off = ux * dy - uy * dx  # cross product: positive = left
                best = (d2, s0 + t, off, heading)
        return best[1], best[2], best[3]

    def point_at(self, s: float) -> tuple[float, float, float]:
        """(x, y, heading) at arc position s; extrapolates past either end."""
        if s <= 0.0:
            ax, ay, ux, uy, _, _, heading = self._seg[0]
            return ax + ux * s, ay + uy * s, heading
        for ax, ay, ux, uy, length, s0, heading in self._seg:
            if s <= s0 + length or (ax, ay, ux, uy, length, s0, heading) == self._seg[-1]:
                t = s - s0
                return ax + ux * t, ay + uy * t, heading
        raise AssertionError("unreachable")

    def distance_to(self, x: float, y: float) -> float:
        return abs(self.project(x, y)[1])


def straight_lane(x0: float, y0: float, angle: float, length: float) -> Lane:
    return Lane([(x0, y0), (x0 + length * cos(angle), y0 + length * sin(angle))])


@dataclass
class LaneGeometry:
    """Two-lane road: a source lane that dead-ends and the adjacent target lane."""

    source: Lane
    target: Lane
    width: float
    dead_end: tuple[float, float]
    theta: float = 0.0

    @property
    def direction(self) -> int:
        """+1 when the target lane lies to the left of the source lane."""
        tx, ty, _ = self.target.point_at(0.5 * self.target.length)
        _, off, _ = self.source.project(tx, ty)
        return 1 if off >= 0.0 else -1

    def lane(self, name: str) -> Lane:
        if name == "source":
            return self.source
        if name == "target":
            return self.target
        raise KeyError(name)

    def adjacent(self, name: str) -> str:
        return "target" if name == "source" else "source"
