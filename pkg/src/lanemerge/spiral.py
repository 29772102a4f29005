"""Cubic-spiral path synthesis for lane-keep and lane-change maneuvers.

A path is a curvature polynomial K(l) = b0 + b1*l + b2*l^2 + b3*l^3 over arc
length l in [0, s_f]. Optimization runs in knot space: curvature samples
p = (p0, p1, p2, p3) at arc fractions {0, 1/3, 2/3, 1} plus the arc length
s_f. The interior knots carry the curvature bound; p0 is pinned to the start
curvature and p3 is left free. The solver minimizes bending energy plus
softly weighted endpoint residuals under box bounds, L-BFGS-B style, with an
analytic gradient for the bending term and central finite differences for the
quadrature-based endpoint terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, hypot, sin

import numpy as np
from scipy.optimize import minimize

from .dynamics import wrap_angle

DEFAULT_SIMPSON_N = 8
FINE_SIMPSON_N = 32
FD_STEP = 1e-6


@dataclass(frozen=True)
class SpiralCoeffs:
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    s_f: float

    def curvature(self, l: float) -> float:
        return self.beta0 + l * (self.beta1 + l * (self.beta2 + l * self.beta3))


@dataclass(frozen=True)
class CurvatureKnots:
    p0: float
    p1: float
    p2: float
    p3: float
    s_f: float


@dataclass(frozen=True)
class PathBoundary:
    x0: float
    y0: float
    psi0: float
    kappa0: float
    xf: float
    yf: float
    psif: float

    @property
    def chord(self) -> float:
        return hypot(self.xf - self.x0, self.yf - self.y0)


@dataclass(frozen=True)
class SpiralWeights:
    lambda_x: float = 1000.0
    lambda_y: float = 1000.0
    lambda_psi: float = 1000.0
    k_max: float = 0.5


@dataclass
class SpiralSolution:
    knots: CurvatureKnots
    coeffs: SpiralCoeffs
    residual: float          # endpoint position error (m), fine quadrature
    heading_residual: float  # endpoint heading error (rad)
    converged: bool
    objective: float
    n_iter: int
    objective_history: list = field(default_factory=list)


def knots_to_coeffs(knots: CurvatureKnots) -> SpiralCoeffs:
    """Map curvature knots to polynomial coefficients.

    Closed-form solution of the 4x4 Vandermonde system at the stations
    l in {0, s_f/3, 2 s_f/3, s_f}.
    """
    sf = knots.s_f
    if sf <= 0.0:
        raise ValueError("arc length must be positive")
    p0, p1, p2, p3 = knots.p0, knots.p1, knots.p2, knots.p3
    b0 = p0
    b1 = (-11.0 * p0 + 18.0 * p1 - 9.0 * p2 + 2.0 * p3) / (2.0 * sf)
    b2 = 9.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) / (2.0 * sf * sf)
    b3 = 9.0 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3) / (2.0 * sf * sf * sf)
    return SpiralCoeffs(b0, b1, b2, b3, sf)


def heading_at(coeffs: SpiralCoeffs, psi0: float, l: float) -> float:
    """Exact polynomial integral of the curvature: psi(l)."""
    b0, b1, b2, b3 = coeffs.beta0, coeffs.beta1, coeffs.beta2, coeffs.beta3
    return psi0 + l * (b0 + l * (b1 / 2.0 + l * (b2 / 3.0 + l * b3 / 4.0)))


def integrate_pose(coeffs: SpiralCoeffs, start: tuple[float, float, float],
                   l: float, n: int = DEFAULT_SIMPSON_N) -> tuple[float, float, float]:
    """Pose at arc length l: psi exact, x/y by composite Simpson with n even."""
    x0, y0, psi0 = start
    if l == 0.0:
        return (x0, y0, psi0)
    if n % 2:
        raise ValueError("Simpson subinterval count must be even")
    h = l / n
    sx = 0.0
    sy = 0.0
    for i in range(n + 1):
        psi = heading_at(coeffs, psi0, i * h)
        w = 1.0 if i in (0, n) else (4.0 if i % 2 else 2.0)
        sx += w * cos(psi)
        sy += w * sin(psi)
    x = x0 + sx * h / 3.0
    y = y0 + sy * h / 3.0
    return (x, y, heading_at(coeffs, psi0, l))


def bending_energy(coeffs: SpiralCoeffs) -> float:
    """Exact integral of K(l)^2 over [0, s_f] (degree-6 polynomial)."""
    b0, b1, b2, b3 = coeffs.beta0, coeffs.beta1, coeffs.beta2, coeffs.beta3
    s = coeffs.s_f
    return (b0 * b0 * s
            + b0 * b1 * s ** 2
            + (b1 * b1 + 2.0 * b0 * b2) / 3.0 * s ** 3
            + (b0 * b3 + b1 * b2) / 2.0 * s ** 4
            + (b2 * b2 + 2.0 * b1 * b3) / 5.0 * s ** 5
            + b2 * b3 / 3.0 * s ** 6
            + b3 * b3 / 7.0 * s ** 7)


# Bending energy in knot space is s_f * p^T Q p with constant Q; this gives
# the analytic gradient used by the solver. Equivalent to bending_energy after
# knots_to_coeffs (verified against the quadrature oracle in tests).
_Q = np.array([
    [64.0, 99.0 / 2.0, -18.0, 19.0 / 2.0],
    [99.0 / 2.0, 324.0, -81.0 / 2.0, -18.0],
    [-18.0, -81.0 / 2.0, 324.0, 99.0 / 2.0],
    [19.0 / 2.0, -18.0, 99.0 / 2.0, 64.0],
]) / 840.0


def _bending_knot(p: np.ndarray, sf: float) -> tuple[float, np.ndarray, float]:
    """(value, d/dp, d/ds_f) of the bending energy in knot space."""
    qp = _Q @ p
    quad = float(p @ qp)
    return sf * quad, 2.0 * sf * qp, quad


def solve_spiral(boundary: PathBoundary, weights: SpiralWeights,
                 init: CurvatureKnots | None = None,
                 n_simpson: int = DEFAULT_SIMPSON_N,
                 max_iter: int = 200) -> SpiralSolution:
    """Solve the soft-boundary minimum-bending-energy problem.

    Parameters
    ----------
    boundary : start pose/curvature and goal pose.
    weights : endpoint penalty weights and the interior curvature bound.
    init : optional warm-start knots (p0 is overridden by the boundary's
        start curvature); defaults to a straight-line guess.
    n_simpson : Simpson subintervals per endpoint evaluation.
    max_iter : L-BFGS-B iteration cap.

    Returns
    -------
    SpiralSolution with the best iterate; `converged` is False when the
    solver hit the iteration cap or an abnormal line-search exit, in which
    case `residual` tells whether the iterate is still usable.
    """
    dist = boundary.chord
    if dist <= 0.0:
        raise ValueError("goal must be distinct from start")
    p0 = boundary.kappa0
    start = (boundary.x0, boundary.y0, boundary.psi0)
    lo, hi = 0.5 * dist, 3.0 * dist

    if init is not None:
        q0 = np.array([init.p1, init.p2, init.p3,
                       min(max(init.s_f, lo), hi)])
    else:
        q0 = np.array([0.0, 0.0, 0.0, min(max(1.1 * dist, lo), hi)])
    k = weights.k_max
    q0[0] = min(max(q0[0], -k), k)
    q0[1] = min(max(q0[1], -k), k)

    def endpoint_penalty(q: np.ndarray) -> float:
        knots = CurvatureKnots(p0, q[0], q[1], q[2], q[3])
        c = knots_to_coeffs(knots)
        x, y, psi = integrate_pose(c, start, q[3], n_simpson)
        dpsi = wrap_angle(psi - boundary.psif)
        return (weights.lambda_x * (x - boundary.xf) ** 2
                + weights.lambda_y * (y - boundary.yf) ** 2
                + weights.lambda_psi * dpsi * dpsi)

    def fun(q: np.ndarray) -> tuple[float, np.ndarray]:
        p = np.array([p0, q[0], q[1], q[2]])
        be, dbe_dp, dbe_dsf = _bending_knot(p, q[3])
        f0 = endpoint_penalty(q)
        grad = np.empty(4)
        # central differences on the Simpson-based penalty only
        for i in range(4):
            qp = q.copy()
            qm = q.copy()
            qp[i] += FD_STEP
            qm[i] -= FD_STEP
            grad[i] = (endpoint_penalty(qp) - endpoint_penalty(qm)) / (2.0 * FD_STEP)
        grad[0] += dbe_dp[1]
        grad[1] += dbe_dp[2]
        grad[2] += dbe_dp[3]
        grad[3] += dbe_dsf
        return be + f0, grad

    history: list[float] = []

    def record(qk: np.ndarray) -> None:
        p = np.array([p0, qk[0], qk[1], qk[2]])
        history.append(_bending_knot(p, qk[3])[0] + endpoint_penalty(qk))

    res = minimize(fun, q0, jac=True, method="L-BFGS-B",
                   bounds=[(-k, k), (-k, k), (None, None), (lo, hi)],
                   callback=record,
                   options={"maxiter": max_iter, "gtol": 1e-6, "ftol": 1e-14})

    q = res.x
    knots = CurvatureKnots(p0, float(q[0]), float(q[1]), float(q[2]), float(q[3]))
    coeffs = knots_to_coeffs(knots)
    x, y, psi = integrate_pose(coeffs, start, knots.s_f, FINE_SIMPSON_N)
    return SpiralSolution(
        knots=knots,
        coeffs=coeffs,
        residual=hypot(x - boundary.xf, y - boundary.yf),
        heading_residual=abs(wrap_angle(psi - boundary.psif)),
        converged=bool(res.success),
        objective=float(res.fun),
        n_iter=int(res.nit),
        objective_history=history,
    )


def sample_waypoints(coeffs: SpiralCoeffs, start: tuple[float, float, float],
                     count: int) -> list[tuple[float, float, float]]:
    """Poses at equally spaced arc lengths {0, s_f/(count-1), ..., s_f}."""
    if count < 2:
        raise ValueError("need at least two samples")
    ls = [coeffs.s_f * i / (count - 1) for i in range(count)]
    return march_poses(coeffs, start, ls)


def march_poses(coeffs: SpiralCoeffs, start: tuple[float, float, float],
                arcs: list[float]) -> list[tuple[float, float, float]]:
    """Poses at a non-decreasing list of arc positions (first may be 0).

    Integrates incrementally, one Simpson panel per consecutive interval, so
    accuracy matches a fine global quadrature while staying O(len(arcs)).
    """
    x, y, psi0 = start
    out: list[tuple[float, float, float]] = []
    prev = 0.0
    ppsi = psi0
    pc, ps = cos(ppsi), sin(ppsi)
    for l in arcs:
        if l < prev:
            raise ValueError("arc positions must be non-decreasing")
        if l > prev:
            h = l - prev
            mpsi = heading_at(coeffs, psi0, prev + 0.5 * h)
            npsi = heading_at(coeffs, psi0, l)
            nc, ns = cos(npsi), sin(npsi)
            x += (pc + 4.0 * cos(mpsi) + nc) * h / 6.0
            y += (ps + 4.0 * sin(mpsi) + ns) * h / 6.0
            prev, ppsi, pc, ps = l, npsi, nc, ns
        out.append((x, y, heading_at(coeffs, psi0, l)))
    return out
