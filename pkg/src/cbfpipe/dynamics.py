"""Planar unicycle with velocity dynamics, circular-obstacle barrier, and the
relative-degree-2 derivative chain used by the safety filter.

State is (x, y, theta, v); controls are longitudinal acceleration and angular
rate.  The barrier is squared center distance minus squared inflated radius,
so the control input first appears in the second time derivative of h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.fmod(math.pi - theta, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    return math.pi - r


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite {name}: {values}")


@dataclass(frozen=True)
class RobotState:
    """Unicycle pose and forward speed; theta is stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        _require_finite("state", self.x, self.y, self.theta, self.v)
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ControlInput:
    accel: float
    omega: float

    def __post_init__(self):
        _require_finite("control", self.accel, self.omega)

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.omega])


@dataclass(frozen=True)
class InputBounds:
    """Symmetric box on (accel, omega)."""

    a_max: float = 1.0
    omega_max: float = 1.0

    def __post_init__(self):
        if self.a_max <= 0 or self.omega_max <= 0:
            raise ValueError("input bounds must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.array([-self.a_max, -self.omega_max])

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.a_max, self.omega_max])

    def contains(self, u: ControlInput, tol: float = 1e-12) -> bool:
        return abs(u.accel) <= self.a_max + tol and abs(u.omega) <= self.omega_max + tol

    def clip(self, u: ControlInput) -> ControlInput:
        return ControlInput(
            float(np.clip(u.accel, -self.a_max, self.a_max)),
            float(np.clip(u.omega, -self.omega_max, self.omega_max)),
        )


@dataclass(frozen=True)
class GammaPair:
    """Barrier-condition parameters (gamma0, gamma1), both positive."""

    gamma0: float
    gamma1: float

    def __post_init__(self):
        _require_finite("gamma", self.gamma0, self.gamma1)
        if self.gamma0 <= 0 or self.gamma1 <= 0:
            raise ValueError("gamma parameters must be positive")

    def as_tuple(self) -> tuple[float, float]:
        return (self.gamma0, self.gamma1)


@dataclass(frozen=True)
class Obstacle:
    """Circular obstacle; radius is assumed already inflated by the robot radius."""

    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        _require_finite("obstacle", self.cx, self.cy, self.radius)
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class BarrierEval:
    """Barrier value with its derivative chain at one state.

    h_ddot decomposes as lf2h + lglfh . (accel, omega); lf2h is the drift part
    and lglfh the input-coupling row.
    """

    h: float
    h_dot: float
    lf2h: float
    lglfh: tuple[float, float]

    def h_ddot(self, u: ControlInput) -> float:
        return self.lf2h + self.lglfh[0] * u.accel + self.lglfh[1] * u.omega


def _deriv(s: np.ndarray, u: ControlInput) -> np.ndarray:
    x, y, theta, v = s
    return np.array([v * math.cos(theta), v * math.sin(theta), u.omega, u.accel])


def step(state: RobotState, u: ControlInput, dt: float) -> RobotState:
    """Propagate the state by one RK4 step of length dt."""
    if not (dt > 0.0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    s = np.array([state.x, state.y, state.theta, state.v])
    k1 = _deriv(s, u)
    k2 = _deriv(s + 0.5 * dt * k1, u)
    k3 = _deriv(s + 0.5 * dt * k2, u)
    k4 = _deriv(s + dt * k3, u)
    s_new = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return RobotState(float(s_new[0]), float(s_new[1]), float(s_new[2]), float(s_new[3]))


def eval_barrier(state: RobotState, obs: Obstacle) -> BarrierEval:
    """Evaluate h = |p - c|^2 - r^2 and its derivative chain at the state."""
    dx = state.x - obs.cx
    dy = state.y - obs.cy
    ct = math.cos(state.theta)
    st = math.sin(state.theta)
    h = dx * dx + dy * dy - obs.radius * obs.radius
    radial = dx * ct + dy * st
    h_dot = 2.0 * state.v * radial
    lf2h = 2.0 * state.v * state.v
    lglfh = (2.0 * radial, 2.0 * state.v * (-dx * st + dy * ct))
    return BarrierEval(h=h, h_dot=h_dot, lf2h=lf2h, lglfh=lglfh)


def psi(be: BarrierEval, u: ControlInput, gamma: GammaPair) -> float:
    """Relative-degree-2 constraint value h_ddot + (g0+g1) h_dot + g0 g1 h."""
    g0, g1 = gamma.gamma0, gamma.gamma1
    return be.h_ddot(u) + (g0 + g1) * be.h_dot + g0 * g1 * be.h


def obstacle_distance(state: RobotState, obs: Obstacle) -> float:
    """Distance from the robot point to the inflated obstacle boundary."""
    return math.hypot(state.x - obs.cx, state.y - obs.cy) - obs.radius


def relative_heading(state: RobotState, obs: Obstacle) -> float:
    """Unsigned angle in [0, pi] between the heading and the obstacle bearing."""
    bearing = math.atan2(obs.cy - state.y, obs.cx - state.x)
    return abs(wrap_angle(bearing - state.theta))


def features(state: RobotState, obs: Obstacle) -> tuple[float, float, float]:
    """(distance, speed, relative heading) feature triple for one obstacle."""
    return (obstacle_distance(state, obs), state.v, relative_heading(state, obs))
