"""Reduced-order planar robot model: rate-limited twist tracking + pose integration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GoalCommand, wrap_angle

# Hard physical twist limits (clamped every step regardless of commands).
V_X_LIMIT = 5.0      # 4.5 m/s command ceiling + 0.5 margin
V_Y_LIMIT = 1.5
OMEGA_LIMIT = 7.0

# Command box of the goal-reaching controller: (low, high) per twist component.
AGILE_BOX = ((-1.0, 4.5), (-1.0, 1.0), (-6.0, 6.0))


@dataclass
class RobotState:
    """Planar pose (world frame) plus base-frame twist."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    omega_z: float = 0.0

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)
        self.v_x = min(max(self.v_x, -V_X_LIMIT), V_X_LIMIT)
        self.v_y = min(max(self.v_y, -V_Y_LIMIT), V_Y_LIMIT)
        self.omega_z = min(max(self.omega_z, -OMEGA_LIMIT), OMEGA_LIMIT)


@dataclass
class TwistCommand:
    v_x_c: float = 0.0
    v_y_c: float = 0.0
    omega_z_c: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x_c, self.v_y_c, self.omega_z_c])


@dataclass
class DynamicsConfig:
    dt: float = 0.02        # control/physics step (50 Hz)
    tau_tw: float = 0.2     # first-order twist tracking time constant
    a_max: float = 6.0      # linear acceleration limit (m/s^2)
    alpha_max: float = 15.0  # angular acceleration limit (rad/s^2)

    def __post_init__(self):
        if min(self.dt, self.tau_tw, self.a_max, self.alpha_max) <= 0:
            raise ValueError("dynamics parameters must be positive")
        if self.dt > self.tau_tw:
            raise ValueError("dt must not exceed tau_tw")


def _track(v, cmd, tau, limit, dt):
    rate = (cmd - v) / tau
    rate = min(max(rate, -limit), limit)
    return v + rate * dt


def step(state: RobotState, cmd: TwistCommand, cfg: DynamicsConfig = DynamicsConfig()) -> RobotState:
    """One explicit-Euler step: pose integrates the current twist, twist chases the command."""
    c, s = math.cos(state.theta), math.sin(state.theta)
    x = state.x + (state.v_x * c - state.v_y * s) * cfg.dt
    y = state.y + (state.v_x * s + state.v_y * c) * cfg.dt
    theta = wrap_angle(state.theta + state.omega_z * cfg.dt)
    v_x = _track(state.v_x, cmd.v_x_c, cfg.tau_tw, cfg.a_max, cfg.dt)
    v_y = _track(state.v_y, cmd.v_y_c, cfg.tau_tw, cfg.a_max, cfg.dt)
    omega = _track(state.omega_z, cmd.omega_z_c, cfg.tau_tw, cfg.alpha_max, cfg.dt)
    return RobotState(x, y, theta, v_x, v_y, omega)


def step_arrays(states: np.ndarray, cmds: np.ndarray, cfg: DynamicsConfig) -> np.ndarray:
    """Vectorized `step` on an (n,6) state array [x, y, theta, v_x, v_y, omega_z]."""
    x, y, th = states[:, 0], states[:, 1], states[:, 2]
    tw = states[:, 3:6]
    c, s = np.cos(th), np.sin(th)
    out = np.empty_like(states)
    out[:, 0] = x + (tw[:, 0] * c - tw[:, 1] * s) * cfg.dt
    out[:, 1] = y + (tw[:, 0] * s + tw[:, 1] * c) * cfg.dt
    out[:, 2] = wrap_angle(th + tw[:, 2] * cfg.dt)
    rate = (cmds - tw) / cfg.tau_tw
    lim = np.array([cfg.a_max, cfg.a_max, cfg.alpha_max])
    np.clip(rate, -lim, lim, out=rate)
    new_tw = tw + rate * cfg.dt
    hard = np.array([V_X_LIMIT, V_Y_LIMIT, OMEGA_LIMIT])
    np.clip(new_tw, -hard, hard, out=new_tw)
    out[:, 3:6] = new_tw
    return out


def goal_in_base_frame(state: RobotState, goal: GoalCommand) -> tuple[float, float, float]:
    """Goal offset rotated into the base frame plus wrapped heading error."""
    dx = goal.x_goal - state.x
    dy = goal.y_goal - state.y
    c, s = math.cos(state.theta), math.sin(state.theta)
    g_x = c * dx + s * dy
    g_y = -s * dx + c * dy
    return g_x, g_y, wrap_angle(goal.heading_goal - state.theta)


def planar_speed(state: RobotState) -> float:
    return math.hypot(state.v_x, state.v_y)


def state_to_array(state: RobotState) -> np.ndarray:
    return np.array([state.x, state.y, state.theta, state.v_x, state.v_y, state.omega_z])


def state_from_array(a: np.ndarray) -> RobotState:
    return RobotState(*(float(v) for v in a))
