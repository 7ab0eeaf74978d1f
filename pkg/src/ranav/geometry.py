"""Cylinder obstacle fields, analytic ray casting and randomized world sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_RAYS = 11
RAY_FOV_HALF = math.pi / 4.0  # rays evenly spaced in [-pi/4, pi/4]
RAY_OFFSETS = np.linspace(-RAY_FOV_HALF, RAY_FOV_HALF, N_RAYS)

D_MAX = 10.0            # ray clip distance (m); keeps log(ray distance) bounded
OBSTACLE_RADIUS = 0.4   # cylinder radius (m)
ROBOT_RADIUS = 0.3      # disc footprint approximating the robot hull (m)
CLEARANCE_MARGIN = 0.1  # extra spawn/goal clearance beyond contact (m)
ILLUSION_GAP = 0.3      # rays beyond d_goal + gap may be overwritten

# Axis-aligned sampling rectangles (xmin, xmax, ymin, ymax).  Training worlds
# use an 11 m x 5 m field covering the origin and all goals; test worlds pack
# eight cylinders into a 5.5 m x 4 m field between spawn and typical goals.
TRAIN_RECT = (-1.5, 9.5, -2.5, 2.5)
TEST_RECT = (1.0, 6.5, -2.0, 2.0)
TEST_OBSTACLE_COUNT = 8


class SamplingExhausted(Exception):
    """Raised when obstacle clearance cannot be met within the attempt budget."""


@dataclass
class Obstacle:
    cx: float
    cy: float
    radius: float = OBSTACLE_RADIUS

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")


@dataclass
class GoalCommand:
    """World-frame goal position plus desired final heading."""

    x_goal: float
    y_goal: float
    heading_goal: float

    def __post_init__(self):
        self.heading_goal = wrap_angle(self.heading_goal)


@dataclass
class WorldConfig:
    obstacles: list[Obstacle]
    goal: GoalCommand
    spawn_rect: tuple[float, float, float, float]
    rng_seed: int = -1

    def obstacle_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (k,2) centers and (k,) radii for vectorized queries."""
        if not self.obstacles:
            return np.zeros((0, 2)), np.zeros(0)
        centers = np.array([[o.cx, o.cy] for o in self.obstacles])
        radii = np.array([o.radius for o in self.obstacles])
        return centers, radii


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]; -pi maps to +pi."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


def cast_rays_multi(px, py, theta, centers, radii, d_max=D_MAX):
    """Analytic ray-circle casting for a batch of robot poses.

    px, py, theta are (n,) arrays; centers (k,2), radii (k,).  Returns (n,11)
    distances: per ray the smallest positive root of the ray-circle quadratic
    over all obstacles, clipped to d_max.  Tangent rays count as hits.
    """
    px = np.asarray(px, dtype=float)
    n = px.shape[0]
    if centers.shape[0] == 0:
        return np.full((n, N_RAYS), float(d_max))
    ang = np.asarray(theta, dtype=float)[:, None] + RAY_OFFSETS[None, :]
    dx = np.cos(ang)  # (n,11)
    dy = np.sin(ang)
    ox = centers[:, 0][None, None, :] - px[:, None, None]  # (n,1,k)
    oy = centers[:, 1][None, None, :] - np.asarray(py, dtype=float)[:, None, None]
    b = dx[:, :, None] * ox + dy[:, :, None] * oy          # (n,11,k)
    c0 = ox * ox + oy * oy - (radii * radii)[None, None, :]
    disc = b * b - c0
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = b - sq
    t_far = b + sq
    # smallest positive root; from inside a circle the near root is negative
    t = np.where(t_near > 0.0, t_near, t_far)
    t = np.where(hit & (t > 0.0), t, np.inf)
    return np.minimum(t.min(axis=2), float(d_max))


def cast_rays_fields(px, py, theta, centers, radii, d_max=D_MAX):
    """Like `cast_rays_multi` but with a separate obstacle field per pose.

    centers (n,k,2) and radii (n,k); pad unused slots with radius 0 far away.
    """
    px = np.asarray(px, dtype=float)
    n = px.shape[0]
    if centers.shape[1] == 0:
        return np.full((n, N_RAYS), float(d_max))
    ang = np.asarray(theta, dtype=float)[:, None] + RAY_OFFSETS[None, :]
    dx = np.cos(ang)
    dy = np.sin(ang)
    ox = centers[:, :, 0][:, None, :] - px[:, None, None]   # (n,1,k) -> bcast (n,11,k)
    oy = centers[:, :, 1][:, None, :] - np.asarray(py, dtype=float)[:, None, None]
    b = dx[:, :, None] * ox + dy[:, :, None] * oy
    c0 = ox * ox + oy * oy - (radii * radii)[:, None, :]
    disc = b * b - c0
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = b - sq
    t_far = b + sq
    t = np.where(t_near > 0.0, t_near, t_far)
    t = np.where(hit & (t > 0.0), t, np.inf)
    return np.minimum(t.min(axis=2), float(d_max))


def cast_rays(state, obstacles: list[Obstacle], d_max: float = D_MAX) -> np.ndarray:
    """Cast the 11-ray fan from a single robot state; returns distances (m)."""
    if obstacles:
        centers = np.array([[o.cx, o.cy] for o in obstacles])
        radii = np.array([o.radius for o in obstacles])
    else:
        centers, radii = np.zeros((0, 2)), np.zeros(0)
    out = cast_rays_multi(
        np.array([state.x]), np.array([state.y]), np.array([state.theta]),
        centers, radii, d_max)
    return out[0]


def apply_illusion(distances: np.ndarray, d_goal: float, rng: np.random.Generator) -> np.ndarray:
    """Overwrite far ray readings with random shorter values.

    Entries strictly greater than d_goal + 0.3 are replaced by samples from
    U(d_goal + 0.3, entry); nearer entries are returned untouched.
    """
    out = np.array(distances, dtype=float, copy=True)
    lo = d_goal + ILLUSION_GAP
    mask = out > lo
    if mask.any():
        out[mask] = rng.uniform(lo, out[mask])
    return out


def check_collision(state, obstacles: list[Obstacle], r_robot: float = ROBOT_RADIUS) -> bool:
    """True iff the robot disc strictly overlaps any obstacle."""
    for o in obstacles:
        if math.hypot(o.cx - state.x, o.cy - state.y) < o.radius + r_robot:
            return True
    return False


def collision_mask(px, py, centers, radii, r_robot=ROBOT_RADIUS):
    """Vectorized collision test: (n,) bool for poses against (k,) obstacles."""
    if centers.shape[0] == 0:
        return np.zeros(np.shape(px), dtype=bool)
    d2 = (np.asarray(px)[:, None] - centers[:, 0][None, :]) ** 2 \
        + (np.asarray(py)[:, None] - centers[:, 1][None, :]) ** 2
    return (d2 < ((radii + r_robot) ** 2)[None, :]).any(axis=1)


def _sample_goal(rng: np.random.Generator) -> GoalCommand:
    x = rng.uniform(1.5, 7.5)
    y = rng.uniform(-2.0, 2.0)
    heading = math.atan2(y, x) + rng.uniform(-0.3, 0.3)
    return GoalCommand(x, y, heading)


def sample_world(mode: str, rng, max_attempts: int = 1000) -> WorldConfig:
    """Sample a randomized obstacle world.

    mode "train": 0..8 cylinders in the 11 m x 5 m field; mode "test": exactly
    8 cylinders in the 5.5 m x 4 m field.  Obstacles violating spawn or goal
    clearance are rejection-resampled.  `rng` may be an integer seed (recorded
    in the result) or a Generator.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"unknown world mode {mode!r}")
    seed = -1
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)

    goal = _sample_goal(rng)
    if mode == "train":
        rect = TRAIN_RECT
        count = int(rng.integers(0, TEST_OBSTACLE_COUNT + 1))
    else:
        rect = TEST_RECT
        count = TEST_OBSTACLE_COUNT

    clear = OBSTACLE_RADIUS + ROBOT_RADIUS + CLEARANCE_MARGIN
    obstacles = []
    for _ in range(count):
        for _attempt in range(max_attempts):
            cx = rng.uniform(rect[0], rect[1])
            cy = rng.uniform(rect[2], rect[3])
            if math.hypot(cx, cy) < clear:
                continue
            if math.hypot(cx - goal.x_goal, cy - goal.y_goal) < clear:
                continue
            obstacles.append(Obstacle(cx, cy))
            break
        else:
            raise SamplingExhausted(
                f"could not place obstacle with {clear} m clearance "
                f"in {max_attempts} attempts")
    return WorldConfig(obstacles=obstacles, goal=goal, spawn_rect=rect, rng_seed=seed)
