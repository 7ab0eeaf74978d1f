"""Agile goal-reaching task: rewards, policies, and a derivative-free trainer.

The goal-reaching controller maximizes tracking + speed-seeking rewards.  It
is trained with the cross-entropy method over flattened MLP weights, warm
started by behavior-cloning a scripted pure-pursuit controller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine, geometry, nets
from .dynamics import AGILE_BOX, DynamicsConfig, RobotState, TwistCommand, goal_in_base_frame, planar_speed
from .geometry import GoalCommand, WorldConfig, sample_world

DIRECTION_LIMIT = math.radians(105.0)  # "facing the goal" cone half-angle
STALL_SPEED = 0.1                      # below this the robot counts as static

AGILE_OBS_DIM = 18
# fixed feature scaling for [v_x, v_y, w_z, G_x, G_y, herr, t_left, log rays]
AGILE_OBS_SCALE = np.array([4.5, 1.5, 6.0, 5.0, 5.0, math.pi, 9.0]
                           + [1.0] * geometry.N_RAYS)
POLICY_DIMS = [AGILE_OBS_DIM, 32, 32, 3]

_BOX_LO = np.array([b[0] for b in AGILE_BOX])
_BOX_HI = np.array([b[1] for b in AGILE_BOX])


@dataclass
class RewardConfig:
    sigma_soft: float = 2.0
    sigma_tight: float = 0.5
    sigma_heading: float = 1.0
    t_r_pos_soft: float = 2.0
    t_r_pos_tight: float = 1.0
    t_r_heading: float = 2.0
    v_max: float = 4.5
    w_possoft: float = 60.0
    w_postight: float = 60.0
    w_heading: float = 30.0
    w_agile: float = 10.0
    w_stall: float = 20.0
    w_penalty: float = 100.0
    agile_scale: float = 1.0   # x2 aggressive, x1 nominal, x0.5 conservative
    w_smooth: float = 0.01


VARIANT_SCALES = {"aggressive": 2.0, "nominal": 1.0, "conservative": 0.5}


@dataclass
class AgileObservation:
    """18-dim controller input: twist, base-frame goal, time left, log rays."""

    v_x: float
    v_y: float
    omega_z: float
    g_x: float
    g_y: float
    g_heading_err: float
    time_left: float
    log_rays: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([
            [self.v_x, self.v_y, self.omega_z,
             self.g_x, self.g_y, self.g_heading_err, self.time_left],
            self.log_rays])


def _track_term(err, sigma, t, t_total, t_r):
    gate = (t > t_total - t_r) / t_r
    return gate / (1.0 + (err / sigma) ** 2)


def reward_terms_arrays(post, cfg: RewardConfig):
    """Vectorized per-step reward on engine post-step quantities."""
    t, T = post.t_sec, post.t_total
    d = post.d_goal
    possoft = cfg.w_possoft * _track_term(d, cfg.sigma_soft, t, T, cfg.t_r_pos_soft)
    postight = cfg.w_postight * _track_term(d, cfg.sigma_tight, t, T, cfg.t_r_pos_tight)
    heading = cfg.w_heading * (d <= cfg.sigma_soft) \
        * _track_term(np.abs(post.heading_err), cfg.sigma_heading, t, T, cfg.t_r_heading)
    facing = np.abs(post.bearing) < DIRECTION_LIMIT
    at_goal = d < cfg.sigma_tight
    agile = np.maximum(np.maximum(post.v_x / cfg.v_max, 0.0) * facing, at_goal)
    agile = cfg.agile_scale * cfg.w_agile * agile
    stall = cfg.w_stall * ((post.speed < STALL_SPEED)
                           & (d > cfg.sigma_soft) & ~facing)
    penalty = cfg.w_penalty * post.collided
    smooth = cfg.w_smooth * np.sum((post.cmd - post.prev_cmd) ** 2, axis=-1)
    total = possoft + postight + heading + agile - stall - penalty - smooth
    return total, {"possoft": possoft, "postight": postight, "heading": heading,
                   "agile": agile, "stall": -stall, "penalty": -penalty,
                   "smooth": -smooth}


def step_reward(state: RobotState, goal: GoalCommand, cmd: TwistCommand,
                prev_cmd: TwistCommand, t: float, t_total: float,
                collided: bool, cfg: RewardConfig = RewardConfig()):
    """Single-step reward; returns (total, term breakdown)."""
    from types import SimpleNamespace
    g_x, g_y, herr = goal_in_base_frame(state, goal)
    post = SimpleNamespace()
    post.v_x = np.array([state.v_x])
    post.speed = np.array([planar_speed(state)])
    post.d_goal = np.array([math.hypot(g_x, g_y)])
    post.heading_err = np.array([herr])
    post.bearing = np.array([math.atan2(g_y, g_x)])
    post.t_sec = t
    post.t_total = np.array([t_total])
    post.cmd = cmd.as_array()[None, :]
    post.prev_cmd = prev_cmd.as_array()[None, :]
    post.collided = np.array([collided])
    total, terms = reward_terms_arrays(post, cfg)
    return float(total[0]), {k: float(v[0]) for k, v in terms.items()}


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

def squash_to_box(y: np.ndarray) -> np.ndarray:
    """tanh-squash raw network outputs into the agile command box."""
    return _BOX_LO + (np.tanh(y) + 1.0) * 0.5 * (_BOX_HI - _BOX_LO)


def unsquash_from_box(cmd: np.ndarray) -> np.ndarray:
    """Inverse of squash_to_box (clipped), for behavior-cloning targets."""
    u = 2.0 * (cmd - _BOX_LO) / (_BOX_HI - _BOX_LO) - 1.0
    return np.arctanh(np.clip(u, -0.995, 0.995))


def policy_apply(params: nets.MlpParams, obs_rows: np.ndarray) -> np.ndarray:
    """Batched policy forward: (n,18) observations -> (n,3) box commands."""
    y = nets.forward_batch(params, obs_rows / AGILE_OBS_SCALE)
    return squash_to_box(y)


def policy_forward(params: nets.MlpParams, obs) -> TwistCommand:
    """Network forward pass, tanh-squashed into the agile command box."""
    vec = obs.as_vector() if isinstance(obs, AgileObservation) else np.asarray(obs, dtype=float)
    cmd = policy_apply(params, vec[None, :])[0]
    return TwistCommand(*cmd)


def scripted_apply(gx, gy, lograys):
    """Vectorized pure-pursuit fallback controller."""
    bearing = np.arctan2(gy, gx)
    omega = np.clip(2.5 * bearing, _BOX_LO[2], _BOX_HI[2])
    d = np.exp(lograys)
    front = d[:, 3:8].min(axis=1)
    left = d[:, 6:].min(axis=1)
    right = d[:, :5].min(axis=1)
    clearance = np.clip((front - 0.6) / 2.4, 0.0, 1.0)
    d_goal = np.hypot(gx, gy)
    approach = np.clip(d_goal / 3.5, 0.0, 1.0)
    v_x = np.clip(_BOX_HI[0] * clearance * approach * np.cos(bearing),
                  _BOX_LO[0], _BOX_HI[0])
    rep = 0.5 * (1.0 / np.maximum(right, 0.3) - 1.0 / np.maximum(left, 0.3))
    v_y = np.clip(rep, _BOX_LO[1], _BOX_HI[1])
    return np.stack([v_x, v_y, omega], axis=1)


def scripted_policy(obs: AgileObservation) -> TwistCommand:
    """Deterministic fallback policy (also the behavior-cloning teacher)."""
    cmd = scripted_apply(np.array([obs.g_x]), np.array([obs.g_y]),
                         np.asarray(obs.log_rays, dtype=float)[None, :])[0]
    return TwistCommand(*cmd)


def obs_rows_from_ctx(ctx) -> np.ndarray:
    return np.concatenate(
        [ctx.tw, ctx.gx[:, None], ctx.gy[:, None], ctx.herr[:, None],
         ctx.tleft[:, None], ctx.lograys], axis=1)


def make_policy_controller(params: nets.MlpParams):
    def controller(ctx):
        cmds = policy_apply(params, obs_rows_from_ctx(ctx))
        n = cmds.shape[0]
        return cmds, np.zeros(n, dtype=np.int8), np.full(n, np.nan)
    return controller


def make_scripted_controller():
    def controller(ctx):
        cmds = scripted_apply(ctx.gx, ctx.gy, ctx.lograys)
        n = cmds.shape[0]
        return cmds, np.zeros(n, dtype=np.int8), np.full(n, np.nan)
    return controller


def controller_from(policy) -> "callable":
    """Accept MlpParams, the string 'scripted', or a ready controller."""
    if isinstance(policy, nets.MlpParams):
        return make_policy_controller(policy)
    if policy == "scripted":
        return make_scripted_controller()
    if callable(policy):
        return policy
    raise TypeError(f"cannot build a controller from {policy!r}")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class CemConfig:
    population: int = 64
    elites: int = 8
    iterations: int = 100
    init_std: float = 0.3
    std_floor: float = 0.02
    episodes_per_eval: int = 8
    pretrain_imitation: bool = True

    def __post_init__(self):
        if self.elites >= self.population:
            raise ValueError("elites must be smaller than the population")


def evaluate_return(params, world: WorldConfig, reward_cfg: RewardConfig, rng,
                    dyn_cfg: DynamicsConfig = DynamicsConfig()) -> float:
    """Undiscounted return of one episode on `world` (collision terminates)."""
    seed = rng if isinstance(rng, (int, np.integer)) \
        else int(rng.integers(0, 2 ** 62))
    cb = lambda post: reward_terms_arrays(post, reward_cfg)[0]
    res = engine.rollout([world], controller_from(params), dyn_cfg=dyn_cfg,
                         seeds=[seed], sigma_tight=reward_cfg.sigma_tight,
                         noise=True, illusion=True, reward_cb=cb)
    return float(res.returns[0])


def _stacked_policy_controller(flat_pop: np.ndarray, episodes_per_candidate: int):
    """Controller evaluating a whole CEM population in one lockstep batch."""
    pop = flat_pop.shape[0]
    weights, biases, k = [], [], 0
    for i in range(len(POLICY_DIMS) - 1):
        n_out, n_in = POLICY_DIMS[i + 1], POLICY_DIMS[i]
        weights.append(flat_pop[:, k:k + n_out * n_in]
                       .reshape(pop, n_out, n_in).transpose(0, 2, 1).copy())
        k += n_out * n_in
        biases.append(flat_pop[:, k:k + n_out][:, None, :].copy())
        k += n_out

    def controller(ctx):
        n = ctx.tw.shape[0]
        obs = obs_rows_from_ctx(ctx) / AGILE_OBS_SCALE
        full = np.zeros((pop * episodes_per_candidate, obs.shape[1]))
        full[ctx.episode_idx] = obs
        h = full.reshape(pop, episodes_per_candidate, -1)
        last = len(weights) - 1
        for i, (w, b) in enumerate(zip(weights, biases)):
            h = np.matmul(h, w) + b
            if i != last:
                h = np.tanh(h)
        cmds = squash_to_box(h.reshape(pop * episodes_per_candidate, 3))[ctx.episode_idx]
        return cmds, np.zeros(n, dtype=np.int8), np.full(n, np.nan)

    return controller


def pretrain_imitation(rng: np.random.Generator,
                       reward_cfg: RewardConfig,
                       dyn_cfg: DynamicsConfig = DynamicsConfig(),
                       n_worlds: int = 96,
                       adam_steps: int = 1500,
                       batch: int = 512) -> nets.MlpParams:
    """Behavior-clone the scripted controller onto the policy network."""
    seeds = [int(rng.integers(0, 2 ** 62)) for _ in range(n_worlds)]
    worlds = [sample_world("train", s) for s in seeds]
    rows = []
    cmds = []

    def recorder(inner):
        def controller(ctx):
            out = inner(ctx)
            rows.append(obs_rows_from_ctx(ctx))
            cmds.append(out[0])
            return out
        return controller

    engine.rollout(worlds, recorder(make_scripted_controller()),
                   dyn_cfg=dyn_cfg, seeds=seeds,
                   sigma_tight=reward_cfg.sigma_tight, noise=True, illusion=True)
    X = np.concatenate(rows) / AGILE_OBS_SCALE
    Y = unsquash_from_box(np.concatenate(cmds))
    params = nets.init_params(POLICY_DIMS, rng)
    opt = nets.AdamState.for_params(params, lr=3e-3)
    for _ in range(adam_steps):
        pick = rng.integers(0, X.shape[0], batch)
        grads, _ = nets.grad_params_batch(params, X[pick], Y[pick])
        nets.adam_step(params, grads, opt)
    return params


def train_agile(cem: CemConfig, reward_cfg: RewardConfig, rng,
                dyn_cfg: DynamicsConfig = DynamicsConfig(),
                objective=None):
    """Cross-entropy method over flattened policy weights.

    Returns (best_params, history) where history rows are
    (iteration, best_return, mean_return, std_norm).  `objective`, when given,
    replaces episode evaluation with a direct callable on the flat parameter
    vector (used by the optimizer self-tests).
    """
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    dim = nets.n_params(POLICY_DIMS)
    if objective is None and cem.pretrain_imitation:
        mean = pretrain_imitation(rng, reward_cfg, dyn_cfg).flatten()
    else:
        mean = np.zeros(dim)
    std = np.full(dim, cem.init_std)

    best_return = -np.inf
    best_flat = mean.copy()
    history = []
    for it in range(cem.iterations):
        cand = mean[None, :] + std[None, :] * rng.standard_normal((cem.population, dim))
        cand[0] = mean  # keep the current mean in the running
        if objective is not None:
            scores = np.array([float(objective(c)) for c in cand])
        else:
            world_seeds = [int(rng.integers(0, 2 ** 62))
                           for _ in range(cem.episodes_per_eval)]
            worlds = [sample_world("train", s) for s in world_seeds]
            ep_seeds = np.tile(world_seeds, cem.population)
            cb = lambda post: reward_terms_arrays(post, reward_cfg)[0]
            res = engine.rollout(
                worlds * cem.population,
                _stacked_policy_controller(cand, cem.episodes_per_eval),
                dyn_cfg=dyn_cfg, seeds=ep_seeds,
                sigma_tight=reward_cfg.sigma_tight,
                noise=True, illusion=True, reward_cb=cb)
            scores = res.returns.reshape(cem.population, cem.episodes_per_eval).mean(axis=1)
        order = np.argsort(scores)[::-1]
        if scores[order[0]] > best_return:
            best_return = float(scores[order[0]])
            best_flat = cand[order[0]].copy()
        elite = cand[order[:cem.elites]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cem.std_floor)
        history.append((it, best_return, float(scores.mean()),
                        float(np.linalg.norm(std))))
    return nets.MlpParams.from_flat(POLICY_DIMS, best_flat), np.array(history)
