"""Lockstep episode engine.

Rolls N episodes simultaneously with vectorized numpy stepping.  Controllers
are injected as callables so the engine stays independent of any particular
policy, governor, or reward definition.  Running episodes one at a time
(N = 1) through this same code is what the benchmark harness does, which makes
parallel and sequential evaluation bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import geometry
from .dynamics import DynamicsConfig, step_arrays
from .geometry import WorldConfig, collision_mask, cast_rays_fields

OUTCOME_SUCCESS = 0
OUTCOME_COLLISION = 1
OUTCOME_TIMEOUT = 2
OUTCOME_NAMES = {OUTCOME_SUCCESS: "SUCCESS",
                 OUTCOME_COLLISION: "COLLISION",
                 OUTCOME_TIMEOUT: "TIMEOUT"}

MODE_AGILE = 0
MODE_RECOVERY = 1

EPISODE_T_RANGE = (7.0, 9.0)     # episode length ~ U(7, 9) s
INIT_TWIST_RANGE = 0.5           # initial twist components ~ U(-0.5, 0.5)
LOG_RAY_NOISE = 0.2              # log(ray distance) noise ~ U(-0.2, 0.2)


@dataclass
class RolloutResult:
    outcomes: np.ndarray          # (N,) int: 0 success / 1 collision / 2 timeout
    steps: np.ndarray             # (N,) int, number of dynamics steps executed
    horizon_steps: np.ndarray     # (N,) int, episode length in steps
    v_peak: np.ndarray            # (N,) max planar speed over visited states
    v_bar: np.ndarray             # (N,) mean planar speed until first goal reach
    final_d_goal: np.ndarray      # (N,)
    recovery_steps: np.ndarray    # (N,) steps spent in recovery mode
    returns: np.ndarray | None = None
    trace: SimpleNamespace | None = None
    ra_obs: np.ndarray | None = None      # (T+1, N, 16) float32, state observations
    ra_valid: np.ndarray | None = None    # (T+1, N) bool


def _world_arrays(worlds: list[WorldConfig]):
    kmax = max((len(w.obstacles) for w in worlds), default=0)
    n = len(worlds)
    centers = np.full((n, max(kmax, 1), 2), 1.0e6)
    radii = np.zeros((n, max(kmax, 1)))
    for i, w in enumerate(worlds):
        for j, o in enumerate(w.obstacles):
            centers[i, j, 0] = o.cx
            centers[i, j, 1] = o.cy
            radii[i, j] = o.radius
    goals = np.array([[w.goal.x_goal, w.goal.y_goal, w.goal.heading_goal]
                      for w in worlds])
    return centers, radii, goals


def ra_observation_rows(tw, gx, gy, lograys):
    """Stack the 16-dim risk-observation rows [v; omega; G_xy; log rays]."""
    return np.concatenate(
        [tw, gx[:, None], gy[:, None], lograys], axis=1)


def rollout(worlds: list[WorldConfig],
            controller,
            *,
            dyn_cfg: DynamicsConfig = DynamicsConfig(),
            seeds=None,
            start_states: np.ndarray | None = None,
            horizon_steps=None,
            sigma_tight: float = 0.5,
            noise: bool = False,
            illusion: bool = False,
            reward_cb=None,
            record_trace: bool = False,
            record_ra: bool = False) -> RolloutResult:
    """Roll every world to termination under `controller`.

    controller(ctx) -> (cmds (M,3), modes (M,), vhats (M,)) receives base-frame
    ingredients for the currently active episodes.  Episode length and initial
    pose follow the training protocol (T ~ U(7,9) s, yaw ~ U(-pi,pi), twist ~
    U(-0.5,0.5)) unless `start_states`/`horizon_steps` override them, in which
    case no protocol randomness is consumed at all.
    """
    n = len(worlds)
    dt = dyn_cfg.dt
    centers, radii, goals = _world_arrays(worlds)

    if start_states is not None:
        if horizon_steps is None:
            raise ValueError("start_states requires horizon_steps")
        states = np.array(start_states, dtype=float)
        t_steps = np.full(n, horizon_steps, dtype=int) \
            if np.isscalar(horizon_steps) else np.asarray(horizon_steps, dtype=int)
        rngs = None
    else:
        if seeds is None:
            raise ValueError("either seeds or start_states must be given")
        rngs = [np.random.default_rng(np.random.SeedSequence(entropy=int(s), spawn_key=(1,)))
                for s in seeds]
        states = np.zeros((n, 6))
        t_steps = np.zeros(n, dtype=int)
        for i, rng in enumerate(rngs):
            t_steps[i] = int(round(rng.uniform(*EPISODE_T_RANGE) / dt))
            states[i, 2] = rng.uniform(-math.pi, math.pi)
            states[i, 3:6] = rng.uniform(-INIT_TWIST_RANGE, INIT_TWIST_RANGE, 3)
    t_max = int(t_steps.max()) if n else 0

    if record_ra and (noise or illusion):
        raise ValueError("risk-value observations are recorded noise-free")

    log_noise = illus_u = None
    if noise or illusion:
        if rngs is None:
            raise ValueError("noise requires per-episode seeds")
        if illusion:
            illus_u = np.stack([r.random((t_max, geometry.N_RAYS)) for r in rngs])
        if noise:
            log_noise = np.stack(
                [r.uniform(-LOG_RAY_NOISE, LOG_RAY_NOISE, (t_max, geometry.N_RAYS))
                 for r in rngs])

    outcomes = np.full(n, OUTCOME_TIMEOUT, dtype=int)
    done = np.zeros(n, dtype=bool)
    steps = np.zeros(n, dtype=int)
    prev_modes = np.zeros(n, dtype=np.int8)
    prev_cmds = None
    recovery_steps = np.zeros(n, dtype=int)
    returns = np.zeros(n) if reward_cb is not None else None

    d0 = np.hypot(goals[:, 0] - states[:, 0], goals[:, 1] - states[:, 1])
    final_d_goal = d0.copy()
    speed0 = np.hypot(states[:, 3], states[:, 4])
    v_peak = speed0.copy()
    reached = d0 < sigma_tight
    speed_sum = speed0.copy()
    speed_cnt = np.ones(n)
    speed_sum[reached] = 0.0
    speed_cnt[reached] = 0.0

    # a start already in collision terminates immediately
    start_coll = collision_mask(states[:, 0], states[:, 1], centers, radii)
    outcomes[start_coll] = OUTCOME_COLLISION
    done |= start_coll

    trace = None
    if record_trace:
        trace = SimpleNamespace(
            states=np.full((t_max, n, 6), np.nan),
            cmds=np.full((t_max, n, 3), np.nan),
            modes=np.full((t_max, n), -1, dtype=np.int8),
            vhats=np.full((t_max, n), np.nan),
            rays=np.full((t_max, n, geometry.N_RAYS), np.nan),
            rewards=np.full((t_max, n), np.nan),
            final_states=None)
    ra_obs = ra_valid = None
    if record_ra:
        ra_obs = np.zeros((t_max + 1, n, 16), dtype=np.float32)
        ra_valid = np.zeros((t_max + 1, n), dtype=bool)

    def base_frame(sub):
        dx = goals[sub, 0] - states[sub, 0]
        dy = goals[sub, 1] - states[sub, 1]
        c = np.cos(states[sub, 2])
        s = np.sin(states[sub, 2])
        gx = c * dx + s * dy
        gy = -s * dx + c * dy
        herr = geometry.wrap_angle(goals[sub, 2] - states[sub, 2])
        return gx, gy, herr

    for t in range(t_max):
        idx = np.nonzero(~done & (t < t_steps))[0]
        if idx.size == 0:
            break
        rays_raw = cast_rays_fields(states[idx, 0], states[idx, 1], states[idx, 2],
                                    centers[idx], radii[idx])
        gx, gy, herr = base_frame(idx)
        d_goal = np.hypot(gx, gy)

        rays_obs = rays_raw
        if illusion:
            lo = d_goal[:, None] + geometry.ILLUSION_GAP
            far = rays_obs > lo
            rays_obs = np.where(far, lo + illus_u[idx, t] * (rays_obs - lo), rays_obs)
        lograys = np.log(rays_obs)
        if noise:
            lograys = lograys + log_noise[idx, t]

        tw = states[idx, 3:6]
        ctx = SimpleNamespace(tw=tw, gx=gx, gy=gy, herr=herr,
                              tleft=(t_steps[idx] - t) * dt,
                              lograys=lograys, prev_modes=prev_modes[idx],
                              episode_idx=idx, t=t)
        cmds, modes, vhats = controller(ctx)
        if record_ra:
            ra_obs[t, idx] = ra_observation_rows(tw, gx, gy, lograys)
            ra_valid[t, idx] = True

        new = step_arrays(states[idx], cmds, dyn_cfg)
        collided = collision_mask(new[:, 0], new[:, 1], centers[idx], radii[idx])

        reward_vals = None
        if reward_cb is not None:
            dxn = goals[idx, 0] - new[:, 0]
            dyn_ = goals[idx, 1] - new[:, 1]
            cn = np.cos(new[:, 2])
            sn = np.sin(new[:, 2])
            gxn = cn * dxn + sn * dyn_
            gyn = -sn * dxn + cn * dyn_
            pcmd = cmds if prev_cmds is None else prev_cmds[idx]
            post = SimpleNamespace(
                v_x=new[:, 3],
                speed=np.hypot(new[:, 3], new[:, 4]),
                d_goal=np.hypot(gxn, gyn),
                heading_err=geometry.wrap_angle(goals[idx, 2] - new[:, 2]),
                bearing=np.arctan2(gyn, gxn),
                t_sec=(t + 1) * dt,
                t_total=t_steps[idx] * dt,
                cmd=cmds, prev_cmd=pcmd, collided=collided)
            reward_vals = reward_cb(post)
            returns[idx] += reward_vals

        if record_trace:
            trace.states[t, idx] = states[idx]
            trace.cmds[t, idx] = cmds
            trace.modes[t, idx] = modes
            trace.vhats[t, idx] = vhats
            trace.rays[t, idx] = rays_raw
            if reward_vals is not None:
                trace.rewards[t, idx] = reward_vals

        if prev_cmds is None:
            prev_cmds = np.zeros((n, 3))
        states[idx] = new
        steps[idx] = t + 1
        prev_cmds[idx] = cmds
        prev_modes[idx] = modes
        recovery_steps[idx] += (modes == MODE_RECOVERY)

        speed_new = np.hypot(new[:, 3], new[:, 4])
        np.maximum.at(v_peak, idx, speed_new)
        d_new = np.hypot(goals[idx, 0] - new[:, 0], goals[idx, 1] - new[:, 1])
        final_d_goal[idx] = d_new
        counting = ~reached[idx]
        cidx = idx[counting]
        speed_sum[cidx] += speed_new[counting]
        speed_cnt[cidx] += 1.0
        reached[idx] |= d_new < sigma_tight

        outcomes[idx[collided]] = OUTCOME_COLLISION
        done[idx[collided]] = True
        done[idx[t + 1 >= t_steps[idx]]] = True

    timed_out = (outcomes != OUTCOME_COLLISION)
    outcomes[timed_out & (final_d_goal < sigma_tight)] = OUTCOME_SUCCESS

    if record_ra:
        # label the final visited state of every episode as well
        rays_fin = cast_rays_fields(states[:, 0], states[:, 1], states[:, 2],
                                    centers, radii)
        sub = np.arange(n)
        gx, gy, _ = base_frame(sub)
        ra_obs[steps, sub] = ra_observation_rows(states[:, 3:6], gx, gy,
                                                 np.log(rays_fin))
        ra_valid[steps, sub] = True
    if record_trace:
        trace.final_states = states.copy()

    v_bar = speed_sum / np.maximum(speed_cnt, 1.0)
    return RolloutResult(outcomes=outcomes, steps=steps, horizon_steps=t_steps,
                         v_peak=v_peak, v_bar=v_bar, final_d_goal=final_d_goal,
                         recovery_steps=recovery_steps, returns=returns,
                         trace=trace, ra_obs=ra_obs, ra_valid=ra_valid)
