"""Seedable continuous-control tasks with a gravity multiplier, and rollouts.

Two tasks are provided:

``planar-hopper``
    2-D point mass over a ground plane at ``y = 0``.  Actions are horizontal
    and vertical thrust in ``[-1, 1]``.  Observation ``(x, y, vx, vy, contact)``.
    Reward is forward velocity minus a small action cost.

``pendulum-swing``
    Classic torque-limited swing-up.  Observation ``(cos th, sin th, th_dot)``
    with ``th = 0`` upright.  Reward ``-(th^2 + 0.1 th_dot^2 + 0.001 a^2)``
    evaluated on the pre-step state.

Dynamics are pure functions of ``(spec, state, action)`` integrated with
semi-implicit Euler.  Pendulum states carry the raw angle alongside the
observation so the dynamics stay exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

EARTH_G = 9.81
ENV_NAMES = ("planar-hopper", "pendulum-swing")

# hopper constants
THRUST_ACCEL = 20.0       # m/s^2 at |action| = 1
DRAG = 0.5                # linear drag, 1/s
GROUND_FRICTION = 2.0     # extra horizontal damping while in contact, 1/s
CRASH_SPEED = 6.0         # downward impact speed that ends the episode, m/s

# pendulum constants (unit mass and length)
MAX_TORQUE = 2.0
MAX_SPEED = 8.0


@dataclass(frozen=True)
class EnvSpec:
    name: str = "pendulum-swing"
    gravity_mult: float = 1.0
    horizon: int = 200
    dt: float = 0.05

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.name!r}; choose from {ENV_NAMES}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.gravity_mult > 0:
            raise ValueError("gravity multiplier must be positive")

    @property
    def gravity(self) -> float:
        return EARTH_G * self.gravity_mult

    @property
    def obs_dim(self) -> int:
        return 5 if self.name == "planar-hopper" else 3

    @property
    def act_dim(self) -> int:
        return 2 if self.name == "planar-hopper" else 1

    @property
    def action_bound(self) -> float:
        return 1.0 if self.name == "planar-hopper" else MAX_TORQUE


@dataclass(frozen=True)
class EnvState:
    observation: np.ndarray
    t: int = 0
    theta: float = 0.0      # pendulum only; raw angle


def wrap_angle(th):
    return ((th + np.pi) % (2 * np.pi)) - np.pi


def pendulum_state(theta: float, theta_dot: float, t: int = 0) -> EnvState:
    obs = np.array([np.cos(theta), np.sin(theta), theta_dot])
    return EnvState(obs, t, float(theta))


def hopper_state(x, y, vx, vy, t: int = 0) -> EnvState:
    contact = 1.0 if y <= 0.0 else 0.0
    return EnvState(np.array([x, y, vx, vy, contact], dtype=float), t)


def env_reset(spec: EnvSpec, seed) -> EnvState:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if spec.name == "planar-hopper":
        vx, vy = rng.uniform(-0.05, 0.05, size=2)
        # resting on the ground: an upward start velocity lifts off, a downward one is absorbed
        return hopper_state(0.0, 0.0, vx, vy)
    th = rng.uniform(-np.pi, np.pi)
    thdot = rng.uniform(-1.0, 1.0)
    return pendulum_state(th, thdot)


def env_step(spec: EnvSpec, state: EnvState, action) -> tuple[EnvState, float, bool]:
    a = np.asarray(action, dtype=float).reshape(-1)
    if a.shape != (spec.act_dim,):
        raise ValueError(f"action has shape {a.shape}, expected ({spec.act_dim},)")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite action {a}")
    a = np.minimum(np.maximum(a, -spec.action_bound), spec.action_bound)
    t = state.t + 1
    if spec.name == "pendulum-swing":
        th = state.theta
        thdot = float(state.observation[2])
        u = float(a[0])
        reward = -(wrap_angle(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
        thdot = thdot + (1.5 * spec.gravity * np.sin(th) + 3.0 * u) * spec.dt
        thdot = min(max(thdot, -MAX_SPEED), MAX_SPEED)
        th = th + thdot * spec.dt
        return pendulum_state(th, thdot, t), float(reward), t >= spec.horizon

    x, y, vx, vy, contact = state.observation
    fric = GROUND_FRICTION if contact > 0 else 0.0
    vx = vx + (THRUST_ACCEL * a[0] - (DRAG + fric) * vx) * spec.dt
    vy = vy + (THRUST_ACCEL * a[1] - spec.gravity - DRAG * vy) * spec.dt
    x = x + vx * spec.dt
    y = y + vy * spec.dt
    crashed = False
    if y <= 0.0:
        crashed = vy < -CRASH_SPEED
        # ground contact: normal force removes the downward motion
        y, vy = 0.0, 0.0
    reward = vx - 0.001 * float(a @ a)
    return hopper_state(x, y, vx, vy, t), float(reward), crashed or t >= spec.horizon


# ------------------------------------------------------------------ rollouts

@dataclass
class Trajectory:
    states: np.ndarray               # (T+1, obs_dim)
    actions: np.ndarray              # (T, act_dim)
    env_rewards: np.ndarray          # (T,)
    done_index: int                  # T
    terminal: bool = False           # ended by the environment rather than the horizon
    options: np.ndarray | None = None
    seed: int | None = None

    @property
    def length(self) -> int:
        return len(self.env_rewards)

    @property
    def true_return(self) -> float:
        return float(np.sum(self.env_rewards))


# A policy callable maps (observations (n, obs_dim), list of n Generators) to
# either actions (n, act_dim) or a pair (actions, options).  Row i must draw
# only from generator i, which keeps episodes independent of batching.
PolicyFn = Callable[[np.ndarray, list], object]


def _split_policy_output(out):
    if isinstance(out, tuple):
        return np.asarray(out[0], dtype=float), np.asarray(out[1])
    return np.asarray(out, dtype=float), None


def rollout_many(spec: EnvSpec, policy_fn: PolicyFn, seeds, horizon: int | None = None) -> list[Trajectory]:
    """Run one episode per seed, stepping all of them together."""
    horizon = spec.horizon if horizon is None else int(horizon)
    seeds = [int(s) for s in seeds]
    rngs = [np.random.default_rng(s) for s in seeds]
    states = [env_reset(spec, r) for r in rngs]
    n = len(seeds)
    obs = [[s.observation] for s in states]
    acts = [[] for _ in range(n)]
    rews = [[] for _ in range(n)]
    opts = [[] for _ in range(n)]
    terminal = [False] * n
    alive = list(range(n))
    for step in range(horizon):
        if not alive:
            break
        batch = np.stack([states[i].observation for i in alive])
        actions, options = _split_policy_output(policy_fn(batch, [rngs[i] for i in alive]))
        still = []
        for j, i in enumerate(alive):
            nxt, r, done = env_step(spec, states[i], actions[j])
            states[i] = nxt
            obs[i].append(nxt.observation)
            acts[i].append(actions[j])
            rews[i].append(r)
            if options is not None:
                opts[i].append(options[j])
            if done:
                terminal[i] = nxt.t < spec.horizon
            elif step + 1 < horizon:
                still.append(i)
        alive = still
    trajs = []
    for i in range(n):
        T = len(rews[i])
        trajs.append(Trajectory(
            states=np.array(obs[i]), actions=np.array(acts[i]).reshape(T, spec.act_dim),
            env_rewards=np.array(rews[i]), done_index=T, terminal=terminal[i],
            options=np.array(opts[i], dtype=int) if opts[i] else None, seed=seeds[i]))
    return trajs


def rollout(spec: EnvSpec, policy_fn: PolicyFn, horizon: int | None = None, seed: int = 0) -> Trajectory:
    return rollout_many(spec, policy_fn, [seed], horizon)[0]


def collect_batch(spec: EnvSpec, policy_fn: PolicyFn, min_timesteps: int, base_seed: int,
                  wave: int | None = None) -> list[Trajectory]:
    """Collect whole episodes until at least ``min_timesteps`` steps are gathered.

    Episode ``k`` always uses seed ``base_seed + k``.  Episodes run in waves of
    ``wave`` (default: enough to cover ``min_timesteps`` at full horizon); the
    result does not depend on the wave size.
    """
    if min_timesteps < 1:
        raise ValueError("min_timesteps must be >= 1")
    if wave is None:
        wave = -(-min_timesteps // spec.horizon)
    trajs: list[Trajectory] = []
    total = 0
    k = 0
    while total < min_timesteps:
        batch = rollout_many(spec, policy_fn, range(base_seed + k, base_seed + k + wave))
        for tr in batch:
            if total >= min_timesteps:
                break
            trajs.append(tr)
            total += tr.length
        k += wave
    return trajs


def zero_policy(spec: EnvSpec) -> PolicyFn:
    return lambda obs, rngs: np.zeros((len(obs), spec.act_dim))


def constant_policy(spec: EnvSpec, action) -> PolicyFn:
    a = np.asarray(action, dtype=float).reshape(1, spec.act_dim)
    return lambda obs, rngs: np.repeat(a, len(obs), axis=0)
