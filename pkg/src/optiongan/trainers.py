"""Outer training loops.

``train_expert`` runs forward RL on the true task reward.  ``irlgan_train``
and ``optiongan_train`` run the adversarial loop: sample novice episodes,
take a few discriminator steps against the expert states, relabel the
novice rewards as ``log R(s')`` of the next state, fit the value baseline,
compute GAE advantages and take one constrained policy step.

Every random draw is derived from ``TrainConfig.seed``, so a run is a pure
function of its configuration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import specialization_fraction
from .discriminator import RegWeights, RewardMoE, disc_update, mixture_reward
from .envs import EnvSpec, Trajectory, collect_batch, rollout_many
from .nn import AdamState
from .policy import GatingNet, OptionPolicy, gating_probs, make_actor
from .rl import PolicyBatch, StepInfo, ValueFn, discounted_returns, gae_advantages, ppo_step, \
    standardize, trpo_step, value_fit
from .storage import Checkpoint, ConfigError, DemoSet, MetricsRow, TrainConfig, append_metrics

log = logging.getLogger(__name__)

# sub-seed tags
_POLICY, _REWARD, _GATING, _VALUE, _MINIBATCH, _EPISODES = 1, 2, 3, 4, 5, 6


def sub_seed(base: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(base), *tags]).generate_state(1)[0])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list = field(default_factory=list)
    steps: list = field(default_factory=list)      # StepInfo per policy update


def _episode_stats(trajs):
    returns = np.array([tr.true_return for tr in trajs])
    return float(returns.mean()), _stderr(returns)


def _stderr(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def _policy_update(policy, gating, vf, trajs, rewards, cfg: TrainConfig):
    """Value fit, GAE and one TRPO/PPO step on a batch of episodes."""
    states = np.concatenate([tr.states[:-1] for tr in trajs])
    actions = np.concatenate([tr.actions for tr in trajs])
    returns = np.concatenate(discounted_returns(rewards, cfg.gae.gamma))
    vf = value_fit(vf, states, returns, cfg.value_iters)
    adv = []
    for tr, r in zip(trajs, rewards):
        adv.append(gae_advantages(r, vf.predict(tr.states), cfg.gae.gamma, cfg.gae.lam, tr.terminal))
    batch = PolicyBatch.build(policy, gating, states, actions, standardize(np.concatenate(adv)))
    if cfg.optimizer == "trpo":
        policy, info = trpo_step(policy, gating, batch, cfg.trpo)
    else:
        policy, info = ppo_step(policy, gating, batch, cfg.ppo)
    return policy, vf, info


def _log_row(row: MetricsRow, metrics_path):
    log.info("iter %d  return %.2f +- %.2f  disc %.4f  spec %.3f  gates %s", row.iteration,
             row.mean_true_return, row.return_stderr, row.disc_loss, row.specialization_frac_0p1,
             np.round(row.mean_gate, 3).tolist())
    if metrics_path is not None:
        append_metrics(metrics_path, row)


def train_expert(env_spec: EnvSpec, cfg: TrainConfig, metrics_path=None) -> TrainResult:
    """Forward RL with TRPO (or PPO) on the true environment reward, one option."""
    s = cfg.seed
    policy = OptionPolicy.create(env_spec.obs_dim, env_spec.act_dim, 1, cfg.hidden, cfg.activation,
                                 cfg.init_log_std, sub_seed(s, _POLICY))
    vf = ValueFn.create(env_spec.obs_dim, cfg.hidden, cfg.activation, sub_seed(s, _VALUE))
    result = TrainResult(None)
    for it in range(cfg.iterations):
        trajs = collect_batch(env_spec, make_actor(policy), cfg.batch_timesteps, sub_seed(s, _EPISODES, it))
        mean_ret, se = _episode_stats(trajs)
        policy, vf, info = _policy_update(policy, None, vf, trajs, [tr.env_rewards for tr in trajs], cfg)
        result.steps.append(info)
        row = MetricsRow(it, mean_ret, se, float("nan"), float("nan"), float("nan"), float("nan"),
                         float("nan"), 1.0, [1.0])
        result.metrics.append(row)
        _log_row(row, metrics_path)
    result.checkpoint = Checkpoint(policy, vf, None, None, env_spec, cfg.to_dict(), s)
    return result


def collect_demos(checkpoint: Checkpoint, env_spec: EnvSpec, n_rollouts: int, seed: int,
                  label: str | None = None) -> DemoSet:
    """Roll out a policy and keep only the visited states."""
    if checkpoint.policy.obs_dim != env_spec.obs_dim or checkpoint.policy.act_dim != env_spec.act_dim:
        raise ValueError("checkpoint dimensions do not match the environment")
    label = label if label is not None else f"g{env_spec.gravity_mult:.2f}"
    trajs = rollout_many(env_spec, make_actor(checkpoint.policy, checkpoint.gating),
                         range(seed, seed + n_rollouts))
    return DemoSet([(label, [tr.states.copy() for tr in trajs])], env_spec.obs_dim)


def evaluate(checkpoint: Checkpoint, env_spec: EnvSpec, n_rollouts: int = 25, seed: int = 0):
    """Mean true return and its standard error (0 for a single rollout)."""
    trajs = rollout_many(env_spec, make_actor(checkpoint.policy, checkpoint.gating),
                         range(seed, seed + n_rollouts))
    return _episode_stats(trajs)


def _adversarial_train(env_spec: EnvSpec, demos: DemoSet, cfg: TrainConfig, with_gating: bool,
                       metrics_path=None) -> TrainResult:
    if demos.obs_dim != env_spec.obs_dim:
        raise ValueError(f"demos have {demos.obs_dim}-D states, environment has {env_spec.obs_dim}-D")
    s, K = cfg.seed, cfg.n_options
    obs, act = env_spec.obs_dim, env_spec.act_dim
    policy = OptionPolicy.create(obs, act, K, cfg.hidden, cfg.activation, cfg.init_log_std,
                                 sub_seed(s, _POLICY))
    moe = RewardMoE.create(obs, K, cfg.hidden, cfg.activation, sub_seed(s, _REWARD))
    gating = GatingNet.create(obs, K, cfg.hidden, cfg.activation, sub_seed(s, _GATING)) if with_gating else None
    vf = ValueFn.create(obs, cfg.hidden, cfg.activation, sub_seed(s, _VALUE))
    n_disc = moe.spec.n_params + (gating.spec.n_params if gating is not None else 0)
    adam = AdamState.zeros(n_disc, cfg.disc_learning_rate)
    expert = demos.all_states()
    rng = np.random.default_rng(sub_seed(s, _MINIBATCH))
    result = TrainResult(None)

    for it in range(cfg.iterations):
        trajs = collect_batch(env_spec, make_actor(policy, gating), cfg.batch_timesteps,
                              sub_seed(s, _EPISODES, it))
        novice = np.concatenate([tr.states for tr in trajs])
        info = None
        for _ in range(cfg.disc_updates_per_iter):
            nb = novice[rng.choice(len(novice), min(cfg.disc_minibatch, len(novice)), replace=False)]
            eb = expert[rng.choice(len(expert), min(cfg.disc_minibatch, len(expert)), replace=False)]
            moe, gating, adam, info = disc_update(moe, gating, adam, nb, eb, cfg.reg)

        rewards = [np.log(mixture_reward(moe, gating, tr.states[1:])) for tr in trajs]
        mean_ret, se = _episode_stats(trajs)
        policy, vf, step = _policy_update(policy, gating, vf, trajs, rewards, cfg)
        result.steps.append(step)

        gates = gating_probs(gating, novice)
        row = MetricsRow(
            it, mean_ret, se,
            float("nan") if info is None else info.loss,
            *((float("nan"),) * 4 if info is None else (info.reg_b, info.reg_e, info.reg_v, info.reg_mi)),
            specialization_fraction(gates, 0.1), gates.mean(axis=0).tolist())
        result.metrics.append(row)
        _log_row(row, metrics_path)

    result.checkpoint = Checkpoint(policy, vf, gating, moe, env_spec, cfg.to_dict(), s)
    return result


def irlgan_train(env_spec: EnvSpec, demos: DemoSet, cfg: TrainConfig, metrics_path=None) -> TrainResult:
    """Single discriminator, single Gaussian policy."""
    if cfg.n_options != 1:
        raise ConfigError("IRLGAN trains a single option; set options.n = 1")
    # gate regularizers are meaningless without a gate
    return _adversarial_train(env_spec, demos, replace(cfg, reg=RegWeights.zero()), False, metrics_path)


def optiongan_train(env_spec: EnvSpec, demos: DemoSet, cfg: TrainConfig, metrics_path=None) -> TrainResult:
    """Joint reward-policy options sharing one gating network."""
    return _adversarial_train(env_spec, demos, cfg, True, metrics_path)
