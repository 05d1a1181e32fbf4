import hashlib
from dataclasses import replace

import numpy as np
import pytest

from optiongan.discriminator import PROB_EPS, RegWeights, mixture_reward
from optiongan.envs import EnvSpec, rollout
from optiongan.policy import OptionPolicy, make_actor
from optiongan.rl import ValueFn
from optiongan.storage import (Checkpoint, ConfigError, DemoSet, TrainConfig, demos_to_text, load_metrics,
                               metrics_to_text)
from optiongan.trainers import collect_demos, evaluate, irlgan_train, optiongan_train, train_expert

PEND = EnvSpec("pendulum-swing", horizon=60)
TINY = TrainConfig(iterations=2, batch_timesteps=240, hidden=(8,), disc_minibatch=64)


def _random_ck(env=PEND, seed=0):
    return Checkpoint(OptionPolicy.create(env.obs_dim, env.act_dim, 1, hidden=(8,), seed=seed),
                      ValueFn.create(env.obs_dim, hidden=(8,)), env=env)


@pytest.fixture(scope="module")
def demos():
    a = collect_demos(_random_ck(EnvSpec("pendulum-swing", 0.5, horizon=60)),
                      EnvSpec("pendulum-swing", 0.5, horizon=60), 3, seed=1)
    b = collect_demos(_random_ck(EnvSpec("pendulum-swing", 1.5, horizon=60), 1),
                      EnvSpec("pendulum-swing", 1.5, horizon=60), 3, seed=2)
    return a.merged(b)


def test_expert_one_iteration_one_row(tmp_path):
    res = train_expert(PEND, replace(TINY, iterations=1), tmp_path / "m.csv")
    assert len(res.metrics) == 1 and len(res.steps) == 1
    assert len(load_metrics(tmp_path / "m.csv")) == 1


def test_expert_deterministic():
    a = train_expert(PEND, TINY)
    b = train_expert(PEND, TINY)
    assert metrics_to_text(a.metrics) == metrics_to_text(b.metrics)
    assert a.checkpoint.policy.flat().tobytes() == b.checkpoint.policy.flat().tobytes()


def test_collect_demos_contract():
    ck = _random_ck()
    d = collect_demos(ck, PEND, 10, seed=4)
    assert d.labels == ["g1.00"] and d.n_episodes == 10
    assert all(ep.shape == (61, 3) for ep in d.groups[0][1])
    again = collect_demos(ck, PEND, 10, seed=4)
    assert hashlib.sha256(demos_to_text(d).encode()).digest() == \
        hashlib.sha256(demos_to_text(again).encode()).digest()


def test_collect_demos_dimension_mismatch():
    with pytest.raises(ValueError):
        collect_demos(_random_ck(), EnvSpec("planar-hopper"), 1, 0)


def test_evaluate_conventions():
    ck = _random_ck()
    assert evaluate(ck, PEND, 1, seed=3)[1] == 0.0
    assert evaluate(ck, PEND, 5, seed=3) == evaluate(ck, PEND, 5, seed=3)
    returns = [rollout(PEND, make_actor(ck.policy), seed=s).true_return for s in range(3, 8)]
    mean, se = evaluate(ck, PEND, 5, seed=3)
    assert mean == pytest.approx(np.mean(returns)) and se == pytest.approx(np.std(returns, ddof=1) / np.sqrt(5))


def test_irlgan_requires_one_option(demos):
    with pytest.raises(ConfigError):
        irlgan_train(PEND, demos, replace(TINY, n_options=2))


def test_irlgan_one_iteration(tmp_path, demos):
    res = irlgan_train(PEND, demos, replace(TINY, iterations=1), tmp_path / "m.csv")
    assert len(load_metrics(tmp_path / "m.csv")) == 1
    assert res.checkpoint.gating is None and res.checkpoint.reward is not None


def test_demo_dimension_checked(demos):
    with pytest.raises(ValueError):
        irlgan_train(EnvSpec("planar-hopper", horizon=20), demos, TINY)


def test_reduction_one_option_is_irlgan(demos):
    cfg = replace(TINY, iterations=3, n_options=1, reg=RegWeights.zero())
    a = irlgan_train(PEND, demos, cfg)
    b = optiongan_train(PEND, demos, cfg)
    assert metrics_to_text(a.metrics) == metrics_to_text(b.metrics)
    assert a.checkpoint.policy.flat().tobytes() == b.checkpoint.policy.flat().tobytes()
    assert a.checkpoint.reward.params.tobytes() == b.checkpoint.reward.params.tobytes()


def test_optiongan_metrics_rows(demos):
    res = optiongan_train(PEND, demos, replace(TINY, n_options=3))
    for row in res.metrics:
        assert len(row.mean_gate) == 3 and sum(row.mean_gate) == pytest.approx(1.0)
        assert 0.0 <= row.specialization_frac_0p1 <= 1.0 and np.isfinite(row.disc_loss)


def test_learned_reward_bounds(demos):
    ck = optiongan_train(PEND, demos, replace(TINY, n_options=2)).checkpoint
    x = np.random.default_rng(0).normal(scale=100.0, size=(500, 3))
    logR = np.log(mixture_reward(ck.reward, ck.gating, x))
    assert np.all(logR >= np.log(PROB_EPS)) and np.all(logR <= np.log(1 - PROB_EPS))


def test_disc_values_ignore_novice_actions(demos):
    # rewards depend on states alone: scrambling the recorded actions after the fact
    # cannot change them, and training never reads actions outside the policy step
    ck = optiongan_train(PEND, demos, replace(TINY, n_options=2)).checkpoint
    tr = rollout(PEND, make_actor(ck.policy, ck.gating), seed=0)
    r1 = mixture_reward(ck.reward, ck.gating, tr.states)
    tr.actions[:] = np.nan
    np.testing.assert_array_equal(mixture_reward(ck.reward, ck.gating, tr.states), r1)


# ------------------------------------------------------------ pilot oracles

@pytest.fixture(scope="module")
def expert_run():
    return train_expert(EnvSpec("pendulum-swing"), TrainConfig(iterations=150, seed=0))


def test_expert_solves_pendulum(expert_run):
    # threshold frozen from the development run (final batch return about -146)
    assert expert_run.metrics[-1].mean_true_return > -400


def test_expert_beats_random_policy(expert_run):
    env = EnvSpec("pendulum-swing")
    random_ck = Checkpoint(OptionPolicy.create(3, 1, 1, seed=123), ValueFn.create(3), env=env)
    assert evaluate(expert_run.checkpoint, env, 25, seed=5)[0] > evaluate(random_ck, env, 25, seed=5)[0]
