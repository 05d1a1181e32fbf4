"""Generator side: softmax policy-over-options and Gaussian option policies.

All options share one hidden trunk; the final linear layer has
``n_options * act_dim`` outputs, option ``w`` owning columns
``w*act_dim:(w+1)*act_dim``.  Each option has its own state-independent
log standard deviation per action dimension.

Wherever a ``gating`` argument is accepted it may be a :class:`GatingNet`,
a precomputed ``(batch, n_options)`` probability matrix (frozen gates), or
``None`` for the single-option case.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import MlpSpec, mlp_backward, mlp_forward, mlp_forward_cached, mlp_init

LOG_STD_MIN = np.log(1e-3)
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class GatingNet:
    spec: MlpSpec
    params: np.ndarray

    def __post_init__(self):
        if self.spec.output_activation != "softmax":
            raise ValueError("gating network must have a softmax output")

    @property
    def n_options(self) -> int:
        return self.spec.out_dim

    @classmethod
    def create(cls, obs_dim, n_options, hidden=(64, 64), activation="tanh", seed=0):
        spec = MlpSpec((obs_dim, *hidden, n_options), activation, "softmax")
        return cls(spec, mlp_init(spec, seed))


@dataclass(frozen=True)
class OptionPolicy:
    spec: MlpSpec              # shared trunk plus all mean heads
    params: np.ndarray
    log_std: np.ndarray        # (n_options, act_dim)

    def __post_init__(self):
        K, A = self.log_std.shape
        if K < 1:
            raise ValueError("need at least one option")
        if self.spec.out_dim != K * A or self.spec.output_activation != "linear":
            raise ValueError("mean network output must be linear with n_options*act_dim units")
        if not np.all(np.isfinite(self.log_std)):
            raise ValueError("log_std must be finite")

    @property
    def n_options(self) -> int:
        return self.log_std.shape[0]

    @property
    def act_dim(self) -> int:
        return self.log_std.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.spec.in_dim

    @property
    def n_flat(self) -> int:
        return self.spec.n_params + self.log_std.size

    @classmethod
    def create(cls, obs_dim, act_dim, n_options=1, hidden=(64, 64), activation="tanh",
               init_log_std=0.0, seed=0):
        spec = MlpSpec((obs_dim, *hidden, n_options * act_dim), activation, "linear")
        params = mlp_init(spec, seed)
        return cls(spec, params, np.full((n_options, act_dim), float(init_log_std)))

    def head_params(self, option: int) -> tuple[np.ndarray, np.ndarray]:
        """Weights and biases of one option's mean head (views)."""
        n_in = self.spec.layer_sizes[-2]
        tail = self.params[-(n_in + 1) * self.spec.out_dim:]
        W = tail[:n_in * self.spec.out_dim].reshape(n_in, -1)
        b = tail[n_in * self.spec.out_dim:]
        cols = slice(option * self.act_dim, (option + 1) * self.act_dim)
        return W[:, cols], b[cols]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params, self.log_std.ravel()])

    def with_flat(self, vec) -> "OptionPolicy":
        vec = np.asarray(vec, dtype=float)
        n = self.spec.n_params
        return replace(self, params=vec[:n].copy(), log_std=vec[n:].reshape(self.log_std.shape).copy())

    def effective_log_std(self) -> np.ndarray:
        return np.maximum(self.log_std, LOG_STD_MIN)


def gating_probs(gating, states) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if gating is None:
        return np.ones((len(states), 1))
    if isinstance(gating, GatingNet):
        return mlp_forward(gating.spec, gating.params, states)
    probs = np.asarray(gating, dtype=float)
    if probs.shape[0] != len(states):
        raise ValueError("frozen gate matrix does not match the number of states")
    return probs


def option_means(policy: OptionPolicy, states) -> np.ndarray:
    """Per-option Gaussian means, shape ``(batch, n_options, act_dim)``."""
    out = mlp_forward(policy.spec, policy.params, np.atleast_2d(states))
    return out.reshape(len(out), policy.n_options, policy.act_dim)


def _option_logprobs_from_means(policy, means, actions):
    log_std = policy.effective_log_std()                        # (K, A)
    z = (actions[:, None, :] - means) * np.exp(-log_std)[None]  # (n, K, A)
    return -0.5 * np.sum(z * z, axis=2) - np.sum(log_std, axis=1)[None] - 0.5 * policy.act_dim * LOG_2PI


def all_option_logprobs(policy: OptionPolicy, states, actions) -> np.ndarray:
    actions = np.asarray(actions, dtype=float).reshape(-1, policy.act_dim)
    return _option_logprobs_from_means(policy, option_means(policy, states), actions)


def option_logprob(policy: OptionPolicy, option: int, states, actions) -> np.ndarray:
    """Diagonal Gaussian log-density of ``actions`` under one option."""
    if not 0 <= option < policy.n_options:
        raise IndexError(f"option {option} out of range for {policy.n_options} options")
    return all_option_logprobs(policy, states, actions)[:, option]


def _logsumexp_rows(x):
    m = np.max(x, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True)))[:, 0]


def _log_gates(gates):
    with np.errstate(divide="ignore"):
        return np.log(gates)


def mixture_logprob(policy: OptionPolicy, gating, states, actions) -> np.ndarray:
    """log sum_w pi_Omega(w|s) pi_w(a|s), computed with log-sum-exp."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    gates = gating_probs(gating, states)
    lp = all_option_logprobs(policy, states, actions)
    if gates.shape != lp.shape:
        raise ValueError("gating width does not match the number of options")
    return _logsumexp_rows(_log_gates(gates) + lp)


def mixture_logprob_and_grad(policy: OptionPolicy, gates, states, actions, weights):
    """Mixture log-probs and the gradient of ``sum_i weights_i * logp_i``.

    The gradient is taken with respect to ``policy.flat()`` (mean-network
    parameters followed by log-stds); the gates are treated as constants.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.asarray(actions, dtype=float).reshape(len(states), policy.act_dim)
    K, A = policy.n_options, policy.act_dim
    out, cache = mlp_forward_cached(policy.spec, policy.params, states)
    means = out.reshape(len(out), K, A)
    lp = _option_logprobs_from_means(policy, means, actions)
    joint = _log_gates(gates) + lp
    logp = _logsumexp_rows(joint)
    resp = np.exp(joint - logp[:, None]) * np.asarray(weights, dtype=float)[:, None]   # (n, K)
    log_std = policy.effective_log_std()
    inv_var = np.exp(-2 * log_std)[None]                        # (1, K, A)
    diff = actions[:, None, :] - means
    d_means = resp[:, :, None] * diff * inv_var                 # d/dmu
    d_logstd = np.sum(resp[:, :, None] * (diff * diff * inv_var - 1.0), axis=0)
    d_logstd = np.where(policy.log_std > LOG_STD_MIN, d_logstd, 0.0)
    g_params = mlp_backward(policy.spec, policy.params, states, d_means.reshape(len(states), K * A), cache)
    return logp, np.concatenate([g_params, d_logstd.ravel()])


def sample_actions(policy: OptionPolicy, gating, states, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Hierarchical sampling: draw an option from the gate, then its Gaussian.

    Row ``i`` consumes exactly one uniform and ``act_dim`` normals from
    ``rngs[i]``, whatever the number of options.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    gates = gating_probs(gating, states)
    means = option_means(policy, states)
    std = np.exp(policy.effective_log_std())
    n = len(states)
    u = np.empty(n)
    z = np.empty((n, policy.act_dim))
    for i, rng in enumerate(rngs):
        u[i] = rng.random()
        z[i] = rng.standard_normal(policy.act_dim)
    cdf = np.cumsum(gates, axis=1)
    options = np.minimum((cdf <= u[:, None]).sum(axis=1), policy.n_options - 1)
    rows = np.arange(n)
    actions = means[rows, options] + std[options] * z
    return actions, options


def sample_action(policy: OptionPolicy, gating, state, rng) -> np.ndarray:
    actions, _ = sample_actions(policy, gating, np.atleast_2d(state), [rng])
    return actions[0]


def make_actor(policy: OptionPolicy, gating=None):
    """Policy callable for :func:`optiongan.envs.rollout_many`."""
    return lambda obs, rngs: sample_actions(policy, gating, obs, rngs)


def gaussian_kl(mu_old, log_std_old, mu_new, log_std_new) -> np.ndarray:
    """KL(N_old || N_new) for diagonal Gaussians, summed over the last axis."""
    var_old = np.exp(2 * log_std_old)
    var_new = np.exp(2 * log_std_new)
    return np.sum(log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5, axis=-1)


def mixture_kl_surrogate(policy_old: OptionPolicy, policy_new: OptionPolicy, gating_frozen, states) -> float:
    """Mean over states of the gate-weighted sum of per-option Gaussian KLs.

    Upper-bounds the KL between the two mixtures (convexity of KL).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    gates = gating_probs(gating_frozen, states)
    kl = gaussian_kl(option_means(policy_old, states), policy_old.effective_log_std()[None],
                     option_means(policy_new, states), policy_new.effective_log_std()[None])
    return float(np.mean(np.sum(gates * kl, axis=1)))
