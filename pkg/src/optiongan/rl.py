"""Policy-gradient machinery: returns, GAE, value fitting, TRPO and PPO steps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .nn import AdamState, MlpSpec, adam_step, lbfgs_minimize, mlp_backward, mlp_forward, \
    mlp_forward_cached, mlp_init, mlp_jvp
from .policy import OptionPolicy, gating_probs, mixture_kl_surrogate, mixture_logprob, \
    mixture_logprob_and_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.97

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")


@dataclass(frozen=True)
class TrpoConfig:
    kl_max: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_steps: int = 10
    backtrack_ratio: float = 0.5

    def __post_init__(self):
        if not self.kl_max > 0:
            raise ValueError("kl_max must be positive")
        if not 0.0 < self.backtrack_ratio < 1.0:
            raise ValueError("backtrack_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.02
    epochs: int = 5
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")


# ------------------------------------------------------------ returns / GAE

def discounted_returns(rewards, gamma: float):
    """Per-episode discounted reward-to-go.  Accepts one vector or a list of them."""
    if isinstance(rewards, np.ndarray) and rewards.ndim == 1:
        return _discount(rewards, gamma)
    return [_discount(np.asarray(r, dtype=float), gamma) for r in rewards]


def _discount(x, factor):
    out = np.zeros(len(x))
    acc = 0.0
    for t in range(len(x) - 1, -1, -1):
        acc = x[t] + factor * acc
        out[t] = acc
    return out


def gae_advantages(rewards, values, gamma: float, lam: float, terminal: bool = False) -> np.ndarray:
    """Generalized advantage estimates for one episode.

    ``values`` holds ``V(s_0) .. V(s_T)``; the last entry is replaced by zero
    when the episode ended in an environment-terminal state.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.array(values, dtype=float)
    if values.shape != (len(rewards) + 1,):
        raise ValueError(f"need {len(rewards) + 1} values for {len(rewards)} rewards, got {values.shape}")
    if terminal:
        values[-1] = 0.0
    deltas = rewards + gamma * values[1:] - values[:-1]
    return _discount(deltas, gamma * lam)


def standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    std = x.std()
    return (x - x.mean()) / (std if std > 1e-8 else 1.0)


# ------------------------------------------------------------------- value

@dataclass(frozen=True)
class ValueFn:
    spec: MlpSpec
    params: np.ndarray
    mix_fraction: float = 0.1

    @classmethod
    def create(cls, obs_dim, hidden=(64, 64), activation="tanh", seed=0, mix_fraction=0.1):
        spec = MlpSpec((obs_dim, *hidden, 1), activation, "linear")
        return cls(spec, mlp_init(spec, seed), mix_fraction)

    def predict(self, states) -> np.ndarray:
        return mlp_forward(self.spec, self.params, np.atleast_2d(states))[:, 0]


def value_objective(vf: ValueFn, states, targets):
    """Mean squared error and its gradient, as a function of flat parameters."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    targets = np.asarray(targets, dtype=float)
    n = len(states)

    def objective(params):
        pred, cache = mlp_forward_cached(vf.spec, params, states)
        resid = pred[:, 0] - targets
        grad = mlp_backward(vf.spec, params, states, (2.0 / n) * resid[:, None], cache)
        return float(np.mean(resid * resid)), grad

    return objective


def value_fit(vf: ValueFn, states, returns, max_iters: int = 20) -> ValueFn:
    """Fit towards ``mix * returns + (1 - mix) * V_old(states)`` with L-BFGS."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if len(states) == 0:
        raise ValueError("value fit needs a non-empty batch")
    targets = vf.mix_fraction * np.asarray(returns, dtype=float) + (1 - vf.mix_fraction) * vf.predict(states)
    res = lbfgs_minimize(value_objective(vf, states, targets), vf.params, max_iters=max_iters)
    return replace(vf, params=res.x)


# ------------------------------------------------------------------ batches

@dataclass
class PolicyBatch:
    states: np.ndarray        # (N, obs_dim)
    actions: np.ndarray       # (N, act_dim)
    advantages: np.ndarray    # (N,)
    gates: np.ndarray         # (N, n_options), frozen
    old_logp: np.ndarray      # (N,)

    @classmethod
    def build(cls, policy: OptionPolicy, gating, states, actions, advantages):
        gates = gating_probs(gating, states)
        old = mixture_logprob(policy, gates, states, actions)
        return cls(np.asarray(states, dtype=float), np.asarray(actions, dtype=float),
                   np.asarray(advantages, dtype=float), gates, old)


def surrogate_loss(policy: OptionPolicy, frozen_old_logprobs, states, actions, advantages, gating=None) -> float:
    """Importance-weighted advantage ``mean(pi/pi_old * A)`` (to be maximised)."""
    logp = mixture_logprob(policy, gating, states, actions)
    return float(np.mean(np.exp(logp - frozen_old_logprobs) * advantages))


def surrogate_and_grad(policy: OptionPolicy, batch: PolicyBatch):
    n = len(batch.states)
    logp = mixture_logprob(policy, batch.gates, batch.states, batch.actions)
    ratio = np.exp(logp - batch.old_logp)
    _, grad = mixture_logprob_and_grad(policy, batch.gates, batch.states, batch.actions,
                                       ratio * batch.advantages / n)
    return float(np.mean(ratio * batch.advantages)), grad


def fisher_vector_product(policy: OptionPolicy, gates, states, vec, damping: float = 0.0,
                          cache=None) -> np.ndarray:
    """Hessian of the gate-weighted Gaussian KL at ``new == old``, times ``vec``.

    At the expansion point the second-order terms of the KL reduce exactly to
    ``J^T diag(g / sigma^2) J`` for the means and ``2 * mean(g)`` for each
    log-std, with no cross terms.
    """
    states = np.atleast_2d(states)
    n = len(states)
    K, A = policy.n_options, policy.act_dim
    n_p = policy.spec.n_params
    v_params, v_logstd = vec[:n_p], vec[n_p:].reshape(K, A)
    if cache is None:
        _, cache = mlp_forward_cached(policy.spec, policy.params, states)
    jv = mlp_jvp(policy.spec, policy.params, states, v_params, cache).reshape(n, K, A)
    inv_var = np.exp(-2 * policy.effective_log_std())
    u = gates[:, :, None] * inv_var[None] * jv / n
    out_params = mlp_backward(policy.spec, policy.params, states, u.reshape(n, K * A), cache)
    out_logstd = 2.0 * gates.mean(axis=0)[:, None] * v_logstd
    return np.concatenate([out_params, out_logstd.ravel()]) + damping * vec


def conjugate_gradient(Avp, b, iters: int = 10, tol: float = 1e-10):
    """Solve ``A x = b`` for symmetric positive-definite ``A``.  Returns None on breakdown."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iters):
        if rr < tol:
            break
        Ap = Avp(p)
        pAp = p @ Ap
        if not np.isfinite(pAp) or pAp <= 0:
            return None
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


@dataclass
class StepInfo:
    accepted: bool
    kl: float = 0.0
    surrogate_before: float = 0.0
    surrogate_after: float = 0.0
    backtracks: int = 0

    @property
    def improvement(self) -> float:
        return self.surrogate_after - self.surrogate_before


def trpo_step(policy: OptionPolicy, gating_frozen, batch: PolicyBatch, cfg: TrpoConfig = TrpoConfig()):
    """Natural-gradient step scaled to the KL boundary, then backtracking.

    A candidate is accepted only if it strictly improves the surrogate and its
    gate-weighted KL is at most ``cfg.kl_max`` (plus a 1e-9 relative allowance,
    since a full step on a quadratic KL lands on the boundary up to rounding).
    Returns ``(policy, StepInfo)``.
    """
    if not np.all(np.isfinite(batch.advantages)):
        raise ValueError("advantages must be finite")
    surr0, g = surrogate_and_grad(policy, batch)
    if not np.any(g):
        return policy, StepInfo(False, 0.0, surr0, surr0)
    _, cache = mlp_forward_cached(policy.spec, policy.params, batch.states)

    def fvp(v):
        return fisher_vector_product(policy, batch.gates, batch.states, v, cfg.cg_damping, cache)

    step_dir = conjugate_gradient(fvp, g, cfg.cg_iters)
    if step_dir is None:
        log.warning("conjugate gradient broke down; keeping the current policy")
        return policy, StepInfo(False, 0.0, surr0, surr0)
    shs = 0.5 * step_dir @ fvp(step_dir)
    if not shs > 0:
        log.warning("non-positive curvature along the step; keeping the current policy")
        return policy, StepInfo(False, 0.0, surr0, surr0)
    full_step = step_dir * np.sqrt(cfg.kl_max / shs)
    theta0 = policy.flat()
    kl_limit = cfg.kl_max * (1.0 + 1e-9)
    frac = 1.0
    for k in range(cfg.backtrack_steps):
        cand = policy.with_flat(theta0 + frac * full_step)
        surr = surrogate_loss(cand, batch.old_logp, batch.states, batch.actions, batch.advantages, batch.gates)
        kl = mixture_kl_surrogate(policy, cand, batch.gates, batch.states)
        if surr > surr0 and kl <= kl_limit:
            return cand, StepInfo(True, kl, surr0, surr, k)
        frac *= cfg.backtrack_ratio
    return policy, StepInfo(False, 0.0, surr0, surr0, cfg.backtrack_steps)


def clipped_objective(policy: OptionPolicy, batch: PolicyBatch, clip_eps: float):
    """PPO clipped objective and its gradient w.r.t. ``policy.flat()``."""
    n = len(batch.states)
    logp = mixture_logprob(policy, batch.gates, batch.states, batch.actions)
    ratio = np.exp(logp - batch.old_logp)
    A = batch.advantages
    unclipped = ratio * A
    clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * A
    active = unclipped <= clipped
    _, grad = mixture_logprob_and_grad(policy, batch.gates, batch.states, batch.actions,
                                       np.where(active, unclipped, 0.0) / n)
    return float(np.mean(np.minimum(unclipped, clipped))), grad


def ppo_step(policy: OptionPolicy, gating_frozen, batch: PolicyBatch, cfg: PpoConfig = PpoConfig()):
    """``cfg.epochs`` full-batch Adam ascent steps on the clipped objective."""
    adam = AdamState.zeros(policy.n_flat, cfg.learning_rate)
    old = policy
    obj0 = clipped_objective(policy, batch, cfg.clip_eps)[0]
    theta = policy.flat()
    for _ in range(cfg.epochs):
        _, grad = clipped_objective(policy, batch, cfg.clip_eps)
        adam, theta = adam_step(adam, theta, -grad)
        policy = policy.with_flat(theta)
    obj = clipped_objective(policy, batch, cfg.clip_eps)[0]
    kl = mixture_kl_surrogate(old, policy, batch.gates, batch.states)
    return policy, StepInfo(cfg.epochs > 0, kl, obj0, obj)
