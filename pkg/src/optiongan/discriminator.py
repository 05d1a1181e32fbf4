"""Reward side: sigmoid reward options mixed by the shared gating network.

The discriminator is trained to output values near 1 on expert states and
near 0 on novice states, by minimising

    E_novice[log R(s)] + E_expert[log(1 - R(s))]

and, for several options, the gate-weighted version of that loss plus a
regularizer on the gate activations and on the reward-option outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import AdamState, MlpSpec, adam_step, mlp_backward, mlp_forward_cached, mlp_init
from .policy import GatingNet

PROB_EPS = 1e-8
RHO_CLAMP = 1.0 - 1e-6


@dataclass(frozen=True)
class RewardMoE:
    spec: MlpSpec
    params: np.ndarray

    def __post_init__(self):
        if self.spec.output_activation != "sigmoid":
            raise ValueError("reward options need a sigmoid output")

    @property
    def n_options(self) -> int:
        return self.spec.out_dim

    @classmethod
    def create(cls, obs_dim, n_options=1, hidden=(64, 64), activation="tanh", seed=0):
        spec = MlpSpec((obs_dim, *hidden, n_options), activation, "sigmoid")
        return cls(spec, mlp_init(spec, seed))


@dataclass(frozen=True)
class RegWeights:
    lambda_b: float = 10.0
    lambda_e: float = 10.0
    lambda_v: float = 1.0
    lambda_mi: float = 0.1
    tau: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        for name in ("lambda_b", "lambda_e", "lambda_v", "lambda_mi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def zero(cls) -> "RegWeights":
        return cls(0.0, 0.0, 0.0, 0.0)


def clamp_probs(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def reward_outputs(moe: RewardMoE, states) -> np.ndarray:
    out, _ = mlp_forward_cached(moe.spec, moe.params, np.atleast_2d(states))
    return clamp_probs(out)


def mixture_reward(moe: RewardMoE, gating, states) -> np.ndarray:
    from .policy import gating_probs
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return np.sum(gating_probs(gating, states) * reward_outputs(moe, states), axis=1)


def single_disc_loss(r_novice, r_expert) -> float:
    r_novice = clamp_probs(np.asarray(r_novice, dtype=float).ravel())
    r_expert = clamp_probs(np.asarray(r_expert, dtype=float).ravel())
    if r_novice.size == 0 or r_expert.size == 0:
        raise ValueError("discriminator loss needs non-empty novice and expert batches")
    return float(np.mean(np.log(r_novice)) + np.mean(np.log(1.0 - r_expert)))


# ---------------------------------------------------------------- penalties

def _check_simplex(rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if np.any(rows < -1e-9) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("gating rows must be probability vectors")
    return rows


def reg_penalties(gating_rows, tau: float) -> tuple[float, float, float]:
    """Batch sparsity, per-example sparsity and negative variance of the gates."""
    G = _check_simplex(gating_rows)
    K = G.shape[1]
    L_b = float(np.sum(np.abs(G.mean(axis=0) - tau)))
    L_e = float(np.mean(np.abs(G.sum(axis=1) / K - tau)))
    L_v = float(-np.sum(G.var(axis=0)))
    return L_b, L_e, L_v


def reg_penalty_grads(G, tau):
    """Gradients of (L_b, L_e, L_v) w.r.t. the gate matrix (sub-gradient 0 at kinks)."""
    m, K = G.shape
    mean = G.mean(axis=0)
    g_b = np.broadcast_to(np.sign(mean - tau) / m, G.shape)
    g_e = np.broadcast_to((np.sign(G.sum(axis=1) / K - tau) / (K * m))[:, None], G.shape)
    g_v = -2.0 * (G - mean) / m
    return g_b, g_e, g_v


def _correlations(F):
    X = F - F.mean(axis=0)
    std = np.sqrt(np.mean(X * X, axis=0))
    cov = X.T @ X / len(F)
    denom = np.outer(std, std)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 1e-12, cov / denom, 0.0)
    return X, std, rho


def mi_penalty(option_outputs) -> float:
    """Sum over ordered pairs of -0.5 log(1 - rho_ij^2) (Gaussian mutual information)."""
    F = np.atleast_2d(np.asarray(option_outputs, dtype=float))
    if F.shape[0] < 2:
        raise ValueError("mutual information penalty needs at least two samples")
    _, _, rho = _correlations(F)
    rho = np.clip(rho, -RHO_CLAMP, RHO_CLAMP)
    off = ~np.eye(F.shape[1], dtype=bool)
    return float(np.sum(-0.5 * np.log(1.0 - rho[off] ** 2)))


def mi_penalty_grad(F) -> np.ndarray:
    m, K = F.shape
    X, std, rho = _correlations(F)
    grad = np.zeros_like(F)
    for i in range(K):
        for j in range(K):
            if i == j or std[i] * std[j] <= 1e-12 or abs(rho[i, j]) >= RHO_CLAMP:
                continue
            dI = rho[i, j] / (1.0 - rho[i, j] ** 2)
            # d rho_ij / dF[:, i]; the centring step leaves this unchanged
            grad[:, i] += dI * (X[:, j] / (m * std[i] * std[j]) - rho[i, j] * X[:, i] / (m * std[i] ** 2))
            grad[:, j] += dI * (X[:, i] / (m * std[i] * std[j]) - rho[i, j] * X[:, j] / (m * std[j] ** 2))
    return grad


def combined_reg(reg: RegWeights, L_b, L_e, L_v, L_mi) -> float:
    return reg.lambda_b * L_b + reg.lambda_e * L_e + reg.lambda_v * L_v + reg.lambda_mi * L_mi


# ---------------------------------------------------------------- MoE loss

@dataclass
class DiscLossInfo:
    loss: float
    per_option: np.ndarray                  # unweighted per-option losses
    reg_b: float = 0.0
    reg_e: float = 0.0
    reg_v: float = 0.0
    reg_mi: float = 0.0
    reg_total: float = 0.0
    grads: dict = field(default_factory=dict, repr=False)


def _data_term(R, G, n_novice):
    """Gate-weighted adversarial loss and its gradients w.r.t. R and G."""
    n_expert = len(R) - n_novice
    logR, log1mR = np.log(R[:n_novice]), np.log(1.0 - R[n_novice:])
    loss = np.mean(np.sum(G[:n_novice] * logR, axis=1)) + np.mean(np.sum(G[n_novice:] * log1mR, axis=1))
    dR = np.concatenate([G[:n_novice] * (1.0 / R[:n_novice]) / n_novice,
                         -G[n_novice:] * (1.0 / (1.0 - R[n_novice:])) / n_expert])
    dG = np.concatenate([logR / n_novice, log1mR / n_expert])
    per_option = logR.mean(axis=0) + log1mR.mean(axis=0)
    return float(loss), dR, dG, per_option


def moe_disc_loss_and_grad(moe: RewardMoE, gating: GatingNet | None, novice_states, expert_states,
                           reg: RegWeights) -> DiscLossInfo:
    """Loss, breakdown, and gradients w.r.t. the reward and gating parameters.

    Regularizers act on the gates and reward outputs of the combined
    novice+expert minibatch.  ``gating=None`` means a single implicit option.
    """
    novice = np.atleast_2d(np.asarray(novice_states, dtype=float))
    expert = np.atleast_2d(np.asarray(expert_states, dtype=float))
    if len(novice) == 0 or len(expert) == 0:
        raise ValueError("discriminator loss needs non-empty novice and expert batches")
    X = np.concatenate([novice, expert])
    raw, rcache = mlp_forward_cached(moe.spec, moe.params, X)
    R = clamp_probs(raw)
    if gating is None:
        G, gcache = np.ones((len(X), 1)), None
    else:
        G, gcache = mlp_forward_cached(gating.spec, gating.params, X)
    if G.shape != R.shape:
        raise ValueError("gating width does not match the number of reward options")
    loss, dR, dG, per_option = _data_term(R, G, len(novice))

    L_b, L_e, L_v = reg_penalties(G, reg.tau)
    L_mi = mi_penalty(R) if len(X) >= 2 else 0.0
    reg_total = combined_reg(reg, L_b, L_e, L_v, L_mi)
    loss = loss + reg_total
    if reg.lambda_b or reg.lambda_e or reg.lambda_v:
        g_b, g_e, g_v = reg_penalty_grads(G, reg.tau)
        dG = dG + reg.lambda_b * g_b + reg.lambda_e * g_e + reg.lambda_v * g_v
    if reg.lambda_mi:
        dR = dR + reg.lambda_mi * mi_penalty_grad(R)

    inside = (raw > PROB_EPS) & (raw < 1.0 - PROB_EPS)
    g_reward = mlp_backward(moe.spec, moe.params, X, dR * inside, rcache)
    grads = {"reward": g_reward}
    if gating is not None:
        grads["gating"] = mlp_backward(gating.spec, gating.params, X, dG, gcache)
    return DiscLossInfo(float(loss), per_option, L_b, L_e, L_v, L_mi, float(reg_total), grads)


def moe_disc_loss(moe: RewardMoE, gating, novice_states, expert_states, reg: RegWeights):
    """Returns ``(loss, per-option losses, {reg_b, reg_e, reg_v, reg_mi, reg_total})``."""
    info = moe_disc_loss_and_grad(moe, gating, novice_states, expert_states, reg)
    breakdown = dict(reg_b=info.reg_b, reg_e=info.reg_e, reg_v=info.reg_v,
                     reg_mi=info.reg_mi, reg_total=info.reg_total)
    return info.loss, info.per_option, breakdown


def disc_update(moe: RewardMoE, gating: GatingNet | None, adam: AdamState, novice_states,
                expert_states, reg: RegWeights):
    """One joint Adam step on reward and gating parameters.

    ``adam`` covers the concatenation ``[reward params, gating params]``.
    Returns ``(moe, gating, adam, info)`` where ``info`` describes the loss
    before the step.
    """
    info = moe_disc_loss_and_grad(moe, gating, novice_states, expert_states, reg)
    if not np.isfinite(info.loss):
        raise FloatingPointError("discriminator loss is not finite")
    n_r = moe.spec.n_params
    if gating is None:
        params, grad = moe.params, info.grads["reward"]
    else:
        params = np.concatenate([moe.params, gating.params])
        grad = np.concatenate([info.grads["reward"], info.grads["gating"]])
    adam, new = adam_step(adam, params, grad)
    moe = RewardMoE(moe.spec, new[:n_r])
    if gating is not None:
        gating = GatingNet(gating.spec, new[n_r:])
    return moe, gating, adam, info


# ------------------------------------------------ specialization gradient

@dataclass
class SpecializationCheck:
    analytic: np.ndarray        # chain-rule gradient dL/dz
    numeric: np.ndarray         # central finite differences
    printed_form: np.ndarray    # (1/K) pi_w ((y - y_w)^2 - L)
    max_rel_error: float
    printed_form_gap: float     # max |printed_form - analytic|


def specialization_loss(logits, sq_errors) -> float:
    """(1/K) sum_w pi_w (y - y_w)^2 averaged over rows, with pi = softmax(logits)."""
    z = np.atleast_2d(logits)
    e = np.atleast_2d(sq_errors)
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return float(np.mean(np.sum(p * e, axis=1) / z.shape[1]))


def specialization_grad_check(logits, sq_errors, h: float = 1e-6) -> SpecializationCheck:
    """Compare the gating-logit gradient of the specialization loss with finite differences.

    ``sq_errors[i, w]`` is ``(y_i - y_w(s_i))^2``.  Also reports how far the
    form ``(1/K) pi_w (e_w - L)`` is from the exact ``(1/K) pi_w (e_w - K L)``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    e = np.atleast_2d(np.asarray(sq_errors, dtype=float))
    m, K = z.shape
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    L_row = np.sum(p * e, axis=1, keepdims=True) / K
    analytic = p * (e - K * L_row) / K / m
    printed = p * (e - L_row) / K / m
    numeric = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        numeric[idx] = (specialization_loss(zp, e) - specialization_loss(zm, e)) / (2 * h)
    scale = max(np.max(np.abs(analytic)), 1e-12)
    err = float(np.max(np.abs(analytic - numeric)) / scale)
    return SpecializationCheck(analytic, numeric, printed, err, float(np.max(np.abs(printed - analytic))))
