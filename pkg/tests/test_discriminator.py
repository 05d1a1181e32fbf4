import numpy as np
import pytest
from hypothesis import given, strategies as st

from optiongan.discriminator import (PROB_EPS, RegWeights, RewardMoE, combined_reg, disc_update, mi_penalty,
                                     mixture_reward, moe_disc_loss, moe_disc_loss_and_grad, reg_penalties,
                                     reward_outputs, single_disc_loss, specialization_grad_check)
from optiongan.nn import AdamState, MlpSpec, max_relative_error, numerical_gradient
from optiongan.policy import GatingNet


def _bias_moe(head_probs, obs_dim=2):
    """Reward MoE whose heads output constants: zero weights, logit biases."""
    p = np.asarray(head_probs, dtype=float)
    spec = MlpSpec((obs_dim, len(p)), "tanh", "sigmoid")
    params = np.zeros(spec.n_params)
    params[-len(p):] = np.log(p / (1 - p))
    return RewardMoE(spec, params)


def _bias_gating(probs, obs_dim=2):
    spec = MlpSpec((obs_dim, len(probs)), "tanh", "softmax")
    params = np.zeros(spec.n_params)
    params[-len(probs):] = np.log(probs)
    return GatingNet(spec, params)


# --------------------------------------------------------------- outputs

def test_zero_reward_net_is_half():
    moe = RewardMoE.create(3, 2, hidden=(4,))
    moe = RewardMoE(moe.spec, np.zeros(moe.spec.n_params))
    np.testing.assert_array_equal(reward_outputs(moe, np.ones((5, 3))), 0.5)


def test_saturated_head_is_clamped():
    spec = MlpSpec((1, 1), "tanh", "sigmoid")
    out = reward_outputs(RewardMoE(spec, np.array([0.0, 100.0])), np.zeros((1, 1)))
    assert out[0, 0] == 1.0 - PROB_EPS


def test_reward_outputs_permute(rng):
    moe = RewardMoE.create(3, 2, hidden=(5,), seed=4)
    x = rng.normal(size=(6, 3))
    perm = rng.permutation(6)
    np.testing.assert_array_equal(reward_outputs(moe, x[perm]), reward_outputs(moe, x)[perm])


def test_mixture_reward_examples():
    s = np.zeros((3, 2))
    heads = _bias_moe([0.2, 0.8])
    np.testing.assert_allclose(mixture_reward(heads, np.array([[1.0, 0.0]] * 3), s), 0.2, atol=1e-12)
    np.testing.assert_allclose(mixture_reward(heads, np.full((3, 2), 0.5), s), 0.5, atol=1e-12)
    np.testing.assert_allclose(mixture_reward(_bias_moe([0.7] * 4), np.full((3, 4), 0.25), s), 0.7, atol=1e-12)


@given(seed=st.integers(0, 10_000))
def test_mixture_reward_between_heads(seed):
    r = np.random.default_rng(seed)
    moe = RewardMoE.create(3, 3, hidden=(5,), seed=seed)
    s = r.normal(size=(8, 3))
    gates = r.dirichlet(np.ones(3), size=8)
    R, heads = mixture_reward(moe, gates, s), reward_outputs(moe, s)
    assert np.all(R >= heads.min(axis=1) - 1e-15) and np.all(R <= heads.max(axis=1) + 1e-15)


# ----------------------------------------------------------------- losses

def test_single_disc_loss_examples():
    assert single_disc_loss([0.5, 0.5], [0.5]) == pytest.approx(-1.3863, abs=1e-4)
    assert single_disc_loss([0.0], [1.0]) == pytest.approx(2 * np.log(1e-8), abs=1e-6)
    assert single_disc_loss([0.0], [1.0]) == pytest.approx(-36.84, abs=5e-3)
    assert single_disc_loss([0.2, 0.4], [0.9]) == pytest.approx(-3.5655, abs=1e-4)
    with pytest.raises(ValueError):
        single_disc_loss([], [0.5])


def test_moe_loss_hand_example():
    # novice state 0 sees heads (0.2, 0.8), expert state 1 sees (0.9, 0.9)
    spec = MlpSpec((1, 2), "tanh", "sigmoid")
    lg = lambda p: np.log(p / (1 - p))
    # logit_w(s) = W_w * s + b_w with s = 0 (novice) and s = 1 (expert)
    b = np.array([lg(0.2), lg(0.8)])
    W = np.array([lg(0.9), lg(0.9)]) - b
    moe = RewardMoE(spec, np.concatenate([W, b]))
    loss, _, _ = moe_disc_loss(moe, _bias_gating([0.5, 0.5], 1), [[0.0]], [[1.0]], RegWeights.zero())
    exact = 0.5 * (np.log(0.2) + np.log(0.8)) + np.log(0.1)
    assert loss == pytest.approx(exact, abs=1e-12)
    # the four-place figure -3.2190 is off by one in the last digit
    assert loss == pytest.approx(-3.2190, abs=2e-4)


def test_moe_loss_one_hot_equals_single(rng):
    moe = RewardMoE.create(2, 2, hidden=(4,), seed=1)
    nov, exp = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    gate = _bias_gating([1.0 - 1e-300, 1e-300])
    loss, _, _ = moe_disc_loss(moe, gate, nov, exp, RegWeights.zero())
    ref = single_disc_loss(reward_outputs(moe, nov)[:, 0], reward_outputs(moe, exp)[:, 0])
    assert loss == pytest.approx(ref, abs=1e-12)


def test_moe_loss_half_heads_any_gating(rng):
    moe = _bias_moe([0.5, 0.5, 0.5])
    g = GatingNet.create(2, 3, hidden=(4,), seed=7)
    loss, _, _ = moe_disc_loss(moe, g, rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), RegWeights.zero())
    assert loss == pytest.approx(-1.3863, abs=1e-4)


@given(seed=st.integers(0, 10_000))
def test_single_option_moe_is_single_loss_bitwise(seed):
    r = np.random.default_rng(seed)
    moe = RewardMoE.create(3, 1, hidden=(5,), seed=seed)
    nov, exp = r.normal(size=(7, 3)), r.normal(size=(4, 3))
    ref = single_disc_loss(reward_outputs(moe, nov), reward_outputs(moe, exp))
    assert moe_disc_loss(moe, None, nov, exp, RegWeights.zero())[0] == ref
    g = GatingNet.create(3, 1, hidden=(5,), seed=seed + 1)
    assert moe_disc_loss(moe, g, nov, exp, RegWeights.zero())[0] == ref


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        moe_disc_loss(_bias_moe([0.5]), None, np.zeros((0, 2)), np.zeros((2, 2)), RegWeights.zero())


def _loss_fd_error(seed, K, reg):
    r = np.random.default_rng(seed)
    moe = RewardMoE.create(3, K, hidden=(6,), seed=seed)
    moe = RewardMoE(moe.spec, moe.params + r.normal(scale=0.5, size=moe.spec.n_params))
    g = GatingNet.create(3, K, hidden=(6,), seed=seed + 1)
    g = GatingNet(g.spec, g.params + r.normal(scale=0.5, size=g.spec.n_params))
    nov, exp = r.normal(size=(6, 3)), r.normal(size=(5, 3))
    info = moe_disc_loss_and_grad(moe, g, nov, exp, reg)
    n = moe.spec.n_params
    analytic = np.concatenate([info.grads["reward"], info.grads["gating"]])

    def f(x):
        return moe_disc_loss(RewardMoE(moe.spec, x[:n]), GatingNet(g.spec, x[n:]), nov, exp, reg)[0]

    return max_relative_error(analytic, numerical_gradient(f, np.concatenate([moe.params, g.params])))


@given(seed=st.integers(0, 10_000), K=st.integers(2, 4))
def test_moe_loss_gradient_with_all_regularizers(seed, K):
    # tau off the kink of L_e, which is constant under softmax gating
    assert _loss_fd_error(seed, K, RegWeights(10.0, 10.0, 1.0, 0.1, tau=0.45)) < 1e-4


# ------------------------------------------------------------- penalties

def test_reg_identities():
    assert reg_penalties(np.full((6, 2), 0.5), 0.5) == (0.0, 0.0, 0.0)
    alt = np.array([[1.0, 0.0], [0.0, 1.0]] * 3)
    assert reg_penalties(alt, 0.5) == (0.0, 0.0, -0.5)
    assert reg_penalties(np.array([[1.0, 0.0]] * 4), 0.5) == (1.0, 0.0, 0.0)


def test_reg_rejects_non_simplex():
    with pytest.raises(ValueError):
        reg_penalties(np.array([[0.7, 0.7]]), 0.5)


@given(seed=st.integers(0, 10_000), K=st.integers(2, 5))
def test_reg_permutation_covariant(seed, K):
    r = np.random.default_rng(seed)
    G = r.dirichlet(np.ones(K), size=9)
    perm = r.permutation(K)
    a, b = reg_penalties(G, 0.3), reg_penalties(G[:, perm], 0.3)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    contrib = np.abs(G.mean(axis=0) - 0.3)
    np.testing.assert_allclose(np.abs(G[:, perm].mean(axis=0) - 0.3), contrib[perm])


def test_mi_examples():
    x = np.random.default_rng(0).normal(size=(100, 1))
    both = mi_penalty(np.hstack([x, x]))
    assert both / 2 == pytest.approx(-0.5 * np.log(2e-6 - 1e-12), rel=1e-6)
    assert both / 2 == pytest.approx(6.56, abs=5e-3)
    # two columns with Pearson correlation exactly 0.5
    u = np.array([1.0, -1.0, 0.0, 0.0])
    v = np.array([0.0, 0.0, 1.0, -1.0])
    w = 0.5 * u + np.sqrt(0.75) * v
    assert mi_penalty(np.column_stack([u, w])) == pytest.approx(2 * -0.5 * np.log(0.75), rel=1e-10)
    assert -0.5 * np.log(0.75) == pytest.approx(0.1438, abs=1e-4)


def test_mi_independent_columns_small():
    F = np.random.default_rng(1).uniform(size=(10_000, 3))
    assert mi_penalty(F) < 0.05


def test_mi_constant_column_is_zero():
    F = np.column_stack([np.ones(5), np.arange(5.0)])
    assert mi_penalty(F) == 0.0


@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 10), shift=st.floats(-5, 5))
def test_mi_symmetric_and_affine_invariant(seed, scale, shift):
    F = np.random.default_rng(seed).normal(size=(20, 3))
    F[:, 1] += 0.5 * F[:, 0]
    base = mi_penalty(F)
    assert mi_penalty(F[:, ::-1]) == pytest.approx(base, rel=1e-9, abs=1e-12)
    G = F.copy()
    G[:, 2] = scale * G[:, 2] + shift
    assert mi_penalty(G) == pytest.approx(base, rel=1e-7, abs=1e-10)
    assert base >= 0


def test_combined_reg_examples():
    assert combined_reg(RegWeights.zero(), 3.0, 2.0, -1.0, 5.0) == 0
    assert combined_reg(RegWeights(10, 10, 1, 0), 0, 0, -0.5, 1.0) == -0.5
    assert combined_reg(RegWeights(1, 1, 1, 1), 1, 1, 1, 1) == 4


def test_reg_weights_validation():
    with pytest.raises(ValueError):
        RegWeights(tau=1.0)
    with pytest.raises(ValueError):
        RegWeights(lambda_b=-1)


# ----------------------------------------------------------------- update

def test_update_at_zero_gradient_keeps_params():
    # all states identical on both sides and heads at 0.5: the data gradient vanishes
    moe = _bias_moe([0.5])
    adam = AdamState.zeros(moe.spec.n_params)
    x = np.zeros((4, 2))
    new, _, adam, _ = disc_update(moe, None, adam, x[:2], x[2:], RegWeights.zero())
    np.testing.assert_array_equal(new.params, moe.params)
    assert adam.step_count == 1


def test_update_decreases_loss_on_separable_data():
    r = np.random.default_rng(0)
    nov = r.normal(size=(64, 2)) + [2.0, 0.0]
    exp = r.normal(size=(64, 2)) - [2.0, 0.0]
    moe = RewardMoE.create(2, 2, hidden=(8,), seed=0)
    g = GatingNet.create(2, 2, hidden=(8,), seed=1)
    adam = AdamState.zeros(moe.spec.n_params + g.spec.n_params, 1e-2)
    losses = []
    for _ in range(100):
        moe, g, adam, info = disc_update(moe, g, adam, nov, exp, RegWeights.zero())
        losses.append(info.loss)
    assert np.all(np.diff(losses) < 0)


def test_update_deterministic(rng):
    moe = RewardMoE.create(2, 2, hidden=(4,), seed=0)
    g = GatingNet.create(2, 2, hidden=(4,), seed=1)
    adam = AdamState.zeros(moe.spec.n_params + g.spec.n_params)
    nov, exp = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    a = disc_update(moe, g, adam, nov, exp, RegWeights())
    b = disc_update(moe, g, adam, nov, exp, RegWeights())
    assert a[0].params.tobytes() == b[0].params.tobytes() and a[1].params.tobytes() == b[1].params.tobytes()


def test_update_ignores_actions(rng):
    # the discriminator sees states only; the same states give the same update
    moe = RewardMoE.create(3, 1, hidden=(4,), seed=0)
    adam = AdamState.zeros(moe.spec.n_params)
    nov, exp = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    a = disc_update(moe, None, adam, nov, exp, RegWeights.zero())[0]
    b = disc_update(moe, None, adam, nov.copy(), exp.copy(), RegWeights.zero())[0]
    assert a.params.tobytes() == b.params.tobytes()


# --------------------------------------------------------- specialization

def test_specialization_equal_errors_zero_gradient(rng):
    chk = specialization_grad_check(rng.normal(size=(4, 3)), np.full((4, 3), 0.7))
    np.testing.assert_allclose(chk.analytic, 0.0, atol=1e-15)


def test_specialization_better_expert_negative_gradient():
    chk = specialization_grad_check(np.zeros((1, 3)), np.array([[0.1, 1.0, 1.0]]))
    assert chk.analytic[0, 0] < 0 and np.all(chk.analytic[0, 1:] > 0)


@given(seed=st.integers(0, 10_000), K=st.integers(2, 5))
def test_specialization_gradient_matches_fd(seed, K):
    r = np.random.default_rng(seed)
    chk = specialization_grad_check(r.normal(size=(3, K)), r.uniform(0.1, 2.0, size=(3, K)))
    assert chk.max_rel_error < 1e-6


def test_specialization_printed_form_gap():
    # the (e - L) form differs from the exact (e - K L) form unless all errors vanish
    chk = specialization_grad_check(np.zeros((1, 2)), np.array([[0.2, 1.0]]))
    assert chk.printed_form_gap > 1e-3
    assert chk.max_rel_error < 1e-6
