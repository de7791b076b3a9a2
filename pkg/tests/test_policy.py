import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim.curriculum import (
    LOG_COLUMNS,
    StageConfig,
    evaluate,
    fox_curriculum,
    hare_curriculum,
    run_episode,
    stage_factory,
    train_curriculum,
    write_training_log,
)
from ecosim.rng import derive_seed
from ecosim.policy import (
    ActorCritic,
    Batch,
    NonFiniteLossError,
    PPOHyperparams,
    RandomPolicy,
    Trajectory,
    act,
    compute_advantages,
    gradient_check,
    log_softmax,
    make_batch,
    ppo_loss,
    ppo_update,
    softmax,
)

# -- network ----------------------------------------------------------------------


@settings(max_examples=100)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_softmax_normalised(logits):
    p = softmax(np.array([logits]))
    assert abs(p.sum() - 1.0) <= 1e-12 and np.all(p >= 0)


def test_zero_weights_uniform():
    pol = ActorCritic(10, 8, seed=None)
    assert np.array_equal(pol.probabilities(np.ones(10)), np.full((1, 4), 0.25))


def test_dominant_logit():
    p = softmax(np.array([[10.0, 0.0, 0.0, 0.0]]))
    # e^10 / (e^10 + 3) is 0.99986..., just short of four nines
    assert p[0, 0] == pytest.approx(math.exp(10) / (math.exp(10) + 3), abs=1e-15)
    assert p[0, 0] > 0.9998 and p[0, 1:] == pytest.approx([1 / (math.exp(10) + 3)] * 3)


def test_act_deterministic_and_checks_shape():
    pol = ActorCritic(10, 8, seed=1)
    x = np.random.default_rng(0).normal(size=10)
    a1 = act(pol, x, np.random.default_rng(5))
    a2 = act(pol, x, np.random.default_rng(5))
    assert a1 == a2
    with pytest.raises(ValueError):
        act(pol, np.zeros(11), np.random.default_rng(5))


def test_layout_and_checkpoint(tmp_path):
    pol = ActorCritic(30, 16, species="fox", seed=3)
    assert pol.n_params == 30 * 16 + 16 + 16 * 4 + 4 + 16 + 1
    pol.save(tmp_path / "p.npz")
    back = ActorCritic.load(tmp_path / "p.npz")
    assert np.array_equal(back.theta, pol.theta) and back.species == "fox" and back.layer_sizes == (30, 16, 4)
    with pytest.raises(ValueError):
        ActorCritic(30, 16, theta=np.zeros(5))


def test_snapshot_is_read_only_float32():
    snap = ActorCritic(10, 8, seed=1).snapshot()
    assert snap.theta.dtype == np.float32
    with pytest.raises(ValueError):
        snap.theta[0] = 1.0


# -- advantages -------------------------------------------------------------------


def make_traj(rewards, values, bootstrap=0.0, terminal=True):
    t = Trajectory()
    for k, (r, v) in enumerate(zip(rewards, values)):
        t.append(np.zeros(1), 0, 0.0, r, v, done=terminal and k == len(rewards) - 1)
    t.bootstrap_value = bootstrap
    return t


def brute_force_gae(r, v, done_last, bootstrap, gamma, lam):
    T = len(r)
    out = np.zeros(T)
    for t in range(T):
        for k in range(t, T):
            nv = v[k + 1] if k + 1 < T else (0.0 if done_last else bootstrap)
            delta = r[k] + gamma * nv - v[k]
            out[t] += (gamma * lam) ** (k - t) * delta
    return out


def test_gae_hand_example():
    adv, ret = compute_advantages(make_traj([0, 0, 1], [1, 1, 1]), 0.99, 0.95)
    d = [0 + 0.99 - 1, 0 + 0.99 - 1, 1 - 1]
    g = 0.99 * 0.95
    expected = [d[0] + g * d[1] + g * g * d[2], d[1] + g * d[2], d[2]]
    assert adv == pytest.approx(expected, abs=1e-15)
    assert ret == pytest.approx(np.array(expected) + 1)


def test_gae_limits():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=8), rng.normal(size=8)
    tr = make_traj(r, v, bootstrap=0.7, terminal=False)
    adv, _ = compute_advantages(tr, 0.9, 0.0)
    nv = np.append(v[1:], 0.7)
    assert np.allclose(adv, r + 0.9 * nv - v, atol=1e-15)
    adv, _ = compute_advantages(tr, 0.0, 0.95)
    assert np.array_equal(adv, r - v)
    with pytest.raises(ValueError):
        compute_advantages(Trajectory(), 0.99, 0.95)


def test_gae_matches_brute_force_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 51))
        r, v = rng.normal(size=T), rng.normal(size=T)
        terminal = bool(rng.integers(2))
        boot = float(rng.normal())
        gamma, lam = float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.0, 1.0))
        adv, ret = compute_advantages(make_traj(r, v, boot, terminal), gamma, lam)
        oracle = brute_force_gae(r, v, terminal, boot, gamma, lam)
        worst = max(worst, np.max(np.abs(adv - oracle)))
        assert np.allclose(ret, adv + v, atol=0)
    assert worst <= 1e-10


# -- loss and gradients -------------------------------------------------------------


def random_case(seed, n=None, input_size=None, hidden=None, spread=0.3):
    rng = np.random.default_rng(seed)
    d = input_size or int(rng.integers(3, 30))
    h = hidden or int(rng.integers(2, 20))
    pol = ActorCritic(d, h, seed=int(rng.integers(1 << 30)))
    pol.theta += rng.normal(0, 0.3, pol.n_params)
    n = n or int(rng.integers(1, 12))
    X = rng.normal(size=(n, d))
    logits, _, _ = pol.forward(X)
    acts = rng.integers(4, size=n)
    logp = (logits - np.log(np.exp(logits).sum(1, keepdims=True)))[np.arange(n), acts]
    batch = Batch(X, acts, logp + rng.normal(0, spread, n), rng.normal(size=n), rng.normal(size=n))
    return pol, batch


def near_kink(pol, batch, eps=0.2, margin=1e-3):
    """True when a ReLU input or a ratio sits within ``margin`` of a kink."""
    logits, _, (_, pre, _) = pol.forward(batch.obs)
    ratio = np.exp(log_softmax(logits)[np.arange(len(batch)), batch.actions] - batch.old_logps)
    return np.abs(pre).min() < margin or np.abs(np.abs(ratio - 1) - eps).min() < margin


def test_gradient_check_property():
    """At least 20 random tiny networks and batches, some with clipping binding.

    Finite differences are meaningless across a ReLU or clip kink, so draws
    that land within 1e-3 of one are skipped.
    """
    errors, clipped, seed = [], 0, 0
    while len(errors) < 25:
        pol, batch = random_case(seed)
        seed += 1
        if near_kink(pol, batch):
            continue
        assert pol.n_params <= 2000
        hp = PPOHyperparams(entropy_coeff=0.05)
        _, _, diag = ppo_loss(pol, pol.theta, batch, hp)
        clipped += diag["clip_fraction"] > 0
        errors.append(gradient_check(pol, batch, 1e-5, hp))
    assert max(errors) < 1e-4
    assert clipped > 0


def test_gradient_check_detects_corruption():
    pol, batch = random_case(7, n=6)

    def corrupted(policy, theta, b, hp):
        _, g, _ = ppo_loss(policy, theta, b, hp)
        return g * 1.1

    assert gradient_check(pol, batch, 1e-5, grad_fn=corrupted) > 1e-2


def test_gradient_check_empty_batch():
    pol = ActorCritic(5, 4, seed=0)
    empty = Batch(np.zeros((0, 5)), np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros(0))
    assert gradient_check(pol, empty) == 0.0


def _policy_only(**kw):
    return PPOHyperparams(value_loss_coeff=0.0, entropy_coeff=0.0, **kw)


def single(pol, ratio, adv):
    x = np.linspace(-1, 1, pol.input_size)[None, :]
    logits, _, _ = pol.forward(x)
    lp = float((logits - np.log(np.exp(logits).sum()))[0, 1])
    return Batch(x, np.array([1]), np.array([lp - math.log(ratio)]), np.array([adv]), np.zeros(1))


@pytest.mark.parametrize("ratio,adv", [(1.5, 1.0), (1.21, 2.0), (0.5, -1.0), (0.79, -3.0)])
def test_clip_binding_gives_zero_ratio_gradient(ratio, adv):
    pol = ActorCritic(6, 5, seed=2)
    _, grad, diag = ppo_loss(pol, pol.theta, single(pol, ratio, adv), _policy_only())
    assert diag["clip_fraction"] == 1.0
    assert np.all(grad == 0.0)


@pytest.mark.parametrize("ratio,adv", [(1.5, -1.0), (0.5, 1.0), (1.1, 1.0), (0.9, -1.0)])
def test_unclipped_side_keeps_gradient(ratio, adv):
    # the min() form keeps the pessimistic branch live outside the band
    pol = ActorCritic(6, 5, seed=2)
    _, grad, _ = ppo_loss(pol, pol.theta, single(pol, ratio, adv), _policy_only())
    assert np.abs(grad).max() > 0


def test_ratio_identity_matches_vanilla_policy_gradient():
    pol, batch = random_case(3, n=9, spread=0.0)
    batch.old_logps[:] = log_softmax(pol.forward(batch.obs)[0])[np.arange(9), batch.actions]
    _, g_ppo, diag = ppo_loss(pol, pol.theta, batch, _policy_only())
    _, g_wide, _ = ppo_loss(pol, pol.theta, batch, _policy_only(clip_epsilon=1e9))
    assert diag["clip_fraction"] == 0.0
    assert np.allclose(g_ppo, g_wide, atol=1e-14)


def test_zero_advantages_leave_only_value_and_entropy():
    pol, batch = random_case(4, n=7)
    batch.advantages[:] = 0.0
    _, grad, _ = ppo_loss(pol, pol.theta, batch, _policy_only())
    assert np.all(grad == 0.0)
    _, grad, _ = ppo_loss(pol, pol.theta, batch, PPOHyperparams())
    assert np.abs(grad).max() > 0


def test_ppo_update_reduces_loss_and_reports():
    pol, batch = random_case(5, n=64, input_size=12, hidden=16, spread=0.0)
    hp = PPOHyperparams(epochs=20, minibatch_size=16, learning_rate=1e-3, normalize_advantages=False)
    before, _, _ = ppo_loss(pol, pol.theta, batch, hp, with_grad=False)
    diag = ppo_update(pol, batch, hp)
    after, _, _ = ppo_loss(pol, pol.theta, batch, hp, with_grad=False)
    assert after < before
    assert {"policy_loss", "value_loss", "entropy", "clip_fraction"} <= set(diag)
    assert np.all(np.isfinite(pol.theta))


def test_ppo_update_aborts_on_non_finite():
    pol, batch = random_case(6, n=8)
    batch.returns[3] = np.inf
    theta = pol.theta.copy()
    with pytest.raises(NonFiniteLossError, match="minibatch"):
        ppo_update(pol, batch, PPOHyperparams(normalize_advantages=False))
    assert np.array_equal(pol.theta, theta)


def test_make_batch_concatenates():
    t1 = make_traj([1, 2], [0, 0])
    t2 = make_traj([3], [0])
    b = make_batch([t1, Trajectory(), t2], PPOHyperparams())
    assert len(b) == 3
    with pytest.raises(ValueError):
        make_batch([], PPOHyperparams())


# -- episodes and curricula -----------------------------------------------------------

TINY = StageConfig("t", 40, "flat", grass=100, dandelion=100, episodes=2, max_steps=60)


def test_run_episode_survives_to_max_steps():
    tr = run_episode(stage_factory(TINY, "hare"), RandomPolicy(), 40, seed=1)
    assert tr.length == 40 and len(tr) == 40 and not any(tr.dones)


def test_run_episode_death_marks_last():
    stage = StageConfig("d", 40, "flat", grass=0, dandelion=0, max_steps=100)
    factory = stage_factory(stage, "hare")

    def weak(seed):
        w, focal = factory(seed)
        w.animals[focal].hydration = 0.0105
        return w, focal

    tr = run_episode(weak, RandomPolicy(), 100, seed=3)
    assert tr.length <= 11 and tr.dones[-1] and not any(tr.dones[:-1])


def test_run_episode_deterministic():
    pol = ActorCritic(5787, 8, seed=0).snapshot()
    f = stage_factory(TINY, "hare")
    a, b = run_episode(f, pol, 50, 9), run_episode(f, pol, 50, 9)
    assert a.actions == b.actions and a.rewards == b.rewards and np.array_equal(np.array(a.obs), np.array(b.obs))
    with pytest.raises(ValueError):
        run_episode(f, pol, 0, 9)


def test_fox_episode_locks_fold_rewards():
    stage = StageConfig("f", 40, "flat", hares=150, episodes=1, max_steps=400)
    tr = run_episode(stage_factory(stage, "fox"), RandomPolicy(), 400, seed=2)
    assert len(tr) <= tr.length
    assert tr.total_reward == pytest.approx(sum(tr.rewards))


def test_curricula_shapes():
    hs, fs = hare_curriculum(), fox_curriculum()
    assert len(hs) == 5 and sum(s.episodes for s in hs) == 500
    assert len(fs) == 4 and all(s.episodes == 100 and s.max_steps == 5000 for s in fs)
    assert hs[0].island_size == 50 and hs[0].terrain == "flat" and hs[-1].foxes > 0


def test_zero_episode_stage_keeps_weights():
    pol = ActorCritic(5787, 8, species="hare", seed=4)
    theta = pol.theta.copy()
    res = train_curriculum("hare", [StageConfig("z", 40, episodes=0)], policy=pol)
    assert np.array_equal(res.policy.theta, theta) and res.log == []


def test_weight_carry_and_log(tmp_path):
    stages = [TINY, StageConfig("u", 40, "flat", episodes=0)]
    res = train_curriculum("hare", stages, PPOHyperparams(rollout_steps=50), seed=1, hidden_size=8)
    assert len(res.log) == 2 and len(res.stage_weights) == 2
    assert np.array_equal(res.stage_weights[0], res.stage_weights[1])
    assert not np.array_equal(res.stage_weights[0], ActorCritic(5787, 8, seed=derive_seed(1, "init")).theta)
    write_training_log(res.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS) == "stage,episode,return,length,policy_loss,value_loss,entropy"
    assert len(lines) == 3


def test_evaluate_lengths():
    f = stage_factory(TINY, "hare")
    L = evaluate(RandomPolicy(), f, [1, 2, 3], 30)
    assert np.all((L >= 1) & (L <= 30)) and np.array_equal(L, evaluate(RandomPolicy(), f, [1, 2, 3], 30))
