import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from sklearn.base import clone

from bevdrive.bev.render import N_CHANNELS, ROUTE
from bevdrive.env import BevDriveEnv, make_scenario
from bevdrive.nn import Dense, relative_error
from bevdrive.rl import (
    ObservationStore,
    PolicyNet,
    PpoConfig,
    RolloutBatch,
    VecEnv,
    collect_rollout,
    entropy,
    gae,
    gaussian_log_prob,
    ppo_update,
    sample_action,
    squashed_log_prob,
    surrogate_terms,
    train_ppo,
)
from bevdrive.rl.agent import PPOAgent
from bevdrive.rl.ppo import _loss_and_backward
from bevdrive.world.town import TownSpec


def brute_force_advantages(r, v, d, boot, gamma, lam):
    """Direct sum of discounted TD residuals, truncated at episode ends."""
    T = len(r)
    vals = list(v) + [boot]
    deltas = [r[t] + gamma * vals[t + 1] * (0.0 if d[t] else 1.0) - v[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        total, w = 0.0, 1.0
        for k in range(t, T):
            total += w * deltas[k]
            if d[k]:
                break
            w *= gamma * lam
        adv[t] = total
    return adv


def test_gae_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 33))
        r, v = rng.standard_normal(T), rng.standard_normal(T)
        d = rng.random(T) < 0.2
        boot = float(rng.standard_normal())
        gamma, lam = float(rng.uniform(0.8, 1.0)), float(rng.uniform(0.0, 1.0))
        adv, ret = gae(r, v, d, boot, gamma, lam)
        ref = brute_force_advantages(r, v, d, boot, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - ref))))
        np.testing.assert_allclose(ret, adv + v)
    assert worst <= 1e-9


def test_gae_hand_example():
    # two steps, no termination, gamma=lam=1: A0 = r0 + r1 + boot - v0
    adv, _ = gae([1.0, 2.0], [0.5, 0.25], [False, False], 3.0, gamma=1.0, lam=1.0)
    np.testing.assert_allclose(adv, [5.5, 4.75])


def test_gae_batched_equals_per_env():
    rng = np.random.default_rng(8)
    r, v = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    d = rng.random((10, 3)) < 0.3
    boot = rng.standard_normal(3)
    adv, _ = gae(r, v, d, boot)
    for e in range(3):
        np.testing.assert_allclose(adv[:, e], gae(r[:, e], v[:, e], d[:, e], boot[e])[0])


def test_gae_rejects_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        gae([1.0, 2.0], [0.0], [False, False], 0.0)
    with pytest.raises(ValueError):
        gae([], [], [], 0.0)


# -- distributions ------------------------------------------------------------

def test_squashed_density_integrates_to_one():
    mu, log_std = np.array([0.7]), np.array([-0.3])

    def density(a):
        z = np.arctanh(a)
        # density over the action: Gaussian over z divided by |da/dz|
        return float(np.exp(gaussian_log_prob(np.array([z]), mu, log_std)) / (1.0 - a * a))

    total, _ = integrate.quad(density, -1 + 1e-12, 1 - 1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    z = np.array([0.3])
    expected = gaussian_log_prob(z, mu, log_std) - np.log(1.0 - np.tanh(z) ** 2).sum()
    assert squashed_log_prob(z, mu, log_std) == pytest.approx(expected)


def test_log_prob_stable_for_saturated_actions():
    z = np.array([[30.0, -40.0]])
    lp = squashed_log_prob(z, np.zeros((1, 2)), np.zeros((1, 2)))
    assert np.isfinite(lp).all()


def test_sample_action_bounds_and_deterministic_mode():
    rng = np.random.default_rng(0)
    mu = np.array([[0.2, -3.0]])
    log_std = np.array([[0.5, 0.5]])
    a, lp = sample_action((mu, log_std), rng)
    assert np.all(np.abs(a) <= 1.0) and np.isfinite(lp).all()
    a_det, _ = sample_action((mu, log_std), rng, deterministic=True)
    np.testing.assert_allclose(a_det, np.tanh(mu))
    s = sample_action((mu, log_std), rng, return_raw=True)
    np.testing.assert_allclose(s.action, np.tanh(s.z))


def test_sample_action_rejects_nan():
    with pytest.raises(ValueError):
        sample_action((np.array([np.nan, 0.0]), np.zeros(2)), np.random.default_rng(0))


def test_entropy_of_unit_gaussian():
    assert entropy(np.zeros(1)) == pytest.approx(0.5 * np.log(2 * np.pi * np.e))


# -- clipped surrogate --------------------------------------------------------

@pytest.mark.parametrize("ratio,adv,active", [
    (1.5, 1.0, False), (1.1, 1.0, True), (0.5, 1.0, True),
    (0.5, -1.0, False), (0.9, -1.0, True), (1.5, -1.0, True),
])
def test_surrogate_gradient_mask(ratio, adv, active):
    obj, mask = surrogate_terms(np.array([ratio]), np.array([adv]), 0.2)
    assert bool(mask[0]) is active
    assert obj[0] == pytest.approx(min(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(-5.0, 5.0), st.floats(0.05, 0.5))
def test_surrogate_is_pessimistic(ratio, adv, clip):
    obj, _ = surrogate_terms(np.array([ratio]), np.array([adv]), clip)
    assert obj[0] <= ratio * adv + 1e-12


# -- toy model with the policy interface ----------------------------------------

class _Store:
    def __init__(self, obs):
        self.obs = obs

    def get(self, idx):
        return None, self.obs[np.atleast_1d(idx)]


class ToyPolicy:
    """Linear mean and value over a feature vector, learned state-independent log-std."""

    def __init__(self, dim=3, seed=0):
        rng = np.random.default_rng(seed)
        self.mu_head = Dense(dim, 2, rng, np.float64)
        self.value_head = Dense(dim, 1, rng, np.float64)
        self.log_std_head = Dense(1, 2, rng, np.float64)
        self.mu_head.params["W"] *= 0.01
        self.log_std_head.params["W"][:] = 0.0
        self.log_std_head.params["b"][:] = -0.5

    def named_layers(self):
        return [("mu", self.mu_head), ("v", self.value_head), ("ls", self.log_std_head)]

    def state(self):
        return {n: {k: v.copy() for k, v in l.params.items()} for n, l in self.named_layers()}

    def load_state(self, s):
        for n, layer in self.named_layers():
            layer.params = {k: v.copy() for k, v in s[n].items()}
            layer.zero_grad()

    def forward(self, _bev, x):
        return (self.mu_head.forward(x), self.log_std_head.forward(np.ones((len(x), 1))),
                self.value_head.forward(x)[:, 0])

    def backward(self, dmu, dls, dv):
        self.mu_head.backward(dmu)
        self.log_std_head.backward(dls)
        self.value_head.backward(dv[:, None])


def _toy_batch(model, rng, n=64):
    obs = rng.standard_normal((n, 3))
    mu, ls, v = model.forward(None, obs)
    s = sample_action((mu, ls), rng, return_raw=True)
    target = np.tanh(obs[:, :2])
    rewards = -np.sum((s.action - target) ** 2, axis=1)
    return RolloutBatch(_Store(obs), s.z, s.log_prob, rewards, v, np.ones(n, dtype=bool), np.zeros(()))


def test_ppo_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    model = ToyPolicy()
    cfg = PpoConfig(clip=0.2)
    batch = _toy_batch(model, rng, 16)
    batch.compute_advantages(cfg.gamma, cfg.lam)
    # perturb the policy so that some ratios leave the clip range
    model.mu_head.params["W"] += rng.standard_normal(model.mu_head.params["W"].shape) * 0.3
    obs = batch.store.obs
    args = (batch.z, batch.log_probs, batch.advantages, batch.returns, cfg, 16)

    def total_loss():
        mu, ls, v = model.forward(None, obs)
        from bevdrive.rl.distributions import log1m_tanh2
        logp = gaussian_log_prob(batch.z, mu, ls) - np.sum(log1m_tanh2(batch.z), axis=-1)
        ratio = np.exp(logp - batch.log_probs)
        obj, _ = surrogate_terms(ratio, batch.advantages, cfg.clip)
        return (-obj.sum() / 16 + cfg.value_coef * np.sum((v - batch.returns) ** 2) / 16
                - cfg.entropy_coef * entropy(ls).sum() / 16)

    for _, layer in model.named_layers():
        layer.zero_grad()
    _loss_and_backward(model, None, obs, *args)
    for name, layer in model.named_layers():
        for k, p in layer.params.items():
            num = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + 1e-6
                fp = total_loss()
                p[i] = old - 1e-6
                fm = total_loss()
                p[i] = old
                num[i] = (fp - fm) / 2e-6
            assert relative_error(layer.grads[k], num, floor=1e-4) < 1e-4, (name, k)


def test_ppo_improves_a_contextual_bandit():
    rng = np.random.default_rng(2)
    model = ToyPolicy()
    cfg = PpoConfig(epochs=4, minibatch_size=64, lr=3e-2, entropy_coef=0.0, max_grad_norm=10.0)
    before = np.mean([_toy_batch(model, np.random.default_rng(100 + i), 256).rewards for i in range(4)])
    for _ in range(30):
        report = ppo_update(_toy_batch(model, rng, 256), model, cfg, rng=rng)
        assert not report["aborted"]
    after = np.mean([_toy_batch(model, np.random.default_rng(100 + i), 256).rewards for i in range(4)])
    assert after > before + 0.2


def test_ppo_aborts_and_restores_on_non_finite_loss():
    rng = np.random.default_rng(3)
    model = ToyPolicy()
    batch = _toy_batch(model, rng, 32)
    batch.rewards[5] = np.nan
    before = model.state()
    report = ppo_update(batch, model, PpoConfig(), rng=rng)
    assert report["aborted"] is True
    after = model.state()
    for n in before:
        for k in before[n]:
            np.testing.assert_array_equal(before[n][k], after[n][k])


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip=1.5)
    with pytest.raises(ValueError):
        PpoConfig(total_steps=0)
    with pytest.raises(ValueError):
        PpoConfig(gamma=1.2)


def test_rollout_batch_rejects_nan_log_probs():
    with pytest.raises(ValueError):
        RolloutBatch(None, np.zeros((2, 2)), np.array([0.0, np.nan]), np.zeros(2), np.zeros(2),
                     np.zeros(2, bool), np.zeros(()))


# -- policy network and storage --------------------------------------------------

def _random_bev(rng, n=2):
    bev = (rng.random((n, N_CHANNELS, 192, 192)) < 0.1).astype(np.float32)
    bev[:, ROUTE] = np.round(rng.random((n, 192, 192)) * 255) / np.float32(255)
    return bev


def test_observation_store_round_trip_is_lossless():
    rng = np.random.default_rng(4)
    bev = _random_bev(rng, 3)
    meas = rng.standard_normal((3, 6)).astype(np.float32)
    store = ObservationStore(5, 6)
    for i in range(3):
        store.put(i + 1, bev[i], meas[i])
    got, m = store.get([1, 2, 3])
    np.testing.assert_array_equal(got, bev)
    np.testing.assert_array_equal(m, meas)


def test_observation_store_rejects_non_binary_channels():
    bev = np.zeros((N_CHANNELS, 192, 192), dtype=np.float32)
    bev[0, 0, 0] = 0.5
    with pytest.raises(ValueError):
        ObservationStore(1, 6).put(0, bev, np.zeros(6))


def test_policy_net_shapes_and_input_validation():
    net = PolicyNet(6, seed=0)
    bev = _random_bev(np.random.default_rng(5))
    mu, log_std, value = net.forward(bev, np.zeros((2, 6), np.float32))
    assert mu.shape == (2, 2) and log_std.shape == (2, 2) and value.shape == (2,)
    np.testing.assert_allclose(log_std, -0.5)
    with pytest.raises(ValueError):
        net.forward(bev[:, :3], np.zeros((2, 6)))
    with pytest.raises(ValueError):
        net.forward(bev, np.zeros((2, 7)))


def test_policy_net_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    net = PolicyNet(6, seed=1, channels=(2, 2, 2, 2), hidden=8)
    for _, layer in net.named_layers():
        layer.astype(np.float64)
        # zero biases on empty windows would sit exactly on the relu kink
        layer.params["b"] += rng.uniform(0.05, 0.1, layer.params["b"].shape)
    bev = _random_bev(rng, 2).astype(np.float64)
    meas = rng.standard_normal((2, 6))
    r_mu, r_ls, r_v = rng.standard_normal((2, 2)), rng.standard_normal((2, 2)), rng.standard_normal(2)

    def objective():
        mu, ls, v = net.forward(bev, meas)
        return float(np.sum(mu * r_mu) + np.sum(ls * r_ls) + np.sum(v * r_v))

    net.forward(bev, meas)
    net.zero_grad()
    net.backward(r_mu, r_ls, r_v)
    for name, layer in net.named_layers():
        for k, p in layer.params.items():
            flat = p.reshape(-1)
            for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + 1e-5
                fp = objective()
                flat[i] = old - 1e-5
                fm = objective()
                flat[i] = old
                num = (fp - fm) / 2e-5
                assert relative_error(layer.grads[k].reshape(-1)[i], num) < 1e-4, (name, k)


# -- trainer and agent --------------------------------------------------------------

STRAIGHT = TownSpec.straight(length=120.0)


def _straight_fn(env_index, episode):
    seed = 10 * episode + env_index
    return make_scenario(0, STRAIGHT, seed, "Expert", 60.0, 0, 0, 20), seed


def test_collect_rollout_shapes_and_auto_reset():
    vec = VecEnv([BevDriveEnv() for _ in range(2)], _straight_fn)
    batch, finished = collect_rollout(vec, PolicyNet(6, seed=0), 25, np.random.default_rng(0))
    assert batch.z.shape == (25, 2, 2) and batch.rewards.shape == (25, 2)
    # step limit 20 forces at least one episode end per environment
    assert batch.dones.sum() >= 2 and len(finished) >= 2
    assert all(f["termination"] for f in finished)
    bev, meas = batch.store.get([0, 1])
    assert bev.shape == (2, N_CHANNELS, 192, 192) and meas.shape == (2, 6)


def test_train_ppo_writes_metrics_stream_with_footer(tmp_path):
    import json

    vec = VecEnv([BevDriveEnv() for _ in range(2)], _straight_fn)
    path = tmp_path / "train.jsonl"
    saved = []
    cfg = PpoConfig(total_steps=40, rollout_length=10, n_envs=2, minibatch_size=10, epochs=1)
    hist = train_ppo(PolicyNet(6, seed=0), vec, cfg, np.random.default_rng(0), path,
                     checkpoint_fn=saved.append, checkpoint_every=1)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["type"] for r in recs] == ["update"] * 2 + ["footer"]
    assert recs[-1]["steps"] == 40 and len(hist) == 2 and saved == [1, 2]
    assert {"step", "return", "policy_loss", "value_loss", "kl"} <= set(recs[0])


def test_ppo_agent_estimator_api_and_checkpoint_round_trip():
    agent = PPOAgent(total_steps=16, rollout_length=8, n_envs=2, minibatch_size=8, epochs=1,
                     town_spec=STRAIGHT, town_seeds=(0,), route_length=60.0, n_vehicles=0, n_pedestrians=0,
                     step_limit=20, random_state=3)
    assert clone(agent).get_params()["total_steps"] == 16
    agent.fit()
    assert agent.n_steps_ == 16 and len(agent.history_) == 1
    bev = _random_bev(np.random.default_rng(0))
    meas = np.zeros((2, 6), np.float32)
    a = agent.predict((bev, meas))
    assert a.shape == (2, 2) and np.all(np.abs(a) <= 1)
    restored = PPOAgent.from_bytes(agent.to_bytes())
    np.testing.assert_array_equal(restored.predict((bev, meas)), a)


def test_ppo_agent_rejects_non_scenario_input():
    with pytest.raises(ValueError):
        PPOAgent(total_steps=8, n_envs=1).fit([1, 2, 3])
