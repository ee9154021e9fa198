import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safelane.agent import (DoubleDQNAgent, HyperParams, MobilAgent, RainbowAgent, RandomAgent,
                            greedy, project_distribution)
from safelane.drivers import Action
from safelane.env import EnvConfig, HighwayEnv, Status
from safelane.network import NetworkConfig, expected_values, log_softmax, softmax

SMALL = NetworkConfig(vehicle_slots=4, conv_widths=(5, 6), head_width=7, atom_count=11,
                      v_min=-10.0, v_max=10.0)
SMALL_Q = NetworkConfig.baseline(4, conv_widths=(5, 6), head_width=7)
FAST = HyperParams(replay_size=200, batch_size=4, train_start=8, target_sync=500)


def rand_batch(n, config=SMALL, seed=0, terminal_every=3):
    rng = np.random.default_rng(seed)
    disc = np.where(np.arange(n) % terminal_every == 0, 0.0, 0.9801)
    return {
        "obs": rng.uniform(-1, 1, (n, config.obs_size)),
        "actions": rng.integers(0, 3, n),
        "rewards": rng.normal(0, 3, n),
        "next_obs": rng.uniform(-1, 1, (n, config.obs_size)),
        "discounts": disc,
    }


def test_hyper_defaults_and_validation():
    h = HyperParams()
    assert (h.gamma, h.n_step, h.replay_size, h.target_sync, h.learning_rate, h.batch_size,
            h.omega, h.train_start) == (0.99, 2, 50_000, 500, 1e-4, 32, 0.6, 1000)
    with pytest.raises(ValueError):
        HyperParams(gamma=0.0)
    with pytest.raises(ValueError):
        HyperParams(batch_size=0)


def test_select_action_examples():
    z = np.linspace(-120, 120, 51)
    probs = np.zeros((3, 51))
    probs[Action.KEEP_LANE, np.argmin(np.abs(z - 100))] = 1.0
    probs[1:, 25] = 1.0
    assert greedy(expected_values(probs, z)) == Action.KEEP_LANE
    same = np.tile(np.full(51, 1 / 51), (3, 1))
    assert greedy(expected_values(same, z)) == Action.KEEP_LANE
    agent = RainbowAgent(NetworkConfig.rainbow(20), seed=0)
    agent.eval()
    for k in ('adv1_w_mu', 'adv1_w_sigma', 'adv1_b_mu', 'adv1_b_sigma'):
        agent.online.params[k][...] = 0
    assert agent.act(np.zeros(62)) == Action.KEEP_LANE
    assert greedy(np.array([0.0, 2.0, 2.0])) == Action.CHANGE_LEFT


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.01, 100))
def test_select_action_matches_brute_force(seed, scale):
    agent = RainbowAgent(NetworkConfig.rainbow(20), seed=seed)
    agent.eval()
    obs = np.random.default_rng(seed).uniform(-1, 1, 62)
    probs, _ = agent.q_distribution(obs)
    z = np.linspace(-120, 120, 51)
    ev = [sum(z[i] * probs[a, i] for i in range(51)) for a in range(3)]
    assert agent.act(obs) == int(np.argmax(ev))
    assert int(np.argmax(np.array(ev) * scale)) == agent.act(obs)


def test_eval_action_ignores_noise():
    agent = RainbowAgent(NetworkConfig.rainbow(20), seed=0)
    agent.eval()
    obs = np.random.default_rng(1).uniform(-1, 1, 62)
    first = agent.q_distribution(obs)[1]
    agent.online.resample_noise(np.random.default_rng(9))
    np.testing.assert_array_equal(agent.q_distribution(obs)[1], first)


def test_projection_examples():
    support = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(project_distribution(0.5, 0.0, [1 / 3] * 3, support),
                               [[0.0, 0.5, 0.5]])
    z = np.linspace(-120, 120, 51)
    p = np.random.default_rng(0).random(51)
    p /= p.sum()
    np.testing.assert_array_equal(project_distribution(0.0, 1.0, p, z)[0], p)
    on_grid = project_distribution(z[40], 0.0, p, z)[0]
    assert on_grid[40] == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(on_grid) == 1
    clamped = project_distribution(500.0, 0.0, p, z)[0]
    assert clamped[-1] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(-200, 200), disc=st.sampled_from([0.0, 0.99, 0.9801, 1.0]),
       seed=st.integers(0, 2 ** 16))
def test_projection_is_distribution_and_preserves_mean(r, disc, seed):
    z = np.linspace(-120, 120, 51)
    p = np.random.default_rng(seed).dirichlet(np.full(51, 0.3))
    m = project_distribution(r, disc, p, z)[0]
    assert np.all(m >= 0)
    assert m.sum() == pytest.approx(1.0, abs=1e-6)
    tz = r + disc * z
    if np.all((tz >= -120) & (tz <= 120)):
        assert m @ z == pytest.approx(r + disc * (p @ z), abs=1e-5)


def test_cross_entropy_gradient_zero_at_target():
    agent = RainbowAgent(SMALL, FAST, seed=0, dtype=np.float64)
    batch = rand_batch(4)
    logits = agent.online.forward(batch["obs"], sampled=True)
    target = softmax(logits[np.arange(4), batch["actions"]])
    _, grads = agent.loss_and_grads(batch, np.ones(4), target)
    for g in grads.values():
        np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_on_grid_terminal_loss_is_negative_log_prob():
    agent = RainbowAgent(SMALL, FAST, seed=0, dtype=np.float64)
    batch = rand_batch(1)
    batch["rewards"] = np.array([SMALL.support()[7]])
    batch["discounts"] = np.array([0.0])
    m, _ = agent.compute_targets(batch)
    assert m[0, 7] == 1.0
    losses, _ = agent.loss_and_grads(batch, np.ones(1), m)
    logits = agent.online.forward(batch["obs"], sampled=True)
    assert losses[0] == pytest.approx(-log_softmax(logits[0, batch["actions"][0]])[7])


def test_full_train_step_gradient_finite_differences():
    agent = RainbowAgent(SMALL, FAST, seed=3, dtype=np.float64)
    batch = rand_batch(4, seed=5)
    weights = np.array([1.0, 0.5, 0.8, 0.3])
    m, _ = agent.compute_targets(batch)  # constant target for the check
    _, grads = agent.loss_and_grads(batch, weights, m)
    net = agent.online

    def loss():
        losses, _ = agent.loss_and_grads(batch, weights, m)
        return float((losses * weights).sum() / 4)
    rng = np.random.default_rng(0)
    eps = 1e-6
    for name, p in net.params.items():
        for k in rng.permutation(p.size)[:15]:
            idx = np.unravel_index(k, p.shape)
            old = p[idx]
            p[idx] = old + eps
            up = loss()
            p[idx] = old - eps
            down = loss()
            p[idx] = old
            num = (up - down) / (2 * eps)
            ana = grads[name][idx]
            assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana), 1e-6), (name, num, ana)


def test_double_selection_uses_online_argmax():
    agent = RainbowAgent(SMALL, FAST, seed=1, dtype=np.float64)
    for seed in range(10):
        agent.online.resample_noise(agent.rng)
        agent.target.resample_noise(agent.rng)
        agent.online.flat += np.random.default_rng(seed).normal(0, 0.05, agent.online.flat.size)
        batch = rand_batch(16, seed=seed)
        m, a_star = agent.compute_targets(batch)
        online_q = agent.online.q_values(batch["next_obs"], sampled=True)
        np.testing.assert_array_equal(a_star, greedy(online_q))
        p = agent.target.probabilities(batch["next_obs"], sampled=True)
        expected = project_distribution(batch["rewards"], batch["discounts"],
                                        p[np.arange(16), a_star], agent.support)
        np.testing.assert_array_equal(m, expected)


def test_double_dqn_scripted_oracle():
    agent = DoubleDQNAgent(SMALL_Q, FAST, seed=2, dtype=np.float64)
    agent.target.flat += np.random.default_rng(0).normal(0, 0.1, agent.target.flat.size)
    batch = rand_batch(8, SMALL_Q, seed=4)
    y, _ = agent.compute_targets(batch)
    for i in range(8):
        q_on = agent.online.forward(batch["next_obs"][i], sampled=False)[0, :, 0]
        q_tg = agent.target.forward(batch["next_obs"][i], sampled=False)[0, :, 0]
        a = int(np.argmax(q_on))
        expected = batch["rewards"][i] + batch["discounts"][i] * q_tg[a]
        assert y[i] == pytest.approx(expected, abs=1e-12)
        if batch["discounts"][i] == 0.0:
            assert y[i] == batch["rewards"][i]


def test_double_dqn_single_action_reduces_to_td():
    cfg = NetworkConfig.baseline(4, conv_widths=(5,), head_width=6, action_count=1)
    agent = DoubleDQNAgent(cfg, FAST, seed=0, dtype=np.float64)
    batch = rand_batch(5, cfg)
    batch["actions"][:] = 0
    y, _ = agent.compute_targets(batch)
    q = agent.online.forward(batch["next_obs"], sampled=False)[:, 0, 0]
    np.testing.assert_allclose(y, batch["rewards"] + batch["discounts"] * q)


def test_double_dqn_epsilon_schedule():
    agent = DoubleDQNAgent(SMALL_Q, FAST)
    assert agent.epsilon() == 1.0
    agent.steps = 50_000
    assert agent.epsilon() == pytest.approx(0.525)
    agent.steps = 200_000
    assert agent.epsilon() == pytest.approx(0.05)
    assert agent.buffer.omega == 0.0


def test_agent_kind_checks():
    with pytest.raises(ValueError):
        RainbowAgent(SMALL_Q)
    with pytest.raises(ValueError):
        DoubleDQNAgent(SMALL)


@pytest.mark.parametrize("klass,config", [(RainbowAgent, SMALL), (DoubleDQNAgent, SMALL_Q)])
def test_target_sync_cadence(klass, config):
    agent = klass(config, FAST, seed=0)
    rng = np.random.default_rng(0)
    synced_at = []
    obs = rng.uniform(-1, 1, config.obs_size)
    for t in range(1210):
        nxt = rng.uniform(-1, 1, config.obs_size)
        before = agent.syncs
        stats = agent.record(obs, int(rng.integers(3)), float(rng.normal()), nxt, Status.RUNNING)
        if agent.syncs != before:
            synced_at.append(agent.updates)
            np.testing.assert_array_equal(agent.target.flat, agent.online.flat)
        if t + 1 < FAST.train_start:
            assert stats is None
        obs = nxt
    assert synced_at == [500, 1000]
    assert agent.updates == 1210 - FAST.train_start + 1
    assert not np.array_equal(agent.target.flat, agent.online.flat)


def test_checkpoint_round_trip(tmp_path):
    agent = RainbowAgent(SMALL, FAST, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        agent.record(rng.uniform(-1, 1, SMALL.obs_size), 1, 0.5,
                     rng.uniform(-1, 1, SMALL.obs_size), Status.RUNNING)
    path = tmp_path / "a.bin"
    agent.save(path, echo={"k": 1})
    back = RainbowAgent.load(path, expect_echo={"k": 1})
    np.testing.assert_array_equal(back.online.flat, agent.online.flat)
    np.testing.assert_array_equal(back.target.flat, agent.target.flat)
    np.testing.assert_array_equal(back.optim.m, agent.optim.m)
    assert (back.steps, back.updates, back.optim.t) == (agent.steps, agent.updates, agent.optim.t)
    assert back.rng.random() == agent.rng.random()
    with pytest.raises(ValueError):
        RainbowAgent.load(path, expect_echo={"k": 2})
    with pytest.raises(ValueError):
        DoubleDQNAgent.load(path)


def test_mobil_and_random_agents_do_not_learn():
    env = HighwayEnv(EnvConfig(), seed=0)
    obs = env.reset()
    mobil = MobilAgent.named("aggressive")
    assert mobil.act(obs, env) in (0, 1, 2)
    assert mobil.record(obs, 0, 0.0, obs, Status.RUNNING) is None
    rnd = RandomAgent(seed=1)
    acts = {rnd.act(obs) for _ in range(50)}
    assert acts == {0, 1, 2}
