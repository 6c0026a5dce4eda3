import copy
import math

import numpy as np
import pytest
from scipy import stats

from coplan.dqn import (DqnConfig, Optimizer, ReplayBuffer, Sample, TrainingDiverged, clip_global_norm, epsilon,
                        greedy_slot, learning_rate, td_loss_and_grads, td_target, train, write_metrics)
from coplan.envs import CvrpEnv, PmspEnv, generate_cvrp_offline, generate_pmsp_offline
from coplan.graph import encode
from coplan.mdp import make_rng
from coplan.nn import QNet, QNetConfig

SMALL_NET = QNetConfig.cvrp(hidden=8, passes=1)


def _tiny_config(**kw):
    base = dict(total_steps=300, target_update=50, random_steps=50, learning_starts=50, batch_size=8,
                buffer_size=200, eval_every=100, eval_episodes=2)
    return DqnConfig.cvrp(**{**base, **kw})


def _make(i):
    return generate_cvrp_offline(3, 15, i)


# ------------------------------------------------------------------ targets
def test_td_target_examples():
    assert td_target([-5.0], [None], [None], [True], 1.0)[0] == -5.0
    y = td_target([-2.0], [np.array([9.0, 9.0])], [np.array([True, True])], [False], 0.0)
    assert y[0] == -2.0
    y = td_target([-2.0], [np.array([-1.0, -4.0])], [np.array([True, True])], [False], 1.0)
    assert y[0] == -3.0


def test_td_target_ignores_masked_actions():
    y = td_target([0.0], [np.array([5.0, -1.0])], [np.array([False, True])], [False], 1.0)
    assert y[0] == -1.0


def test_td_target_double_q():
    y = td_target([0.0], [np.array([1.0, 2.0])], [np.array([True, True])], [False], 1.0,
                  online_values=[np.array([3.0, 0.0])])
    assert y[0] == 1.0  # argmax by online values, evaluated by target values


def test_td_target_all_masked_nonterminal_is_an_error():
    with pytest.raises(RuntimeError):
        td_target([0.0], [np.array([1.0])], [np.array([False])], [False], 1.0)


# ---------------------------------------------------------------- schedules
def test_epsilon_schedule():
    cfg = DqnConfig(total_steps=1000, exploration_fraction=0.3, final_eps=0.1)
    assert epsilon(0, cfg) == 1.0
    assert epsilon(300, cfg) == 0.1 and epsilon(999, cfg) == 0.1
    assert epsilon(150, cfg) == pytest.approx((1.0 + 0.1) / 2)


def test_learning_rate_decay():
    cfg = DqnConfig(total_steps=100, lr=1e-3)
    assert learning_rate(50, cfg) == 1e-3
    cfg = DqnConfig(total_steps=100, lr=1e-3, lr_decay=0.1)
    assert learning_rate(0, cfg) == 1e-3
    assert learning_rate(100, cfg) == pytest.approx(1e-4)


def test_presets():
    p, c = DqnConfig.pmsp(), DqnConfig.cvrp()
    assert (p.batch_size, p.per_alpha, p.exploration_fraction, p.final_eps) == (32, 0.0, 0.3, 0.1)
    assert (c.batch_size, c.per_alpha, c.exploration_fraction, c.final_eps) == (128, 0.025, 0.1, 1e-4)
    assert p.target_update == p.random_steps == p.learning_starts == p.buffer_size == 5000
    assert p.grad_clip == 200 and p.per_beta0 == 0.4 and p.per_eps == 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        DqnConfig(gamma=1.5)
    with pytest.raises(ValueError):
        DqnConfig(optimizer="rmsprop")


# ------------------------------------------------------------------- replay
def test_replay_uniform_when_alpha_zero():
    buf = ReplayBuffer(10, alpha=0.0)
    for i in range(10):
        buf.add(i)
    buf.update(np.arange(10), np.arange(10) * 100.0)  # priorities must not matter
    rng = make_rng(0)
    idx, _, w = buf.sample(rng, 10 ** 5)
    counts = np.bincount(idx, minlength=10)
    assert stats.chisquare(counts).pvalue > 1e-3
    assert np.all(w == 1.0)


def test_replay_prioritised_frequencies():
    buf = ReplayBuffer(4, alpha=0.5, eps=0.0)
    for i in range(4):
        buf.add(i)
    buf.update(np.arange(4), np.array([1.0, 4.0, 9.0, 16.0]))
    expected = np.array([1.0, 2.0, 3.0, 4.0]) / 10.0
    np.testing.assert_allclose(buf.probabilities(), expected)
    idx, _, w = buf.sample(make_rng(1), 10 ** 5, beta=1.0)
    assert stats.chisquare(np.bincount(idx, minlength=4), expected * 10 ** 5).pvalue > 1e-3
    # importance weights (N p)^-beta normalised by their max
    np.testing.assert_allclose(w, (4 * expected[idx]) ** -1.0 / (4 * expected.min()) ** -1.0)


def test_replay_never_returns_overwritten_items():
    buf = ReplayBuffer(5)
    for i in range(13):
        buf.add(i)
    assert len(buf) == 5
    _, items, _ = buf.sample(make_rng(2), 1000)
    assert set(items) <= {8, 9, 10, 11, 12}
    assert set(buf.stamp) == {8, 9, 10, 11, 12}


def test_replay_new_item_gets_max_priority():
    buf = ReplayBuffer(3, alpha=1.0)
    buf.add("a")
    buf.update([0], [7.0])
    buf.add("b")
    assert buf.priority[1] == pytest.approx(7.0 + buf.eps)


def test_empty_replay_sample_raises():
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(make_rng(0), 1)


# ---------------------------------------------------------------- optimiser
def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == 5.0
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)
    h = {"a": np.array([0.3])}
    clip_global_norm(h, 1.0)
    assert h["a"][0] == 0.3


def _fixed_batch(n=6):
    env = CvrpEnv(generate_cvrp_offline(4, 15, 0))
    rng = make_rng(3)
    out = []
    while not env.done and len(out) < n:
        g = encode(env)
        slots = g.feasible_slots()
        slot = int(slots[rng.integers(len(slots))])
        tr = env.step(g.actions[slot])
        out.append(Sample(g, slot, tr.reward, encode(env), tr.terminal))
    return out


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_loss_constant_at_zero_lr_and_decreasing_at_tiny_lr(kind):
    net = QNet(SMALL_NET, seed=0)
    batch = _fixed_batch()
    y = np.array([-1.0, -0.5, -2.0, 0.3, -0.7, -1.1][:len(batch)])
    w = np.ones(len(batch))
    for lr, check in ((0.0, "const"), (1e-4, "down")):
        params = copy.deepcopy(net.params)
        opt = Optimizer(kind, params)
        losses = []
        for _ in range(10):
            loss, grads, _ = td_loss_and_grads(net, params, batch, y, w)
            opt.step(params, grads, lr)
            losses.append(loss)
        if check == "const":
            assert len(set(losses)) == 1
        else:
            assert all(b < a for a, b in zip(losses, losses[1:]))


def test_greedy_slot_respects_mask():
    assert greedy_slot(np.array([5.0, 1.0, 3.0]), np.array([False, True, True])) == 2


# ------------------------------------------------------------------ training
def test_zero_steps_returns_initial_params():
    res = train(_make, SMALL_NET, _tiny_config(total_steps=0), seed=4)
    ref = QNet(SMALL_NET, seed=int(make_rng(4, 1).integers(2 ** 31)))
    assert all(np.array_equal(res.params[k], ref.params[k]) for k in ref.params)


def test_training_is_bit_reproducible():
    a = train(_make, SMALL_NET, _tiny_config(), seed=1)
    b = train(_make, SMALL_NET, _tiny_config(), seed=1)
    assert all(np.array_equal(a.final_params[k], b.final_params[k]) for k in a.final_params)
    assert a.log == b.log and len(a.log) == 3


@pytest.mark.parametrize("kw", [{"double_q": True}, {"n_step": 3}, {"optimizer": "adam", "lr_decay": 0.5},
                                {"per_alpha": 0.6}])
def test_training_variants_run(kw):
    res = train(_make, SMALL_NET, _tiny_config(total_steps=150, **kw), seed=2)
    assert math.isfinite(res.best_eval) and res.episodes > 0


def test_pmsp_training_runs():
    cfg = DqnConfig.pmsp(total_steps=120, target_update=40, random_steps=30, learning_starts=30, batch_size=4,
                         buffer_size=100, eval_every=60, eval_episodes=2, reward_scale=1e-3)
    res = train(lambda i: generate_pmsp_offline(4, 2, 3, i), QNetConfig.pmsp(3, hidden=8, passes=1), cfg)
    assert len(res.log) == 2 and math.isfinite(res.best_eval)


def test_divergence_aborts():
    with pytest.raises(TrainingDiverged):
        train(_make, SMALL_NET, _tiny_config(total_steps=120, reward_scale=1e300, grad_clip=0.0, lr=1e300), seed=0)


def test_epsilon_greedy_never_picks_masked(monkeypatch):
    import coplan.dqn as dqn

    seen = []
    real = dqn.make_env

    def spy(inst):
        env = real(inst)
        step = env.step

        def checked(a):
            assert a in env.feasible_actions()
            seen.append(a)
            return step(a)

        env.step = checked
        return env

    monkeypatch.setattr(dqn, "make_env", spy)
    train(_make, SMALL_NET, _tiny_config(total_steps=200, exploration_fraction=0.5), seed=3)
    assert len(seen) >= 200


def test_metrics_csv(tmp_path):
    res = train(_make, SMALL_NET, _tiny_config(total_steps=100), seed=0)
    path = tmp_path / "m.csv"
    write_metrics(path, res.log)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,loss,epsilon,eval_return" and len(lines) == 2
