import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import path
from linksched.gcn import GcnLayer, GcnModel, forward, identity_model, init_model
from linksched.graph import ConflictGraph, er_for_degree, gen_er, normalized_laplacian
from linksched.greedy import cgs
from linksched.training import (
    ConfigError,
    ReplayBuffer,
    RewardStats,
    TrainConfig,
    Transition,
    clip_gradient,
    compute_reward,
    crts_label,
    crts_loss,
    crts_supervised_step,
    crts_train,
    dpg_gradient,
    dpg_step,
    dpg_train,
    dqn_train,
    episode_transitions,
    epsilon_schedule,
    q_target,
    split_validation,
)


def small_set(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return [er_for_degree(int(rng.integers(15, 40)), float(rng.uniform(2, 8)), seed * 1000 + i) for i in range(n)]


def sample_for(g, u, model):
    s = compute_reward(g, u, model)
    assert s is not None
    return s


def test_reward_identity_is_one():
    g = gen_er(20, 0.2, 0)
    u = np.random.default_rng(0).random(20)
    s = sample_for(g, u, identity_model(features="ones"))
    assert s.gamma == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(s.selection, cgs(g, u).indicator(20))


def test_reward_skips_zero_reference():
    stats = RewardStats()
    assert compute_reward(path(3), np.zeros(3), identity_model(), stats=stats) is None
    assert stats.skipped == 1 and stats.total == 1


def test_crs_step_downstream_matches_lgs_for_distinct_weights():
    g = gen_er(25, 0.2, 3)
    u = np.random.default_rng(3).random(25)
    m = init_model([1, 8, 1], 3)
    a = compute_reward(g, u, m, "lgs")
    b = compute_reward(g, u, m, "crs-step")
    assert a.gamma == b.gamma
    with pytest.raises(ValueError):
        compute_reward(g, u, m, "bogus")


def test_zero_selection_leaves_model_unchanged():
    g = gen_er(15, 0.3, 0)
    m = init_model([1, 8, 1], 0)
    before = m.copy()
    s = sample_for(g, np.random.default_rng(0).random(15), m)
    s.selection = np.zeros(15)
    dpg_step([s], m, 0.1)
    for a, b in zip(m.layers, before.layers):
        assert np.array_equal(a.theta0, b.theta0) and np.array_equal(a.theta1, b.theta1)


def test_gradient_linear_in_gamma():
    g = gen_er(15, 0.3, 1)
    m = init_model([1, 8, 1], 1)
    s = sample_for(g, np.random.default_rng(1).random(15), m)
    g1 = dpg_gradient([s], m)
    s.gamma *= 2
    g2 = dpg_gradient([s], m)
    for (a0, a1), (b0, b1) in zip(g1, g2):
        np.testing.assert_allclose(b0, 2 * a0, rtol=1e-12)
        np.testing.assert_allclose(b1, 2 * a1, rtol=1e-12)


def test_one_layer_hand_expansion():
    # z = theta0 * 1 + theta1 * L 1, so d(sel . z) = (sum(sel), sel . L 1)
    g = path(5)
    m = identity_model(features="ones")
    u = np.array([0.3, 0.5, 0.1, 0.4, 0.9])
    s = sample_for(g, u, m)
    (g0, g1), = dpg_gradient([s], m)
    lap1 = normalized_laplacian(g) @ np.ones(5)
    assert g0[0, 0] == pytest.approx(s.gamma * s.selection.sum())
    assert g1[0, 0] == pytest.approx(s.gamma * s.selection @ lap1)
    dpg_step([s], m, 0.5)
    assert m.layers[0].theta0[0, 0] == pytest.approx(1 + 0.5 * g0[0, 0])


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(2)
    g = gen_er(12, 0.3, 2)
    m = init_model([1, 6, 6, 1], 2)
    s = sample_for(g, rng.random(12), m)
    grads = dpg_gradient([s], m)

    def objective(model):
        out, _ = forward(g, s.features, model)
        return s.gamma * float(s.selection @ out[:, 0])

    h = 1e-6
    for li, layer in enumerate(m.layers):
        for which in ("theta0", "theta1"):
            mat = getattr(layer, which)
            for idx in list(np.ndindex(mat.shape))[:6]:
                mp, mm = m.copy(), m.copy()
                getattr(mp.layers[li], which)[idx] += h
                getattr(mm.layers[li], which)[idx] -= h
                fd = (objective(mp) - objective(mm)) / (2 * h)
                an = grads[li][0 if which == "theta0" else 1][idx]
                assert abs(fd - an) <= 1e-5 * max(1.0, abs(fd))


def test_clip_gradient():
    grads = [(np.array([[3.0]]), np.array([[4.0]]))]
    clipped = clip_gradient(grads, 1.0)
    assert np.hypot(clipped[0][0][0, 0], clipped[0][1][0, 0]) == pytest.approx(1.0)
    assert clip_gradient(grads, 10.0) is grads
    assert clip_gradient(grads, None) is grads


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(val_fraction=0)
    with pytest.raises(ConfigError):
        split_validation(3, 0.05, 0)


def test_split_validation_disjoint():
    tr, va = split_validation(100, 0.05, 0)
    assert len(va) == 5 and len(tr) == 95 and not set(tr) & set(va)


def test_zero_lr_returns_initial_model():
    graphs = small_set(20)
    m = init_model([1, 4, 1], 0)
    res = dpg_train(graphs, TrainConfig(lr=0.0, epochs=2, batch_size=8, val_fraction=0.2), model=m)
    for a, b in zip(res.model.layers, m.layers):
        assert np.array_equal(a.theta0, b.theta0) and np.array_equal(a.theta1, b.theta1)
    assert len(res.log) == 2


def test_selection_never_worse_than_start():
    graphs = small_set(40, 1)
    res = dpg_train(graphs, TrainConfig(lr=0.003, epochs=3, batch_size=8, val_fraction=0.25))
    assert res.best_val_gamma >= res.initial_val_gamma
    assert all(r["skipped"] == 0 for r in res.log)


def test_training_deterministic():
    graphs = small_set(30, 2)
    cfg = TrainConfig(lr=0.003, epochs=2, batch_size=8, val_fraction=0.2, seed=7)
    a, b = dpg_train(graphs, cfg), dpg_train(graphs, cfg)
    assert a.log == b.log
    assert all(np.array_equal(x.theta1, y.theta1) for x, y in zip(a.model.layers, b.model.layers))


def test_training_rejects_empty():
    with pytest.raises(ConfigError):
        dpg_train([], TrainConfig())


def test_crts_label_path(path5):
    g, u = path5
    assert crts_label(g, u).tolist() == [1, 0, 1, 0, 1]


@pytest.mark.parametrize("pair", ["sigmoid", "softmax"])
def test_crts_loss_gradient_fd(pair):
    rng = np.random.default_rng(4)
    g = gen_er(10, 0.3, 4)
    u = rng.random(10)
    y = crts_label(g, u)
    m = init_model([1, 6, 4], 4, output_kind="crts", pair_activation=pair)
    loss, grads = crts_loss(g, u, y, m)
    h = 1e-6
    for li, layer in enumerate(m.layers):
        for k, which in enumerate(("theta0", "theta1")):
            mat = getattr(layer, which)
            for idx in list(np.ndindex(mat.shape))[:8]:
                mp, mm = m.copy(), m.copy()
                getattr(mp.layers[li], which)[idx] += h
                getattr(mm.layers[li], which)[idx] -= h
                fd = (crts_loss(g, u, y, mp)[0] - crts_loss(g, u, y, mm)[0]) / (2 * h)
                an = grads[li][k][idx]
                assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-6) or abs(fd - an) < 1e-8


def test_crts_loss_uniform_prediction():
    # zero weights give p = 0.5 everywhere
    g = path(3)
    y = np.array([1.0, 0.0, 1.0])
    m = GcnModel([GcnLayer(np.zeros((1, 2)), np.zeros((1, 2)), "linear")], output_kind="crts")
    loss, _ = crts_loss(g, np.array([0.2, 0.5, 0.9]), y, m)
    assert loss == pytest.approx(np.log(2))


def test_crts_supervised_reduces_loss():
    graphs = small_set(10, 3)
    m = init_model([1, 8, 8, 2], 0, output_kind="crts")
    rng = np.random.default_rng(0)
    batch = []
    for g in graphs:
        u = rng.random(g.n)
        batch.append((g, u, crts_label(g, u)))
    first = crts_supervised_step(batch, m, 0.05)
    for _ in range(30):
        last = crts_supervised_step(batch, m, 0.05)
    assert last < first
    model, rows = crts_train(graphs[:4], TrainConfig(epochs=2, batch_size=2))
    assert len(rows) == 2 and model.is_finite()


def test_epsilon_schedule():
    assert epsilon_schedule(0) == 1.0
    assert epsilon_schedule(1) == pytest.approx(0.999)
    assert epsilon_schedule(10_000) == 0.05


def test_replay_buffer_fifo():
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.push(i)
    assert len(buf) == 3
    assert sorted(buf.sample(10, np.random.default_rng(0))) == [2, 3, 4]
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_q_target_terminal_and_bootstrap():
    g = path(3)
    u = np.array([0.2, 0.5, 0.3])
    m = init_model([1, 4, 1], 0, output_kind="q")
    done = Transition(g, u, np.array([0]), 0, 1.7, np.zeros(0, dtype=np.int64), True)
    assert q_target(done, m) == 1.7
    cont = Transition(g, u, np.array([0, 1, 2]), 0, 0.0, np.array([2]), False)
    assert np.isfinite(q_target(cont, m))


@given(st.integers(0, 200))
def test_episode_rewards_only_at_end(seed):
    g = gen_er(12, 0.3, seed)
    u = np.random.default_rng(seed).random(12)
    trs, gamma = episode_transitions(g, u, init_model([1, 4, 1], 0, output_kind="q"), 0.5, seed)
    assert trs[-1].done and trs[-1].reward == gamma
    assert all(t.reward == 0 and not t.done for t in trs[:-1])


def test_dqn_train_runs():
    model, rows = dqn_train(small_set(6, 4), TrainConfig(epochs=2, batch_size=4, lr=1e-3))
    assert len(rows) == 2 and model.is_finite()
    assert rows[-1]["epsilon"] == pytest.approx(0.999**12)


def test_dqn_skips_empty_graph():
    model, rows = dqn_train([ConflictGraph.empty(0), path(4)], TrainConfig(epochs=1, batch_size=2))
    assert model.is_finite()
