#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
numpy DDPG 학습기 테스트: MLP 기울기, 리플레이 버퍼, 탐색 잡음, 학습 스텝, 저장/불러오기
"""

import json

import numpy as np
import pytest

from rl_core import (ActionBounds, AgentFileError, AgentShapeError, Batch, DdpgConfig, InsufficientExperience, Mlp,
                     ReplayBuffer, Transition, actor_act, actor_gradients, ddpg_train_step, explore, init_mlp,
                     load_agent, make_agent, mlp_forward, mlp_gradients, replay_push, replay_sample,
                     save_agent, soft_update)

K_P_BOUNDS = ActionBounds(lo=(0.0,), hi=(0.5,))


def _reference_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    a = x
    for W, b, act in zip(net.weights, net.biases, net.activations):
        z = np.array([sum(W[i, j] * a[j] for j in range(W.shape[1])) + b[i] for i in range(W.shape[0])])
        a = {'relu': np.maximum(z, 0.0), 'tanh': np.tanh(z), 'linear': z}[act]
    return a


def _pre_activations(net: Mlp, x: np.ndarray):
    zs, a = [], x
    for W, b, act in zip(net.weights, net.biases, net.activations):
        z = W @ a + b
        zs.append(z)
        a = {'relu': np.maximum(z, 0.0), 'tanh': np.tanh(z), 'linear': z}[act]
    return zs


def _away_from_kinks(net: Mlp, rng: np.random.Generator) -> np.ndarray:
    """ReLU 꺾임점 근처(|z| < 1e-3)를 피한 입력"""
    while True:
        x = rng.normal(size=net.dims[0])
        if all(np.min(np.abs(z)) > 1e-3 for z in _pre_activations(net, x)[:-1]):
            return x


def _scalar(net: Mlp, x, g) -> float:
    return float(mlp_forward(net, x) @ g)


def test_mlp_forward_basic_cases():
    rng = np.random.default_rng(0)
    zero = Mlp([np.zeros((3, 4))], [np.zeros(3)], ['linear'])
    assert np.all(mlp_forward(zero, rng.normal(size=4)) == 0.0)
    identity = Mlp([np.eye(3)], [np.zeros(3)], ['linear'])
    x = rng.normal(size=3)
    assert np.array_equal(mlp_forward(identity, x), x)
    with pytest.raises(ValueError):
        mlp_forward(identity, np.zeros(4))


def test_mlp_forward_matches_reference_and_batch():
    rng = np.random.default_rng(1)
    net = init_mlp([5, 7, 6, 3], ['relu', 'tanh', 'linear'], rng)
    xs = rng.normal(size=(8, 5))
    batch = mlp_forward(net, xs)
    for x, row in zip(xs, batch):
        assert np.allclose(mlp_forward(net, x), _reference_forward(net, x), atol=1e-12, rtol=0)
        assert np.allclose(row, _reference_forward(net, x), atol=1e-12, rtol=0)


def test_linear_layer_gradient_is_outer_product():
    rng = np.random.default_rng(2)
    net = Mlp([rng.normal(size=(2, 3))], [rng.normal(size=2)], ['linear'])
    x, g = rng.normal(size=3), rng.normal(size=2)
    grads = mlp_gradients(net, x, g)
    assert np.allclose(grads.weights[0], np.outer(g, x))
    assert np.allclose(grads.biases[0], g)
    assert np.allclose(grads.inputs, net.weights[0].T @ g)


def test_zero_upstream_gradient_gives_zero_gradients():
    rng = np.random.default_rng(3)
    net = init_mlp([4, 6, 2], ['relu', 'tanh'], rng)
    grads = mlp_gradients(net, rng.normal(size=4), np.zeros(2))
    assert all(np.all(p == 0.0) for p in grads.params())
    assert np.all(grads.inputs == 0.0)


def test_gradients_match_finite_differences_on_random_actor_critic_nets():
    rng = np.random.default_rng(4)
    h = 1e-5
    worst = 0.0
    for trial in range(100):
        if trial % 2 == 0:
            net = init_mlp([4, 8, 8, 2], ['relu', 'relu', 'tanh'], rng)
        else:
            net = init_mlp([6, 8, 8, 1], ['relu', 'relu', 'linear'], rng)
        x = _away_from_kinks(net, rng)
        g = rng.normal(size=net.dims[-1])
        grads = mlp_gradients(net, x, g)
        for p, dp in zip(net.params() + [x], grads.params() + [grads.inputs]):
            flat, dflat = p.reshape(-1), dp.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = _scalar(net, x, g)
                flat[i] = old - h
                down = _scalar(net, x, g)
                flat[i] = old
                numeric = (up - down) / (2 * h)
                err = abs(numeric - dflat[i]) / max(1e-3, abs(numeric) + abs(dflat[i]))
                worst = max(worst, err)
    assert worst < 1e-4


def test_action_scaling_hits_bounds_and_midpoint():
    bounds = ActionBounds(lo=(0.0, 15.0), hi=(0.5, 50.0))
    assert list(bounds.scale(np.array([-1.0, -1.0]))) == [0.0, 15.0]
    assert list(bounds.scale(np.array([1.0, 1.0]))) == [0.5, 50.0]
    assert bounds.scale(np.array([0.0, 0.0]))[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        ActionBounds(lo=(1.0,), hi=(1.0,))


def test_actor_act_midpoint_and_non_finite_obs():
    agent = make_agent(3, K_P_BOUNDS, np.random.default_rng(5))
    agent.actor.weights[-1][:] = 0.0
    agent.actor.biases[-1][:] = 0.0
    raw, scaled = actor_act(agent, np.ones(3))
    assert raw[0] == 0.0
    assert scaled[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        actor_act(agent, np.array([1.0, np.nan, 0.0]))


def test_explore_zero_noise_clipping_and_decay():
    rng = np.random.default_rng(6)
    agent = make_agent(2, K_P_BOUNDS, rng)
    agent.noise_std, agent.noise_floor = 0.0, 0.0
    assert np.array_equal(explore(agent, np.array([0.3]), rng), np.array([0.3]))

    agent.noise_std, agent.noise_floor = 5.0, 0.0
    samples = np.array([explore(agent, np.array([0.99]), rng)[0] for _ in range(200)])
    assert np.all(np.abs(samples) <= 1.0)
    assert np.any(samples == 1.0)

    agent = make_agent(2, K_P_BOUNDS, rng)
    for _ in range(1000):
        explore(agent, np.zeros(1), rng)
    assert agent.noise_std == pytest.approx(max(0.01, 0.3 * (1 - 5e-5) ** 1000), rel=1e-12)
    agent.noise_decay = 0.5
    for _ in range(100):
        explore(agent, np.zeros(1), rng)
    assert agent.noise_std == agent.noise_floor == 0.01


def _transition(i: float, obs_dim: int = 2) -> Transition:
    return Transition(np.full(obs_dim, i), np.array([i / 10.0]), -i, np.full(obs_dim, i + 1), False)


def test_replay_buffer_capacity_and_retrieval():
    buf = ReplayBuffer(10_000, 2, 1)
    replay_push(buf, _transition(0.0))
    assert len(buf) == 1
    t = buf.get(0)
    assert np.array_equal(t.obs, [0.0, 0.0]) and t.reward == -0.0 and t.terminal is False
    for i in range(1, 10_001):
        replay_push(buf, _transition(float(i)))
    assert len(buf) == 10_000
    assert buf.get(0).reward == -1.0
    assert buf.get(len(buf) - 1).reward == -10_000.0
    with pytest.raises(IndexError):
        buf.get(10_000)


def test_replay_sample_boundaries_and_determinism():
    buf = ReplayBuffer(100, 2, 1)
    for i in range(63):
        buf.push(_transition(float(i)))
    with pytest.raises(InsufficientExperience):
        replay_sample(buf, 64, rng=np.random.default_rng(0))
    buf.push(_transition(63.0))
    batch = replay_sample(buf, 64, rng=np.random.default_rng(0))
    assert len(batch) == 64
    assert np.all((batch.reward <= 0.0) & (batch.reward >= -63.0))
    again = replay_sample(buf, 64, rng=np.random.default_rng(0))
    assert np.array_equal(batch.obs, again.obs) and np.array_equal(batch.reward, again.reward)


def test_replay_push_rejects_mismatched_dimensions():
    buf = ReplayBuffer(10, 2, 1)
    with pytest.raises(ValueError):
        replay_push(buf, Transition(np.array([1.0]), np.array([0.0]), 0.0, np.zeros(2), False))
    with pytest.raises(ValueError):
        replay_push(buf, Transition(np.zeros(2), np.zeros(2), 0.0, np.zeros(2), False))
    with pytest.raises(ValueError):
        replay_push(buf, _transition(0.0, obs_dim=3))
    assert len(buf) == 0
    replay_push(buf, _transition(0.0))
    with pytest.raises(TypeError):
        replay_sample(buf, 1)


def test_soft_update_examples_and_contraction():
    rng = np.random.default_rng(7)
    online = init_mlp([3, 4, 2], ['relu', 'tanh'], rng)
    target = Mlp([np.zeros_like(W) for W in online.weights], [np.zeros_like(b) for b in online.biases],
                 list(online.activations))
    ones = Mlp([np.ones_like(W) for W in online.weights], [np.ones_like(b) for b in online.biases],
               list(online.activations))
    soft_update(target, ones, 0.01)
    assert all(np.allclose(p, 0.01) for p in target.params())

    same = online.copy()
    soft_update(same, online, 0.01)
    assert all(np.allclose(a, b, rtol=0, atol=1e-15) for a, b in zip(same.params(), online.params()))

    copy_target = init_mlp([3, 4, 2], ['relu', 'tanh'], rng)
    soft_update(copy_target, online, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(copy_target.params(), online.params()))

    target = init_mlp([3, 4, 2], ['relu', 'tanh'], rng)
    gap = np.sqrt(sum(np.sum((t - o) ** 2) for t, o in zip(target.params(), online.params())))
    soft_update(target, online, 0.01)
    new_gap = np.sqrt(sum(np.sum((t - o) ** 2) for t, o in zip(target.params(), online.params())))
    assert new_gap == pytest.approx(0.99 * gap, rel=1e-10)

    with pytest.raises(ValueError):
        soft_update(init_mlp([3, 5, 2], ['relu', 'tanh'], rng), online)


def _batch(obs, action, reward, next_obs, terminal) -> Batch:
    return Batch(np.asarray(obs, float), np.asarray(action, float), np.asarray(reward, float),
                 np.asarray(next_obs, float), np.asarray(terminal, float))


def test_train_step_with_exact_critic_leaves_critic_unchanged():
    rng = np.random.default_rng(8)
    agent = make_agent(3, K_P_BOUNDS, rng)
    agent.gamma = 0.0
    agent.critic.weights[-1][:] = 0.0
    agent.critic.biases[-1][:] = 0.7
    before = [p.copy() for p in agent.critic.params()]
    n = 16
    batch = _batch(rng.normal(size=(n, 3)), rng.uniform(-1, 1, (n, 1)), np.full(n, 0.7),
                   rng.normal(size=(n, 3)), np.zeros(n))
    loss, _ = ddpg_train_step(agent, batch)
    assert loss == 0.0
    assert all(np.array_equal(a, b) for a, b in zip(before, agent.critic.params()))


def test_constant_critic_gives_zero_actor_gradient():
    rng = np.random.default_rng(9)
    agent = make_agent(3, K_P_BOUNDS, rng)
    agent.critic.weights[-1][:] = 0.0
    grads, objective = actor_gradients(agent, rng.normal(size=(10, 3)))
    assert objective == pytest.approx(agent.critic.biases[-1][0])
    assert all(np.all(p == 0.0) for p in grads.params())


def test_critic_converges_on_single_transition():
    rng = np.random.default_rng(10)
    agent = make_agent(2, K_P_BOUNDS, rng, DdpgConfig(batch_size=1, hidden=(16, 16)))
    t = Transition(np.array([0.5, -0.2]), np.array([0.1]), 0.8, np.array([0.1, 0.3]), True)
    agent.buffer.push(t)
    critic_in = np.concatenate((t.obs, t.action))
    best = np.inf
    for _ in range(5000):
        ddpg_train_step(agent, agent.buffer.sample(1, rng))
        best = min(best, abs(mlp_forward(agent.critic, critic_in)[0] - 0.8))
        if best < 1e-3:
            break
    assert best < 1e-3


def _bandit_run(seed: int) -> float:
    """보상 −(a − 0.3)², 관측 1개인 1차원 밴딧에서 탐욕 행동 반환"""
    rng = np.random.default_rng(seed)
    agent = make_agent(1, ActionBounds(lo=(0.0,), hi=(1.0,)), rng)
    obs = np.array([1.0])
    for _ in range(5000):
        raw, _ = actor_act(agent, obs)
        raw = explore(agent, raw, rng)
        a = agent.bounds.scale(raw)[0]
        agent.buffer.push(Transition(obs, raw, -(a - 0.3) ** 2, obs, True))
        if len(agent.buffer) >= agent.batch_size:
            ddpg_train_step(agent, agent.buffer.sample(agent.batch_size, rng))
    return float(actor_act(agent, obs)[1][0])


@pytest.mark.slow
def test_bandit_greedy_action_converges():
    hits = sum(abs(_bandit_run(seed) - 0.3) < 0.05 for seed in range(10))
    assert hits >= 9


def test_save_load_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(12)
    bounds = ActionBounds(lo=(15.0, 0.0, 0.0), hi=(50.0, 0.05, 0.1))
    agent = make_agent(8, bounds, rng)
    # 파라미터를 조금 학습시켜 초기값과 다르게
    for i in range(80):
        agent.buffer.push(Transition(rng.normal(size=8), rng.uniform(-1, 1, 3), float(rng.normal()),
                                     rng.normal(size=8), i % 11 == 10))
    for _ in range(5):
        ddpg_train_step(agent, agent.buffer.sample(agent.batch_size, rng))
    explore(agent, np.zeros(3), rng)

    path = save_agent(agent, tmp_path / 'agent_2.json')
    loaded = load_agent(path)
    xs = rng.normal(size=(100, 8))
    assert np.array_equal(mlp_forward(agent.actor, xs), mlp_forward(loaded.actor, xs))
    critic_in = np.hstack((xs, rng.uniform(-1, 1, (100, 3))))
    assert np.array_equal(mlp_forward(agent.critic, critic_in), mlp_forward(loaded.critic, critic_in))
    assert all(np.array_equal(a, b) for a, b in zip(agent.critic_target.params(), loaded.critic_target.params()))
    assert loaded.bounds == bounds
    assert loaded.noise_std == agent.noise_std
    assert loaded.noise_floor == agent.noise_floor
    assert (tmp_path / 'agent_2.actor.net').read_text(encoding='utf-8').splitlines()[1] == 'layer 8 64 relu'


def test_truncated_network_file_reports_line(tmp_path):
    agent = make_agent(3, K_P_BOUNDS, np.random.default_rng(13))
    path = save_agent(agent, tmp_path / 'agent_1.json')
    net_file = tmp_path / 'agent_1.critic.net'
    lines = net_file.read_text(encoding='utf-8').splitlines()
    net_file.write_text('\n'.join(lines[:40]) + '\n', encoding='utf-8')
    with pytest.raises(AgentFileError, match=r'agent_1\.critic\.net:\d+'):
        load_agent(path)


def test_mismatched_dims_report_shape_error(tmp_path):
    agent = make_agent(3, K_P_BOUNDS, np.random.default_rng(14))
    path = save_agent(agent, tmp_path / 'agent_1.json')
    manifest = json.loads(path.read_text(encoding='utf-8'))
    manifest['obs_dim'] = 5
    path.write_text(json.dumps(manifest), encoding='utf-8')
    with pytest.raises(AgentShapeError):
        load_agent(path)

    path = save_agent(agent, tmp_path / 'agent_9.json')
    net_file = tmp_path / 'agent_9.actor.net'
    text = net_file.read_text(encoding='utf-8').replace('layer 64 64 relu', 'layer 63 64 relu', 1)
    net_file.write_text(text, encoding='utf-8')
    with pytest.raises(AgentShapeError):
        load_agent(path)


def test_malformed_manifest(tmp_path):
    path = tmp_path / 'agent_1.json'
    path.write_text('{"obs_dim": 3,\n  "networks": ', encoding='utf-8')
    with pytest.raises(AgentFileError, match=r'agent_1\.json:2'):
        load_agent(path)
