from dataclasses import replace

import numpy as np
import pytest

from agents.dqn import (
    DQNAgent, EarlySaver, episode_return, select_action, td_targets, train_stage1, train_stage2, transfer_trunk,
)
from agents.replay import Batch
from analysis.properties import collect_probe
from harness.seeding import RandomStreams
from models.configs import Activation, AgentConfig, AuxConfig, AuxKind, Baseline, FTAConfig
from models.maze import EnvConfig
from tensor_nn.network import build_trunk
from utils.errors import NumericalError, UsageError

SMALL_OBS = (5, 5, 3)

FAST = AgentConfig(
    train_steps=300, transfer_steps=200, record_interval=100, property_interval=150,
    batch_size=8, buffer_capacity=500, target_sync_period=16, learning_rate=0.001,
)


def _batch(rng, size=4, obs_shape=SMALL_OBS):
    discounts = np.full(size, 0.99)
    discounts[0] = 0.0
    return Batch(
        obs=rng.uniform(-1, 1, size=(size,) + obs_shape),
        actions=rng.integers(0, 4, size=size),
        rewards=(discounts == 0).astype(np.float64),
        discounts=discounts,
        next_obs=rng.uniform(-1, 1, size=(size,) + obs_shape),
        next_actions=rng.integers(0, 4, size=size),
        positions=rng.integers(0, 5, size=(size, 2)),
        next_positions=rng.integers(0, 5, size=(size, 2)),
        indices=np.arange(size),
    )


def _small_agent(rng, cfg=None, **kwargs):
    return DQNAgent(cfg or FAST, rng, np.random.default_rng(0), obs_shape=SMALL_OBS, dtype=np.float64, **kwargs)


class TestActionSelection:
    def test_greedy_tie_break(self, rng):
        assert select_action(np.array([1.0, 1.0, 0.0, 0.0]), 0.0, rng) == 0
        assert select_action(np.array([0.0, 2.0, 3.0, 0.0]), 0.0, rng) == 2

    def test_uniform_when_epsilon_one(self, rng):
        actions = [select_action(np.array([5.0, 0.0, 0.0, 0.0]), 1.0, rng) for _ in range(4000)]
        counts = np.bincount(actions, minlength=4)
        assert np.all(np.abs(counts - 1000) < 150)

    def test_nan_rejected(self, rng):
        with pytest.raises(NumericalError):
            select_action(np.array([np.nan, 0.0, 0.0, 0.0]), 0.0, rng)


def test_terminal_target_is_reward():
    targets = td_targets(np.array([1.0, 0.0]), np.array([0.0, 0.5]), np.array([[9.0, 9.0], [2.0, 4.0]]))
    np.testing.assert_allclose(targets, [1.0, 2.0])


def test_episode_return():
    cfg = EnvConfig(goal=(0, 0), gamma=0.9)
    assert episode_return(1, True, cfg) == 1.0
    assert episode_return(3, True, cfg) == pytest.approx(0.81)
    assert episode_return(100, False, cfg) == 0.0


class TestEarlySaver:
    def test_triggers_on_hundredth_short_episode(self):
        saver = EarlySaver()
        fired = [saver.observe(100, True) for _ in range(100)]
        assert fired == [False] * 99 + [True]
        assert saver.triggered_at == 100

    def test_long_episode_resets_counter(self):
        saver = EarlySaver()
        for _ in range(50):
            saver.observe(20, True)
        saver.observe(101, True)
        fired = [saver.observe(20, True) for _ in range(100)]
        assert fired.index(True) == 99
        assert saver.triggered_at == 151

    def test_fires_only_once(self):
        saver = EarlySaver(window=2)
        fired = [saver.observe(5, True) for _ in range(6)]
        assert fired == [False, True, False, False, False, False]


class TestAgent:
    def test_td_and_aux_gradients_add_up(self, rng):
        cfg = replace(FAST, aux=AuxConfig(kind=AuxKind.XY, weight=0.5))
        agent = _small_agent(rng, cfg)
        batch = _batch(rng)

        def trunk_grads(**flags):
            agent.compute_gradients(batch, use_td=flags['td'], use_aux=flags['aux'])
            return {k: v.copy() for k, v in agent.trunk.gradients().items()}

        both = trunk_grads(td=True, aux=True)
        td = trunk_grads(td=True, aux=False)
        aux = trunk_grads(td=False, aux=True)
        for name in both:
            np.testing.assert_allclose(both[name], td[name] + aux[name], rtol=1e-6, atol=1e-10)

    def test_aux_gradient_leaves_value_head_alone(self, rng):
        agent = _small_agent(rng, replace(FAST, aux=AuxConfig(kind=AuxKind.REWARD)))
        agent.compute_gradients(_batch(rng), use_td=False, use_aux=True)
        for grad in agent.value.gradients().values():
            assert not np.any(grad)

    def test_frozen_trunk_is_untouched(self, rng):
        trunk = build_trunk(Activation.RELU32, FTAConfig(), rng, SMALL_OBS, np.float64)
        before = trunk.state_dict()
        agent = _small_agent(rng, trunk=trunk, train_trunk=False)
        assert 'trunk' not in agent.params
        for _ in range(5):
            agent.update(_batch(rng))
        for name, value in trunk.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_sync_copies_online_network(self, rng):
        agent = _small_agent(rng)
        obs = rng.uniform(-1, 1, size=(3,) + SMALL_OBS)
        for _ in range(3):
            agent.update(_batch(rng))
        assert not np.allclose(agent.target_value(agent.target_trunk(obs)), agent.q_values(obs))
        agent.sync_target()
        np.testing.assert_array_equal(agent.target_value(agent.target_trunk(obs)), agent.q_values(obs))
        assert agent.syncs == 1

    def test_loss_decreases_on_two_state_chain(self, rng):
        agent = _small_agent(rng)
        a, b = rng.uniform(-1, 1, size=(2,) + SMALL_OBS)
        goal = rng.uniform(-1, 1, size=SMALL_OBS)
        batch = Batch(
            obs=np.stack([a, b]), actions=np.array([3, 1]), rewards=np.array([0.0, 1.0]),
            discounts=np.array([0.99, 0.0]), next_obs=np.stack([b, goal]), next_actions=np.array([1, 0]),
            positions=np.zeros((2, 2), dtype=np.int64), next_positions=np.zeros((2, 2), dtype=np.int64),
            indices=np.arange(2),
        )
        first = agent.compute_gradients(batch)['td_loss']
        for _ in range(1000):
            agent.update(batch)
            if agent.updates % 64 == 0:
                agent.sync_target()
        last = agent.compute_gradients(batch)['td_loss']
        assert last < 0.2 * first


class TestTransferTrunk:
    def test_baselines(self, rng):
        assert transfer_trunk(FAST, rng, Baseline.SCRATCH) == (None, True)
        random_trunk, trainable = transfer_trunk(FAST, rng, Baseline.RANDOM)
        assert not trainable and random_trunk.num_parameters > 0
        input_trunk, trainable = transfer_trunk(FAST, rng, Baseline.INPUT)
        assert not trainable and input_trunk.num_parameters == 0

    def test_needs_a_representation(self, rng):
        with pytest.raises(UsageError):
            transfer_trunk(FAST, rng)


class TestTraining:
    def test_stage1_records_and_snapshots(self, default_maze):
        env_cfg = EnvConfig(goal=(9, 9))
        probe = collect_probe(default_maze, env_cfg, np.random.default_rng(0), n=40)
        outcome = train_stage1(default_maze, env_cfg, FAST, RandomStreams(0).child('stage1', 0), probe, 'relu')
        trace = outcome.trace
        assert [r.step for r in trace.returns] == [100, 200, 300]
        assert trace.steps == 300
        assert not outcome.converged and not trace.converged
        assert trace.freeze_step is None
        assert outcome.reports is trace.property_snapshots
        assert [(r.time_step, r.frozen) for r in outcome.reports] == [(150, False), (300, False), (300, True)]
        assert len(trace.interference) > 0
        assert set(outcome.trunk_state) == {'conv1.W', 'conv1.b', 'conv2.W', 'conv2.b', 'fc.W', 'fc.b'}

    def test_stage1_is_deterministic(self, default_maze):
        env_cfg = EnvConfig(goal=(9, 9))
        runs = [train_stage1(default_maze, env_cfg, FAST, RandomStreams(3).child('stage1', 0)) for _ in range(2)]
        assert runs[0].trace.to_rows() == runs[1].trace.to_rows()
        for name, value in runs[0].trunk_state.items():
            np.testing.assert_array_equal(value, runs[1].trunk_state[name])

    def test_stage2_keeps_representation_bit_identical(self, default_maze):
        state = build_trunk(Activation.RELU32, FTAConfig(), np.random.default_rng(1)).state_dict()
        outcome = train_stage2(default_maze, EnvConfig(goal=(0, 0)), FAST, RandomStreams(0).child('stage2', 0),
                               trunk_state=state)
        for name, value in state.items():
            np.testing.assert_array_equal(outcome.trunk_state[name], value)
        assert len(outcome.trace.returns) == 2

    def test_stage2_input_baseline(self, default_maze):
        outcome = train_stage2(default_maze, EnvConfig(goal=(0, 0)), FAST, RandomStreams(0).child('stage2', 0),
                               baseline=Baseline.INPUT)
        assert outcome.trunk_state == {}
        assert outcome.value_state['fc1.W'].shape == (675, 64)


@pytest.mark.slow
def test_relu_agent_converges_on_training_task(default_maze):
    cfg = AgentConfig(learning_rate=0.0003, continue_after_freeze=False)
    outcome = train_stage1(default_maze, EnvConfig(goal=(9, 9)), cfg, RandomStreams(0).child('stage1', 0))
    assert outcome.converged
    assert outcome.trace.freeze_step <= 300000
