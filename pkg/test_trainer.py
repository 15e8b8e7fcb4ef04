#!/usr/bin/env python3
"""
Tests for rollouts, returns, REINFORCE updates and the training loop
"""

import numpy as np
import pytest

from conftest import line_sketch
from src.agent import AgentConfig, AgentModel, encode, policy
from src.autograd import AdamState, Tape
from src.environment import RewardConfig, TransitionRecord, replay
from src.errors import ArgumentError
from src.trainer import (CURVE_COLUMNS, BaselineTracker, TrainerConfig, Trajectory, reinforce_update, returns,
                         rollout, surrogate_loss, train_agent, write_curve)

from test_autograd import assert_grads_close, finite_difference


def test_returns():
    assert np.allclose(returns([1, 1, -100], 0.9), [-79.1, -89.0, -100.0])
    assert np.array_equal(returns([3, -2, 7], 0.0), [3, -2, 7])
    assert np.array_equal(returns([1] * 5, 1.0), [5, 4, 3, 2, 1])
    with pytest.raises(ArgumentError):
        returns([1], 1.5)


def test_single_segment_rollout(tiny_agent, small_classifier):
    trajectory = rollout(tiny_agent, small_classifier, line_sketch(4, label=0), RewardConfig(),
                         np.random.default_rng(0))
    assert len(trajectory.records) == 1
    assert trajectory.records[0].done
    assert abs(trajectory.records[0].reward) == 100.0


def test_rollout_is_seeded_and_replayable(tiny_agent, small_classifier, toy_corpus):
    sketch = toy_corpus.sketches[4]
    config = RewardConfig()
    a = rollout(tiny_agent, small_classifier, sketch, config, np.random.default_rng(7))
    b = rollout(tiny_agent, small_classifier, sketch, config, np.random.default_rng(7))
    assert [r.action for r in a.records] == [r.action for r in b.records]
    assert a.rewards == b.rewards
    assert a.sketch_id == sketch.key
    assert replay([a.trace(config)], small_classifier).ok


def test_baseline_tracker():
    tracker = BaselineTracker('moving-average', 0.9)
    assert tracker.current() == 0.0
    tracker.update(10.0)
    assert tracker.current() == 10.0
    tracker.update(20.0)
    assert abs(tracker.current() - 11.0) < 1e-12
    none = BaselineTracker('none')
    none.update(5.0)
    assert none.current() == 0.0


def _batch(agent, classifier, corpus, n=2):
    return [rollout(agent, classifier, s, RewardConfig(), np.random.default_rng(i))
            for i, s in enumerate(corpus.sketches[:n])]


def test_zero_advantage_leaves_parameters(tiny_agent, small_classifier, toy_corpus):
    trajectory = rollout(tiny_agent, small_classifier, line_sketch(4, label=1), RewardConfig(),
                         np.random.default_rng(0))
    baseline = BaselineTracker()
    baseline.value = trajectory.rewards[0]
    before = {k: v.copy() for k, v in tiny_agent.store.params.items()}
    stats = reinforce_update(tiny_agent, [trajectory], TrainerConfig(lr=0.1), 0.9, AdamState(), baseline)
    assert not stats.applied
    assert all(np.array_equal(before[k], tiny_agent.store[k]) for k in before)


def test_positive_advantage_raises_probability_of_taken_action(tiny_agent, small_classifier):
    sketch = line_sketch(5, label=0)
    trajectory = rollout(tiny_agent, small_classifier, sketch, RewardConfig(), np.random.default_rng(2))
    records = [TransitionRecord(r.t, r.action, 1.0, r.log_prob, r.rank, r.done) for r in trajectory.records]
    positive = Trajectory(trajectory.sketch_id, sketch, 0, records, trajectory.states)
    action = positive.records[0].action
    features, table = encode(tiny_agent, sketch), trajectory.states[0][1]
    before = policy(tiny_agent, features, table, 0).prob(action)
    stats = reinforce_update(tiny_agent, [positive], TrainerConfig(lr=0.01), 0.9, AdamState())
    after = policy(tiny_agent, encode(tiny_agent, sketch), table, 0).prob(action)
    assert stats.applied
    assert after > before


def test_surrogate_gradient_matches_finite_differences(tiny_agent, small_classifier, toy_corpus):
    batch = _batch(tiny_agent, small_classifier, toy_corpus)
    advantages = [returns(t, 0.9) - 3.0 for t in batch]
    store = tiny_agent.store
    tape = Tape()
    loss = surrogate_loss(tiny_agent, tape.watch(store), batch, advantages)
    store.zero_grads()
    tape.backward(loss, store)
    numeric = finite_difference(store, lambda: surrogate_loss(tiny_agent, store.view(), batch, advantages).item())
    assert_grads_close(store, numeric)


def test_zero_episodes_returns_agent_unchanged(tiny_agent, small_classifier, toy_corpus):
    before = {k: v.copy() for k, v in tiny_agent.store.params.items()}
    result = train_agent(toy_corpus, small_classifier, tiny_agent, TrainerConfig(episodes=0, eval_size=3),
                         RewardConfig())
    assert result.agent is tiny_agent
    assert all(np.array_equal(before[k], tiny_agent.store[k]) for k in before)
    assert list(result.curve.columns) == CURVE_COLUMNS
    assert len(result.curve) == 1


@pytest.mark.parametrize('scheme', ['basic', 'ranked'])
def test_short_training_run(scheme, tiny_agent, small_classifier, toy_corpus, tmp_path):
    config = TrainerConfig(lr=1e-2, batch_size=4, episodes=10, eval_every=4, eval_size=3, seed=1)
    result = train_agent(toy_corpus, small_classifier, tiny_agent, config, RewardConfig(scheme=scheme))
    curve = result.curve
    assert curve['episode'].tolist() == [0, 4, 8, 10]
    assert curve['eval_mean_return'].notna().all()
    assert result.best_return == curve['eval_mean_return'].max()
    assert len(result.last_batch) == 2
    write_curve(tmp_path / 'curve.csv', curve)
    assert (tmp_path / 'curve.csv').read_text().startswith(','.join(CURVE_COLUMNS))


def test_worker_count_does_not_change_results(small_classifier, toy_corpus):
    runs = []
    for workers in (1, 3):
        agent = AgentModel.create(AgentConfig(hidden=3, mlp_hidden=3, seed=4))
        config = TrainerConfig(lr=1e-2, batch_size=3, episodes=6, eval_every=3, eval_size=2, workers=workers)
        runs.append(train_agent(toy_corpus, small_classifier, agent, config, RewardConfig()))
    assert runs[0].curve.equals(runs[1].curve)
    for name in runs[0].agent.store.names():
        assert np.array_equal(runs[0].agent.store[name], runs[1].agent.store[name])
