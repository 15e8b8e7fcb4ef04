#!/usr/bin/env python3
"""
Policy-Gradient Trainer
Rollouts, discounted returns-to-go, batched REINFORCE updates with a
moving-average baseline, and the training loop with periodic evaluation.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .agent import AgentModel, encode, policy, policy_tensor, sample_action
from .autograd import AdamState, Tape, Tensor, adam_step, log, pick, scale, total
from .classifier import ClassifierModel
from .corpus import Corpus
from .environment import SKIP, EpisodeTrace, RewardConfig, TransitionRecord, reset, step
from .errors import ArgumentError, CorpusError, DivergenceError
from .sketch import SegmentTable, VectorSketch

logger = logging.getLogger(__name__)

BASELINES = ('none', 'moving-average')
CURVE_COLUMNS = ['episode', 'mean_return', 'mean_kept_segments', 'eval_accuracy', 'eval_mean_return']


@dataclass
class TrainerConfig:
    lr: float = 1e-4
    batch_size: int = 16
    episodes: int = 3000
    baseline: str = 'moving-average'
    baseline_momentum: float = 0.9
    eval_every: int = 200
    eval_size: int = 60
    seed: int = 0
    workers: int = 1

    def validate(self):
        if self.batch_size < 1:
            raise ArgumentError("batch_size (N) must be >= 1")
        if self.lr <= 0:
            raise ArgumentError("learning rate must be > 0")
        if self.episodes < 0 or self.eval_every < 1 or self.eval_size < 1:
            raise ArgumentError("episodes must be >= 0, eval_every and eval_size >= 1")
        if self.baseline not in BASELINES:
            raise ArgumentError(f"baseline must be one of {BASELINES}")
        if not 0.0 <= self.baseline_momentum < 1.0:
            raise ArgumentError("baseline_momentum must be in [0, 1)")
        if self.workers < 1:
            raise ArgumentError("workers must be >= 1")


@dataclass
class Trajectory:
    sketch_id: str
    sketch: VectorSketch
    label: int
    records: List[TransitionRecord]
    # (sketch, table, cursor) seen before each decision
    states: List[Tuple[VectorSketch, SegmentTable, int]] = field(repr=False, default_factory=list)
    final_sketch: Optional[VectorSketch] = field(repr=False, default=None)

    @property
    def rewards(self) -> List[float]:
        return [r.reward for r in self.records]

    @property
    def total_return(self) -> float:
        return float(sum(self.rewards))

    @property
    def kept_segments(self) -> int:
        return sum(r.action != SKIP for r in self.records)

    def trace(self, config: RewardConfig) -> EpisodeTrace:
        return EpisodeTrace(self.sketch_id, self.sketch, self.label, config, list(self.records))


def rollout(agent: AgentModel, classifier: ClassifierModel, sketch: VectorSketch,
            config: RewardConfig, rng: np.random.Generator, sketch_id: Optional[str] = None) -> Trajectory:
    """Sample the unshifted policy for one full episode"""
    if sketch.label is None:
        raise ArgumentError("rollout needs a labelled sketch")
    state = reset(sketch, sketch.label, classifier, config)
    features = encode(agent, state.sketch)
    records, states = [], []
    done = False
    while not done:
        phi = policy(agent, features, state.table, state.cursor)
        action, log_prob = sample_action(phi, rng)
        states.append((state.sketch, state.table, state.cursor))
        next_state, reward, done = step(state, action, classifier, config)
        records.append(TransitionRecord(state.t, action, float(reward), log_prob, int(next_state.prev_rank), done))
        if action == SKIP and not done:
            features = encode(agent, next_state.sketch)
        state = next_state
    return Trajectory(sketch_id or sketch.key or '', sketch, sketch.label, records, states, state.sketch)


def returns(rewards, gamma: float) -> np.ndarray:
    """Return-to-go G_t = R_t + gamma * G_{t+1}"""
    if not 0.0 <= gamma <= 1.0:
        raise ArgumentError("gamma must be in [0, 1]")
    if isinstance(rewards, Trajectory):
        rewards = rewards.rewards
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


class BaselineTracker:
    """Scalar baseline: unset (0) until the first batch, then an EMA of batch mean returns"""

    def __init__(self, mode: str = 'moving-average', momentum: float = 0.9):
        self.mode = mode
        self.momentum = momentum
        self.value: Optional[float] = None

    def current(self) -> float:
        if self.mode == 'none' or self.value is None:
            return 0.0
        return self.value

    def update(self, batch_mean: float) -> None:
        if self.mode == 'none':
            return
        if self.value is None:
            self.value = batch_mean
        else:
            self.value = self.momentum * self.value + (1.0 - self.momentum) * batch_mean


def surrogate_loss(agent: AgentModel, view: Dict[str, Tensor], batch: Sequence[Trajectory],
                   advantages: Sequence[np.ndarray]) -> Tensor:
    """-(1/N) sum over trajectories and steps of log pi(a_t | s_t) * advantage_t"""
    n = len(batch)
    terms = []
    for trajectory, adv in zip(batch, advantages):
        features_of: Dict[int, List[Tensor]] = {}
        for (sketch, table, cursor), record, a in zip(trajectory.states, trajectory.records, adv):
            if a == 0:
                continue
            key = id(sketch)
            if key not in features_of:
                features_of[key] = encode(agent, sketch, view)
            probs = policy_tensor(agent, view, features_of[key], table, cursor)
            terms.append(scale(log(pick(probs, record.action)), -float(a) / n))
    return total(terms)


@dataclass
class UpdateStats:
    loss: float
    mean_return: float
    baseline: float
    applied: bool


def reinforce_update(agent: AgentModel, batch: Sequence[Trajectory], config: TrainerConfig, gamma: float,
                     adam: AdamState, baseline: Optional[BaselineTracker] = None) -> UpdateStats:
    """One Adam step on the REINFORCE surrogate; skipped when every advantage is zero"""
    if not batch:
        raise ArgumentError("reinforce_update needs a non-empty batch")
    baseline = baseline or BaselineTracker('none')
    b = baseline.current()
    all_returns = [returns(t.rewards, gamma) for t in batch]
    advantages = [G - b for G in all_returns]
    mean_return = float(np.mean(np.concatenate(all_returns)))

    applied = any(np.any(a != 0) for a in advantages)
    loss_value = 0.0
    if applied:
        store = agent.store
        tape = Tape()
        view = tape.watch(store)
        loss = surrogate_loss(agent, view, batch, advantages)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            logger.error(f"Policy loss diverged (loss={loss_value})")
            raise DivergenceError("non-finite policy-gradient loss")
        store.zero_grads()
        tape.backward(loss, store)
        if not store.grads_finite():
            logger.error("Policy gradient contains non-finite values")
            raise DivergenceError("non-finite policy gradient")
        adam_step(store, adam, config.lr)

    baseline.update(mean_return)
    return UpdateStats(loss_value, mean_return, b, applied)


# ----------------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------------

@dataclass
class EvalStats:
    mean_return: float
    mean_kept_segments: float
    accuracy: float


def evaluate_policy(agent: AgentModel, classifier: ClassifierModel, sketches: Sequence[VectorSketch],
                    config: RewardConfig, seed: int = 0) -> EvalStats:
    """Unshifted rollouts; accuracy counts correctly classified final sketches"""
    trajectories = [rollout(agent, classifier, s, config, np.random.default_rng([seed, 1, j]))
                    for j, s in enumerate(sketches)]
    correct = [t.records[-1].rank == classifier.K for t in trajectories]
    return EvalStats(float(np.mean([t.total_return for t in trajectories])),
                     float(np.mean([t.kept_segments for t in trajectories])),
                     float(np.mean(correct)))


@dataclass
class AgentTrainingResult:
    agent: AgentModel
    curve: pd.DataFrame
    best_episode: int
    best_return: float
    last_batch: List[Trajectory] = field(default_factory=list)


def _eval_subset(sketches: List[VectorSketch], size: int, seed: int) -> List[VectorSketch]:
    if len(sketches) <= size:
        return sketches
    picks = np.sort(np.random.default_rng([seed, 2]).choice(len(sketches), size, replace=False))
    return [sketches[i] for i in picks]


def train_agent(corpus: Corpus, classifier: ClassifierModel, agent: AgentModel,
                config: TrainerConfig, reward_config: RewardConfig) -> AgentTrainingResult:
    """
    Buffer N trajectories per update over seeded-shuffled training sketches.

    The returned agent is the evaluated snapshot with the highest eval mean
    return (episode 0 included). Rollouts inside a batch use the same frozen
    parameters, so worker count does not change results.
    """
    config.validate()
    reward_config.validate()
    train = [s for s in corpus.train if not s.is_empty]
    if not train:
        raise CorpusError("no non-empty training sketches")
    eval_set = _eval_subset([s for s in corpus.test if not s.is_empty] or train, config.eval_size, config.seed)

    def evaluate(episode: int) -> EvalStats:
        stats = evaluate_policy(agent, classifier, eval_set, reward_config, config.seed)
        logger.info(f"Episode {episode}: eval return={stats.mean_return:.2f} "
                    f"kept={stats.mean_kept_segments:.2f} accuracy={stats.accuracy:.3f}")
        return stats

    first = evaluate(0)
    rows = [{'episode': 0, 'mean_return': float('nan'), 'mean_kept_segments': float('nan'),
             'eval_accuracy': first.accuracy, 'eval_mean_return': first.mean_return}]
    best, best_episode, best_return = agent.snapshot(), 0, first.mean_return
    if config.episodes == 0:
        return AgentTrainingResult(agent, pd.DataFrame(rows, columns=CURVE_COLUMNS), 0, best_return)

    order_rng = np.random.default_rng([config.seed, 0])
    order: List[int] = []
    while len(order) < config.episodes:
        order += list(order_rng.permutation(len(train)))

    adam = AdamState()
    baseline = BaselineTracker(config.baseline, config.baseline_momentum)
    batch: List[Trajectory] = []

    def run(e: int) -> Trajectory:
        sketch = train[order[e]]
        return rollout(agent, classifier, sketch, reward_config, np.random.default_rng([config.seed, 3, e]),
                       sketch_id=sketch.key or f"train-{order[e]}")

    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        done = 0
        while done < config.episodes:
            episodes = range(done, min(done + config.batch_size, config.episodes))
            batch = list(executor.map(run, episodes)) if executor else [run(e) for e in episodes]
            done = episodes.stop
            stats = reinforce_update(agent, batch, config, reward_config.gamma, adam, baseline)
            row = {'episode': done,
                   'mean_return': float(np.mean([t.total_return for t in batch])),
                   'mean_kept_segments': float(np.mean([t.kept_segments for t in batch])),
                   'eval_accuracy': float('nan'), 'eval_mean_return': float('nan')}
            logger.debug(f"Episode {done}: batch return={row['mean_return']:.2f} baseline={stats.baseline:.2f}")

            crossed = done // config.eval_every > (done - len(batch)) // config.eval_every
            if crossed or done == config.episodes:
                ev = evaluate(done)
                row['eval_accuracy'], row['eval_mean_return'] = ev.accuracy, ev.mean_return
                if ev.mean_return > best_return:
                    best, best_episode, best_return = agent.snapshot(), done, ev.mean_return
            rows.append(row)
    finally:
        if executor:
            executor.shutdown()

    logger.info(f"Best eval return {best_return:.2f} at episode {best_episode}")
    return AgentTrainingResult(best, pd.DataFrame(rows, columns=CURVE_COLUMNS), best_episode, best_return, batch)


def write_curve(path, curve: pd.DataFrame) -> None:
    curve.to_csv(path, index=False)
