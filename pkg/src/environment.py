#!/usr/bin/env python3
"""
Abstraction Environment
Skip/keep decisions over stroke-segments, the basic and ranked reward
generators, and NDJSON episode traces with reward replay.

Actions: 0 = skip (remove the segment at the cursor), 1 = keep.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .classifier import ClassifierModel, rank
from .errors import ArgumentError, ProtocolError, RecordError, ResetError
from .sketch import SegmentTable, VectorSketch, build_segment_table, remove_segment

logger = logging.getLogger(__name__)

SKIP = 0
KEEP = 1
SCHEMES = ('basic', 'ranked')


@dataclass(frozen=True)
class RewardConfig:
    skip_bonus: float = 1.0
    keep_penalty: float = -5.0
    terminal_correct: float = 100.0
    terminal_wrong: float = -100.0
    w_rf: float = 0.5
    w_c: float = 0.8
    w_v: float = 0.2
    gamma: float = 0.9
    scheme: str = 'ranked'

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ArgumentError(f"reward scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if abs(self.w_c + self.w_v - 1.0) > 1e-9:
            raise ArgumentError(f"w_c + w_v must equal 1 (got {self.w_c} + {self.w_v})")
        if not 0.0 <= self.w_rf <= 1.0:
            raise ArgumentError("w_rf must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ArgumentError("gamma must be in [0, 1]")


@dataclass(frozen=True)
class EnvState:
    sketch: VectorSketch
    table: SegmentTable
    cursor: int
    t: int
    M: int
    label: int
    K: int
    prev_rank: int
    probs: np.ndarray
    done: bool = False


@dataclass
class TransitionRecord:
    t: int
    action: int
    reward: float
    log_prob: float
    rank: int
    done: bool


# ----------------------------------------------------------------------------
# rewards
# ----------------------------------------------------------------------------

def basic_reward(t: int, M: int, action: int, final_correct: Optional[bool] = None,
                 config: RewardConfig = RewardConfig()) -> float:
    if not 1 <= t <= M:
        raise ArgumentError(f"step {t} outside [1, {M}]")
    if t < M:
        return config.skip_bonus if action == SKIP else config.keep_penalty
    if final_correct is None:
        raise ArgumentError("terminal reward needs the final classification outcome")
    return config.terminal_correct if final_correct else config.terminal_wrong


def current_rank_reward(C_t: int, K: int) -> float:
    return 1.0 - (K - C_t) / K


def varied_rank_reward(C_t: int, C_prev: int, K: int) -> float:
    return 1.0 - (K - (C_t - C_prev)) / (2.0 * K)


def ranked_weight(t: int, M: int, w_rf: float) -> float:
    """Grows linearly from 0 at t = 1 to w_rf at t = M"""
    return w_rf * (t - 1) / max(1, M - 1)


def combine_ranked(b: float, c: float, v: float, w_r: float, w_c: float, w_v: float,
                   terminal: bool = False) -> float:
    r = 0.0 if terminal else (w_c * c + w_v * v) * b
    return (1.0 - w_r) * b + w_r * r


def ranked_reward(t: int, M: int, action: int, C_t: int, C_prev: int, K: int,
                  config: RewardConfig = RewardConfig(), final_correct: Optional[bool] = None) -> float:
    for name, C in (('C_t', C_t), ('C_prev', C_prev)):
        if not 1 <= C <= K:
            raise ArgumentError(f"{name}={C} outside [1, {K}]")
    b = basic_reward(t, M, action, final_correct, config)
    return combine_ranked(b, current_rank_reward(C_t, K), varied_rank_reward(C_t, C_prev, K),
                          ranked_weight(t, M, config.w_rf), config.w_c, config.w_v, terminal=t == M)


# ----------------------------------------------------------------------------
# transitions
# ----------------------------------------------------------------------------

def reset(sketch: VectorSketch, label: int, classifier: ClassifierModel,
          config: RewardConfig = RewardConfig()) -> EnvState:
    table = build_segment_table(sketch)
    if table.M == 0:
        raise ResetError("cannot start an episode on an empty sketch")
    if not 0 <= label < classifier.K:
        raise ResetError(f"label {label} outside [0, {classifier.K - 1}]")
    result = rank(classifier, sketch, label)
    return EnvState(sketch, table, 0, 1, table.M, label, classifier.K, result.rank, result.probs)


def transition(sketch: VectorSketch, table: SegmentTable, cursor: int,
               action: int) -> Tuple[VectorSketch, SegmentTable, int]:
    """Geometry part of a step: skip removes the segment, keep moves on"""
    if action == SKIP:
        sketch = remove_segment(sketch, table, cursor)
        return sketch, build_segment_table(sketch), cursor
    if action == KEEP:
        return sketch, table, cursor + 1
    raise ArgumentError(f"action must be 0 (skip) or 1 (keep), got {action}")


def step(state: EnvState, action: int, classifier: ClassifierModel,
         config: RewardConfig = RewardConfig()) -> Tuple[EnvState, float, bool]:
    if state.done:
        raise ProtocolError(f"episode finished after {state.M} steps")
    sketch, table, cursor = transition(state.sketch, state.table, state.cursor, action)

    if action == SKIP:
        result = rank(classifier, sketch, state.label)
        probs, C_t = result.probs, result.rank
    else:
        probs, C_t = state.probs, state.prev_rank

    terminal = state.t == state.M
    # rank K means top-1; an emptied sketch has rank 1
    final_correct = C_t == state.K if terminal else None
    if config.scheme == 'basic':
        reward = basic_reward(state.t, state.M, action, final_correct, config)
    else:
        reward = ranked_reward(state.t, state.M, action, C_t, state.prev_rank, state.K, config, final_correct)

    next_state = replace(state, sketch=sketch, table=table, cursor=cursor, t=state.t + 1,
                         prev_rank=C_t, probs=probs, done=terminal)
    return next_state, reward, terminal


# ----------------------------------------------------------------------------
# traces
# ----------------------------------------------------------------------------

@dataclass
class EpisodeTrace:
    sketch_id: str
    sketch: VectorSketch
    label: int
    config: RewardConfig
    records: List[TransitionRecord] = field(default_factory=list)

    @property
    def actions(self) -> List[int]:
        return [r.action for r in self.records]


def _episode_line(trace: EpisodeTrace) -> dict:
    return {
        'type': 'episode',
        'sketch_id': trace.sketch_id,
        'label': trace.label,
        'points': [[float(dx), float(dy), int(p)] for dx, dy, p in trace.sketch.points],
        'reward': asdict(trace.config),
    }


def write_trace(path, traces: Iterable[EpisodeTrace]) -> int:
    """One episode header line followed by its transition lines; returns the episode count"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for trace in traces:
            f.write(json.dumps(_episode_line(trace)) + '\n')
            for record in trace.records:
                f.write(json.dumps({'type': 'transition', **asdict(record)}) + '\n')
            count += 1
    return count


def read_trace(path) -> List[EpisodeTrace]:
    traces: List[EpisodeTrace] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                kind = item.get('type')
                if kind == 'episode':
                    traces.append(EpisodeTrace(
                        sketch_id=str(item['sketch_id']),
                        sketch=VectorSketch.from_points(item['points'], label=int(item['label'])),
                        label=int(item['label']),
                        config=RewardConfig(**item['reward'])))
                elif kind == 'transition':
                    if not traces:
                        raise ValueError("transition before any episode header")
                    item.pop('type')
                    traces[-1].records.append(TransitionRecord(**item))
                else:
                    raise ValueError(f"unknown line type {kind!r}")
            except (ValueError, TypeError, KeyError, AttributeError) as e:
                raise RecordError(line_number, str(e)) from e
    return traces


@dataclass
class ReplayReport:
    episodes: int = 0
    transitions: int = 0
    mismatches: List[Tuple[str, int, float, float]] = field(default_factory=list)  # id, t, recorded, replayed

    @property
    def ok(self) -> bool:
        return not self.mismatches


def replay(traces: Iterable[EpisodeTrace], classifier: ClassifierModel) -> ReplayReport:
    """Re-run every recorded action sequence and compare rewards exactly"""
    report = ReplayReport()
    for trace in traces:
        report.episodes += 1
        state = reset(trace.sketch, trace.label, classifier, trace.config)
        if len(trace.records) != state.M:
            logger.warning(f"Episode {trace.sketch_id}: {len(trace.records)} records for M={state.M}")
            report.mismatches.append((trace.sketch_id, 0, float(len(trace.records)), float(state.M)))
            continue
        for record in trace.records:
            state, reward, _ = step(state, record.action, classifier, trace.config)
            report.transitions += 1
            if reward != record.reward:
                report.mismatches.append((trace.sketch_id, record.t, record.reward, reward))
    if report.mismatches:
        logger.warning(f"Replay found {len(report.mismatches)} reward mismatches")
    return report
