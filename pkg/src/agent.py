#!/usr/bin/env python3
"""
Abstraction Agent
Bidirectional GRU encoder over data-segments with a moving-window MLP head
that outputs skip/keep probabilities for the stroke-segment at the cursor.
Also provides the delta shift, action sampling, full-sketch abstraction
and per-stroke saliency.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autograd import (ParamStore, Tensor, add, concat, load_checkpoint, matmul, save_checkpoint, softmax, tanh,
                       uniform_init)
from .classifier import ClassifierModel, Prediction, predict
from .environment import KEEP, SKIP, transition
from .errors import ArgumentError, ResetError
from .recurrent import bidirectional_gru, cell_params, init_cell
from .sketch import SEGMENT_SIZE, SegmentTable, VectorSketch, build_segment_table
from .sketch_io import saliency_color

logger = logging.getLogger(__name__)

INPUT_SIZE = 3
CHECKPOINT_KIND = 'agent'
MIN_PROB = 1e-12


@dataclass
class AgentConfig:
    hidden: int = 128
    mlp_hidden: int = 64
    window_radius: int = 0
    seed: int = 0

    def validate(self):
        if self.hidden < 1 or self.mlp_hidden < 1:
            raise ArgumentError("agent widths must be >= 1")
        if self.window_radius < 0:
            raise ArgumentError("window_radius must be >= 0")


@dataclass(frozen=True)
class ActionDistribution:
    p_skip: float
    p_keep: float

    def prob(self, action: int) -> float:
        return self.p_skip if action == SKIP else self.p_keep


@dataclass
class SaliencyMap:
    values: np.ndarray  # one value in [0, 1] per stroke

    def colors(self) -> List[str]:
        return [saliency_color(v) for v in self.values]


class AgentModel:
    """Parameters gru.fw.*, gru.bw.* and mlp.{W1,b1,W2,b2}; output index 0 is skip"""

    def __init__(self, store: ParamStore, hidden: int, mlp_hidden: int, window_radius: int = 0):
        self.store = store
        self.hidden = hidden
        self.mlp_hidden = mlp_hidden
        self.window_radius = window_radius

    @classmethod
    def create(cls, config: AgentConfig = AgentConfig()) -> 'AgentModel':
        config.validate()
        rng = np.random.default_rng(config.seed)
        store = ParamStore()
        for direction in ('fw', 'bw'):
            init_cell(store, f"gru.{direction}", 3, INPUT_SIZE, config.hidden, rng)
        width = (2 * config.window_radius + 1) * SEGMENT_SIZE * 2 * config.hidden
        store.add('mlp.W1', uniform_init(rng, (config.mlp_hidden, width), width))
        store.add('mlp.b1', np.zeros(config.mlp_hidden))
        store.add('mlp.W2', uniform_init(rng, (2, config.mlp_hidden), config.mlp_hidden))
        store.add('mlp.b2', np.zeros(2))
        return cls(store, config.hidden, config.mlp_hidden, config.window_radius)

    @property
    def input_width(self) -> int:
        return (2 * self.window_radius + 1) * SEGMENT_SIZE * 2 * self.hidden

    @property
    def architecture(self) -> dict:
        return {'hidden': self.hidden, 'mlp_hidden': self.mlp_hidden, 'window_radius': self.window_radius}

    def snapshot(self) -> 'AgentModel':
        return AgentModel(self.store.copy(), self.hidden, self.mlp_hidden, self.window_radius)


# ----------------------------------------------------------------------------
# network
# ----------------------------------------------------------------------------

def encode(agent: AgentModel, sketch: VectorSketch, view: Optional[Dict[str, Tensor]] = None) -> List[Tensor]:
    """B-GRU output (forward || backward, width 2H) for every data-segment"""
    if sketch.is_empty:
        raise ArgumentError("cannot encode an empty sketch")
    view = view if view is not None else agent.store.view()
    xs = [Tensor(row) for row in sketch.points]
    return bidirectional_gru(xs, cell_params(view, 'gru.fw'), cell_params(view, 'gru.bw'))


def policy_tensor(agent: AgentModel, view: Dict[str, Tensor], features: List[Tensor],
                  table: SegmentTable, cursor: int) -> Tensor:
    """Softmax over (skip, keep) from the window of segments around cursor"""
    if not 0 <= cursor < table.M:
        raise ArgumentError(f"cursor {cursor} outside table of {table.M} segments")
    zero_row = Tensor(np.zeros(2 * agent.hidden))
    parts: List[Tensor] = []
    for seg in range(cursor - agent.window_radius, cursor + agent.window_radius + 1):
        if 0 <= seg < table.M:
            start, end = table.ranges[seg]
            rows = features[start:end]
        else:
            rows = []
        parts += rows
        parts += [zero_row] * (SEGMENT_SIZE - len(rows))
    x = concat(parts)
    h = tanh(add(matmul(view['mlp.W1'], x), view['mlp.b1']))
    return softmax(add(matmul(view['mlp.W2'], h), view['mlp.b2']))


def policy(agent: AgentModel, features: List[Tensor], table: SegmentTable, cursor: int) -> ActionDistribution:
    probs = policy_tensor(agent, agent.store.view(), features, table, cursor).value
    return ActionDistribution(float(probs[SKIP]), float(probs[KEEP]))


def shift(phi: ActionDistribution, delta: float) -> ActionDistribution:
    """Move delta of probability mass towards skipping, clamped and renormalized"""
    if not -1.0 <= delta <= 1.0:
        raise ArgumentError(f"delta must be in [-1, 1], got {delta}")
    if delta == 0:
        return phi
    p_skip = min(max(phi.p_skip + delta, 0.0), 1.0)
    p_keep = min(max(phi.p_keep - delta, 0.0), 1.0)
    total = p_skip + p_keep
    return ActionDistribution(p_skip / total, p_keep / total)


def sample_action(shifted: ActionDistribution, rng: np.random.Generator,
                  phi: Optional[ActionDistribution] = None) -> tuple:
    """
    Draw from the shifted distribution. The log-probability is read from
    the unshifted phi (defaults to the shifted one).
    """
    action = SKIP if rng.random() < shifted.p_skip else KEEP
    source = phi if phi is not None else shifted
    return action, float(np.log(max(source.prob(action), MIN_PROB)))


# ----------------------------------------------------------------------------
# inference
# ----------------------------------------------------------------------------

@dataclass
class AbstractionResult:
    sketch: VectorSketch
    kept_mask: List[bool]  # per original stroke-segment
    phis: List[ActionDistribution]
    actions: List[int]
    prediction: Optional[Prediction] = None

    @property
    def kept_segments(self) -> int:
        return int(sum(self.kept_mask))

    @property
    def kept_points(self) -> int:
        return len(self.sketch)


def abstract(agent: AgentModel, sketch: VectorSketch, delta: float, rng: np.random.Generator,
             classifier: Optional[ClassifierModel] = None) -> AbstractionResult:
    """One full episode with shifted sampling; the encoder re-runs after every skip"""
    table = build_segment_table(sketch)
    if table.M == 0:
        raise ResetError("cannot abstract an empty sketch")
    current, cursor = sketch, 0
    features = encode(agent, current)
    phis, actions = [], []
    for _ in range(table.M):
        phi = policy(agent, features, table, cursor)
        action, _ = sample_action(shift(phi, delta), rng, phi)
        phis.append(phi)
        actions.append(action)
        current, table, cursor = transition(current, table, cursor, action)
        if action == SKIP and not current.is_empty:
            features = encode(agent, current)

    result = AbstractionResult(current, [a == KEEP for a in actions], phis, actions)
    if classifier is not None:
        result.prediction = predict(classifier, current)
    return result


def abstract_all(agent: AgentModel, sketches: Sequence[VectorSketch], delta: float, seed: int,
                 classifier: Optional[ClassifierModel] = None, workers: int = 1) -> List[AbstractionResult]:
    """Abstract each sketch with its own generator [seed, i]; output does not depend on workers"""
    if workers < 1:
        raise ArgumentError("workers must be >= 1")

    def run(i: int) -> AbstractionResult:
        return abstract(agent, sketches[i], delta, np.random.default_rng([seed, i]), classifier)

    if workers == 1:
        return [run(i) for i in range(len(sketches))]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run, range(len(sketches))))


def saliency(agent: AgentModel, sketch: VectorSketch) -> SaliencyMap:
    """Mean keep-probability per stroke over a keep-everything pass"""
    table = build_segment_table(sketch)
    if table.M == 0:
        raise ArgumentError("cannot compute saliency of an empty sketch")
    features = encode(agent, sketch)
    keep = np.array([policy(agent, features, table, c).p_keep for c in range(table.M)])
    stroke_of = np.asarray(table.stroke_of)
    values = np.array([keep[stroke_of == l].mean() for l in range(1, table.L + 1)])
    return SaliencyMap(np.clip(values, 0.0, 1.0))


def save_agent(path, agent: AgentModel, config: Optional[dict] = None) -> None:
    save_checkpoint(path, agent.store, CHECKPOINT_KIND, agent.architecture, config)


def load_agent(path) -> AgentModel:
    store, meta = load_checkpoint(path, kind=CHECKPOINT_KIND)
    arch = meta['architecture']
    return AgentModel(store, int(arch['hidden']), int(arch['mlp_hidden']), int(arch['window_radius']))
