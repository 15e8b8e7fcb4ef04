#!/usr/bin/env python3
"""
Abstraction Evaluation
Recognizability of agent abstractions against a random-removal baseline
at matched retained data-segment counts, plus saliency checks on the toy corpus.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from .agent import AgentModel, abstract, saliency
from .classifier import ClassifierModel, predict
from .corpus import Corpus
from .errors import ArgumentError, CorpusError
from .sketch import VectorSketch, build_segment_table, remove_segment

logger = logging.getLogger(__name__)

DEFAULT_DELTAS = (-0.1, 0.0, 0.1)


def random_removal(sketch: VectorSketch, target: int, rng: np.random.Generator) -> VectorSketch:
    """
    Remove whole stroke-segments in random order while at least target
    data-segments remain.
    """
    if target < 0:
        raise ArgumentError("target must be >= 0")
    table = build_segment_table(sketch)
    count = len(sketch)
    removed = []
    for seg in rng.permutation(table.M):
        size = table.size(int(seg))
        if count - size >= target:
            removed.append(int(seg))
            count -= size
    # descending ids keep the lower ids valid in each rebuilt table
    for seg in sorted(removed, reverse=True):
        sketch = remove_segment(sketch, table, seg)
        table = build_segment_table(sketch)
    return sketch


def _correct(classifier: ClassifierModel, sketch: VectorSketch, label: int) -> bool:
    return predict(classifier, sketch).is_correct(label)


def evaluate_abstraction(agent: AgentModel, classifier: ClassifierModel, sketches: Sequence[VectorSketch],
                         deltas: Sequence[float] = DEFAULT_DELTAS, seed: int = 0) -> pd.DataFrame:
    """One row per delta: agent and random-removal accuracy plus retained sizes"""
    sketches = [s for s in sketches if not s.is_empty]
    if not sketches:
        raise CorpusError("no sketches to evaluate")
    full = float(np.mean([_correct(classifier, s, s.label) for s in sketches]))

    rows = []
    for d, delta in enumerate(deltas):
        agent_hits, random_hits, points, segments = [], [], [], []
        for j, sketch in enumerate(sketches):
            result = abstract(agent, sketch, delta, np.random.default_rng([seed, d, j]))
            baseline = random_removal(sketch, len(result.sketch), np.random.default_rng([seed, d, j, 1]))
            agent_hits.append(_correct(classifier, result.sketch, sketch.label))
            random_hits.append(_correct(classifier, baseline, sketch.label))
            points.append(len(result.sketch))
            segments.append(result.kept_segments)
        rows.append({
            'delta': delta,
            'agent_accuracy': float(np.mean(agent_hits)),
            'random_accuracy': float(np.mean(random_hits)),
            'full_accuracy': full,
            'mean_kept_points': float(np.mean(points)),
            'mean_kept_segments': float(np.mean(segments)),
            'mean_input_points': float(np.mean([len(s) for s in sketches])),
        })
        logger.info(f"delta={delta:+.2f}: agent={rows[-1]['agent_accuracy']:.3f} "
                    f"random={rows[-1]['random_accuracy']:.3f} kept_points={rows[-1]['mean_kept_points']:.1f}")
    return pd.DataFrame(rows)


def core_decoration_saliency(agent: AgentModel, corpus: Corpus, indices: Sequence[int]) -> Tuple[float, float]:
    """Mean saliency of core-shape strokes and of decoration strokes (toy corpora only)"""
    if corpus.core_strokes is None:
        raise CorpusError("corpus does not record core strokes")
    core: List[float] = []
    decoration: List[float] = []
    for i in indices:
        values = saliency(agent, corpus.sketches[i]).values
        n_core = corpus.core_strokes[i]
        core += list(values[:n_core])
        decoration += list(values[n_core:])
    return (float(np.mean(core)) if core else float('nan'),
            float(np.mean(decoration)) if decoration else float('nan'))
