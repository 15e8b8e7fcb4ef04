#!/usr/bin/env python3
"""
Tests for abstraction evaluation and the random-removal baseline
"""

import numpy as np
import pytest

from conftest import random_sketch
from src.corpus import Corpus
from src.errors import ArgumentError, CorpusError
from src.evaluation import core_decoration_saliency, evaluate_abstraction, random_removal
from src.sketch import build_segment_table, to_absolute


def test_random_removal_bounds():
    rng = np.random.default_rng(0)
    sketch = random_sketch(rng, max_strokes=5, max_points=14)
    assert np.array_equal(random_removal(sketch, len(sketch), rng).points, sketch.points)
    assert random_removal(sketch, 0, rng).is_empty
    with pytest.raises(ArgumentError):
        random_removal(sketch, -1, rng)


def test_random_removal_drops_whole_segments():
    rng = np.random.default_rng(1)
    for _ in range(50):
        sketch = random_sketch(rng, max_strokes=5, max_points=14)
        target = int(rng.integers(len(sketch) + 1))
        result = random_removal(sketch, target, np.random.default_rng(2))
        assert len(result) >= target
        original = {tuple(p) for p in np.round(to_absolute(sketch)[:, :2], 6)}
        kept = {tuple(p) for p in np.round(to_absolute(result)[:, :2], 6)}
        assert kept <= original
        assert build_segment_table(result).M <= build_segment_table(sketch).M


def test_random_removal_is_seeded():
    sketch = random_sketch(np.random.default_rng(3), max_strokes=5, max_points=14)
    a = random_removal(sketch, len(sketch) // 2, np.random.default_rng(4))
    b = random_removal(sketch, len(sketch) // 2, np.random.default_rng(4))
    assert np.array_equal(a.points, b.points)


def test_evaluate_abstraction_table(tiny_agent, small_classifier, toy_corpus):
    frame = evaluate_abstraction(tiny_agent, small_classifier, toy_corpus.test[:4], deltas=(-1.0, 0.0, 1.0))
    assert frame['delta'].tolist() == [-1.0, 0.0, 1.0]
    assert set(frame.columns) >= {'agent_accuracy', 'random_accuracy', 'full_accuracy', 'mean_kept_points'}
    # all-keep reproduces the input; all-skip removes everything
    assert frame['mean_kept_points'].iloc[0] == frame['mean_input_points'].iloc[0]
    assert frame['agent_accuracy'].iloc[0] == frame['full_accuracy'].iloc[0]
    assert frame['mean_kept_points'].iloc[2] == 0
    with pytest.raises(CorpusError):
        evaluate_abstraction(tiny_agent, small_classifier, [])


def test_core_decoration_saliency(tiny_agent, toy_corpus):
    core, decoration = core_decoration_saliency(tiny_agent, toy_corpus, range(6))
    assert 0.0 <= core <= 1.0
    assert np.isnan(decoration) or 0.0 <= decoration <= 1.0
    plain = Corpus(toy_corpus.sketches, toy_corpus.class_names, toy_corpus.split)
    with pytest.raises(CorpusError):
        core_decoration_saliency(tiny_agent, plain, [0])
