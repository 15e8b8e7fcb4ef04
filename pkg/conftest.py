"""Shared pytest fixtures: small models and sketches that keep the suite fast"""

import numpy as np
import pytest

from src.agent import AgentConfig, AgentModel
from src.classifier import ClassifierModel
from src.corpus import ToyGenSpec, generate_toy
from src.sketch import VectorSketch, from_polylines


def random_sketch(rng: np.random.Generator, max_strokes: int = 4, max_points: int = 12) -> VectorSketch:
    polylines = []
    for _ in range(int(rng.integers(1, max_strokes + 1))):
        n = int(rng.integers(1, max_points + 1))
        polylines.append(np.cumsum(rng.normal(0.0, 1.0, (n, 2)), axis=0))
    return from_polylines(polylines)


def line_sketch(n: int, length: float = 10.0, **meta) -> VectorSketch:
    xs = np.linspace(0.0, length, n)
    return from_polylines([np.column_stack([xs, np.zeros(n)])], **meta)


def zero_params(model):
    for value in model.store.params.values():
        value.fill(0.0)
    return model


@pytest.fixture(scope='session')
def toy_corpus():
    spec = ToyGenSpec(points_per_stroke=(6, 9), decoration_count=(0, 2), seed=3)
    return generate_toy(spec, n_per_class=10)


@pytest.fixture(scope='session')
def small_classifier(toy_corpus):
    return ClassifierModel.create(toy_corpus.K, hidden=6, layers=1, seed=1)


@pytest.fixture
def tiny_agent():
    return AgentModel.create(AgentConfig(hidden=4, mlp_hidden=5, seed=2))
