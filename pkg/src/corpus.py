#!/usr/bin/env python3
"""
Corpus Module
Loads labelled sketch files, builds stratified train/test splits and
generates the synthetic toy corpus used for desk-scale experiments
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorpusError, ToySpecError
from .sketch import VectorSketch, from_polylines, normalize
from .sketch_io import read_ndjson

logger = logging.getLogger(__name__)

TRAIN = 'train'
TEST = 'test'


def _arc(a0: float, a1: float, n: int = 12) -> List[Tuple[float, float]]:
    angles = np.linspace(a0, a1, n)
    return [(float(np.cos(a)), float(np.sin(a))) for a in angles]


def _pentagram() -> List[Tuple[float, float]]:
    outer = [(-np.pi / 2) + i * 2 * np.pi / 5 for i in range(5)]
    order = [0, 2, 4, 1, 3, 0]
    return [(float(np.cos(outer[i])), float(np.sin(outer[i]))) for i in order]


# Core shapes in the [-1, 1] box (y grows downwards), one polyline per stroke
TOY_SHAPES: Dict[str, List[List[Tuple[float, float]]]] = {
    'square': [[(-1, -1), (1, -1), (1, 1)], [(1, 1), (-1, 1), (-1, -1)]],
    'circle': [_arc(np.pi, 2 * np.pi), _arc(0.0, np.pi)],
    'zigzag': [[(-1, -1), (-0.5, 1), (0, -1), (0.5, 1), (1, -1)]],
    'tee': [[(-1, -1), (1, -1)], [(0, -1), (0, 1)]],
    'star': [_pentagram()],
}
SHAPE_ALIASES = {'circle-polygon': 'circle'}


@dataclass
class Corpus:
    """Labelled sketches with a per-sketch train/test tag"""
    sketches: List[VectorSketch]
    class_names: List[str]
    split: List[str]
    core_strokes: Optional[List[int]] = None  # toy only: leading non-decoration strokes

    @property
    def K(self) -> int:
        return len(self.class_names)

    def indices(self, which: str) -> List[int]:
        return [i for i, s in enumerate(self.split) if s == which]

    @property
    def train(self) -> List[VectorSketch]:
        return [self.sketches[i] for i in self.indices(TRAIN)]

    @property
    def test(self) -> List[VectorSketch]:
        return [self.sketches[i] for i in self.indices(TEST)]

    def validate(self) -> None:
        if len(self.split) != len(self.sketches):
            raise CorpusError("split tags do not match sketch count")
        for which in (TRAIN, TEST):
            seen = {self.sketches[i].label for i in self.indices(which)}
            for label in range(self.K):
                if label not in seen:
                    raise CorpusError(f"class {self.class_names[label]!r} has no {which} sketches")
        for s in self.sketches:
            if s.label is None or not 0 <= s.label < self.K:
                raise CorpusError(f"label {s.label} outside [0, {self.K - 1}]")


@dataclass(frozen=True)
class ToyGenSpec:
    classes: Tuple[str, ...] = ('square', 'circle', 'zigzag')
    points_per_stroke: Tuple[int, int] = (8, 14)
    decoration_count: Tuple[int, int] = (0, 3)
    decoration_points: Tuple[int, int] = (2, 5)
    jitter_std: float = 0.03
    seed: int = 0
    test_fraction: float = 0.2

    def validate(self) -> None:
        for name in ('points_per_stroke', 'decoration_count', 'decoration_points'):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ToySpecError(f"{name} range {lo}..{hi} is empty")
        if self.points_per_stroke[0] < 2 or self.decoration_points[0] < 1:
            raise ToySpecError("strokes need at least two core points and one decoration point")
        if self.jitter_std < 0:
            raise ToySpecError("jitter_std must be >= 0")
        if not 0 < self.test_fraction < 1:
            raise ToySpecError("test_fraction must be in (0, 1)")
        for name in self.classes:
            if SHAPE_ALIASES.get(name, name) not in TOY_SHAPES:
                raise ToySpecError(f"unknown shape {name!r}; known: {sorted(TOY_SHAPES)}")
        if len(self.classes) < 2:
            raise ToySpecError("need at least two classes")


def _split_counts(n: int, test_fraction: float) -> int:
    return min(max(int(round(n * test_fraction)), 1), n - 1)


def _sample_polyline(vertices: np.ndarray, n: int) -> np.ndarray:
    """n points evenly spaced by arc length, endpoints included"""
    seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    at = np.linspace(0.0, arc[-1], n)
    return np.column_stack([np.interp(at, arc, vertices[:, 0]), np.interp(at, arc, vertices[:, 1])])


def _toy_class(spec: ToyGenSpec, label: int, name: str, n: int,
               rng: np.random.Generator) -> Tuple[List[VectorSketch], List[int]]:
    shape = [np.asarray(v, dtype=np.float64) for v in TOY_SHAPES[SHAPE_ALIASES.get(name, name)]]
    # per-class point counts so that noise-free sketches of a class coincide
    counts = [int(rng.integers(spec.points_per_stroke[0], spec.points_per_stroke[1] + 1)) for _ in shape]
    core = [_sample_polyline(v, c) for v, c in zip(shape, counts)]

    sketches, core_strokes = [], []
    for i in range(n):
        strokes = [p + rng.normal(0.0, spec.jitter_std, p.shape) if spec.jitter_std > 0 else p.copy()
                   for p in core]
        decorations = int(rng.integers(spec.decoration_count[0], spec.decoration_count[1] + 1))
        for _ in range(decorations):
            k = int(rng.integers(spec.decoration_points[0], spec.decoration_points[1] + 1))
            start = rng.uniform(-0.9, 0.9, 2)
            angle = rng.uniform(0.0, 2 * np.pi)
            length = rng.uniform(0.2, 0.4)
            direction = np.array([np.cos(angle), np.sin(angle)])
            line = start + np.linspace(0.0, length, k)[:, None] * direction
            strokes.append(line)
        sketch = from_polylines(strokes, label=label, category=name, key=f"{name}-{i:04d}")
        sketches.append(normalize(sketch))
        core_strokes.append(len(core))
    return sketches, core_strokes


def generate_toy(spec: ToyGenSpec, n_per_class: int) -> Corpus:
    """
    Synthetic corpus: one core shape per class drawn with Gaussian jitter,
    followed by class-independent decoration strokes.
    """
    spec.validate()
    if n_per_class < 2:
        raise ToySpecError("n_per_class must be >= 2")

    class_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(len(spec.classes))]
    sketches, split, core = [], [], []
    for label, (name, rng) in enumerate(zip(spec.classes, class_rngs)):
        items, core_counts = _toy_class(spec, label, name, n_per_class, rng)
        n_test = _split_counts(n_per_class, spec.test_fraction)
        tags = [TRAIN] * (n_per_class - n_test) + [TEST] * n_test
        order = rng.permutation(n_per_class)
        sketches += [items[i] for i in order]
        core += [core_counts[i] for i in order]
        split += tags

    corpus = Corpus(sketches, list(spec.classes), split, core_strokes=core)
    corpus.validate()
    logger.info(f"Generated toy corpus: {len(sketches)} sketches, {corpus.K} classes")
    return corpus


def _class_name(sketch: VectorSketch, path: Path) -> str:
    if sketch.category:
        return sketch.category
    if sketch.label is not None:
        return f"class_{sketch.label}"
    return path.stem


def load_corpus(paths: Sequence, per_class_cap: Optional[int] = None,
                test_fraction: float = 0.2, seed: int = 0) -> Corpus:
    """
    Read NDJSON files into a stratified, seeded train/test corpus.

    Classes come from integer labels when every record has one, otherwise
    from the record category or the file name (one QuickDraw file per class).
    Offsets are normalized on ingestion.
    """
    if not 0 < test_fraction < 1:
        raise CorpusError("test_fraction must be in (0, 1)")

    records: List[Tuple[VectorSketch, str]] = []
    for path in map(Path, paths):
        sketches, errors = read_ndjson(path)
        if errors:
            logger.warning(f"{path}: {len(errors)} malformed records skipped")
        records += [(s, _class_name(s, path)) for s in sketches if not s.is_empty]

    if not records:
        raise CorpusError("no sketches found")

    if all(s.label is not None for s, _ in records):
        K = max(s.label for s, _ in records) + 1
        class_names = [f"class_{k}" for k in range(K)]
        for s, name in records:
            class_names[s.label] = name
        labelled = [(s, s.label) for s, _ in records]
    else:
        class_names = sorted({name for _, name in records})
        index = {name: k for k, name in enumerate(class_names)}
        labelled = [(s, index[name]) for s, name in records]

    sketches, split = [], []
    for label, name in enumerate(class_names):
        members = [s for s, k in labelled if k == label]
        if len(members) < 2:
            raise CorpusError(f"class {name!r} has {len(members)} sketches; need at least 2")
        rng = np.random.default_rng([seed, label])
        order = rng.permutation(len(members))
        if per_class_cap is not None:
            order = order[:per_class_cap]
        n = len(order)
        if n < 2:
            raise CorpusError(f"class {name!r} capped below 2 sketches")
        n_test = _split_counts(n, test_fraction)
        for rank, i in enumerate(order):
            sketches.append(normalize(members[i].with_label(label, name)))
            split.append(TRAIN if rank < n - n_test else TEST)

    corpus = Corpus(sketches, class_names, split)
    corpus.validate()
    logger.info(f"Loaded corpus: {len(sketches)} sketches, {corpus.K} classes "
                f"({len(corpus.indices(TRAIN))} train / {len(corpus.indices(TEST))} test)")
    return corpus
