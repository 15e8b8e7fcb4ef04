#!/usr/bin/env python3
"""
Sketch-Based Retrieval Harness
Fixed raster embedder, triplet ranking loss, Top-K accuracy, score fusion
over several abstraction levels and an optional linear projection trained
with the triplet loss.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .agent import AgentModel, abstract
from .autograd import (AdamState, ParamStore, Tape, Tensor, adam_step, add, matmul, mul, relu, sqrt, sub, sum_,
                       uniform_init)
from .errors import ArgumentError, DimensionError
from .photo2sketch import RasterImage, load_pgm
from .sketch import VectorSketch, rasterize

logger = logging.getLogger(__name__)

RASTER_SIZE = 64
GRID_SIZE = 16
EMBED_DIM = GRID_SIZE * GRID_SIZE
FUSION_MODES = ('mean', 'min')
FUSION_DELTAS = (-0.1, 0.0, 0.1)


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source_id: str = ''

    @property
    def dim(self) -> int:
        return len(self.values)


def _to_bitmap(item: Union[VectorSketch, RasterImage]) -> np.ndarray:
    if isinstance(item, VectorSketch):
        if item.is_empty:
            raise ArgumentError("cannot embed an empty sketch")
        return rasterize(item, RASTER_SIZE)
    binary = item.pixels >= 128
    rows = np.arange(RASTER_SIZE) * item.height // RASTER_SIZE
    cols = np.arange(RASTER_SIZE) * item.width // RASTER_SIZE
    return binary[rows][:, cols].astype(np.uint8)


def raster_embed(item: Union[VectorSketch, RasterImage], source_id: str = '') -> EmbeddingVector:
    """64x64 binary raster, 4x4 box-averaged to 16x16, flattened and L2-normalized"""
    bitmap = _to_bitmap(item).astype(np.float64)
    factor = RASTER_SIZE // GRID_SIZE
    grid = bitmap.reshape(GRID_SIZE, factor, GRID_SIZE, factor).mean(axis=(1, 3))
    values = grid.reshape(-1)
    norm = np.linalg.norm(values)
    if norm == 0:
        raise ArgumentError("cannot embed an input without ink")
    return EmbeddingVector(values / norm, source_id)


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


def distance(a, b) -> float:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise DimensionError(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def triplet_loss(s, p_plus, p_minus, margin: float) -> float:
    """max(0, margin + D(s, p+) - D(s, p-))"""
    if margin < 0:
        raise ArgumentError("margin must be >= 0")
    return max(0.0, margin + distance(s, p_plus) - distance(s, p_minus))


def match_rank(distances: np.ndarray, index: int) -> int:
    """1-based position of index when sorted by distance, ties by gallery order"""
    order = np.argsort(np.asarray(distances), kind='stable')
    return int(np.flatnonzero(order == index)[0]) + 1


def topk_accuracy(queries: Sequence[Tuple[str, np.ndarray]], true_match: Mapping[str, int], k: int) -> float:
    """Fraction of queries whose true gallery index is among the k nearest"""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    if not queries:
        return 0.0
    hits = 0
    for query_id, distances in queries:
        if query_id not in true_match:
            raise ArgumentError(f"query {query_id!r} has no true match")
        index = true_match[query_id]
        if not 0 <= index < len(distances):
            raise ArgumentError(f"true match {index} of {query_id!r} is not in the gallery")
        hits += match_rank(distances, index) <= k
    return hits / len(queries)


class RetrievalGallery:
    """Gallery of (item id, embedding) with unique ids"""

    def __init__(self, items: Sequence[EmbeddingVector]):
        ids = [item.source_id for item in items]
        if len(set(ids)) != len(ids):
            raise ArgumentError("gallery ids must be unique")
        self.ids = ids
        self.matrix = np.stack([item.values for item in items]) if items else np.zeros((0, EMBED_DIM))
        self._index = {item_id: i for i, item_id in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, item_id: str) -> int:
        if item_id not in self._index:
            raise ArgumentError(f"{item_id!r} is not in the gallery")
        return self._index[item_id]

    def distances(self, query) -> np.ndarray:
        q = _values(query)
        if q.shape[0] != self.matrix.shape[1]:
            raise DimensionError(f"query dimension {q.shape[0]} vs gallery {self.matrix.shape[1]}")
        return np.linalg.norm(self.matrix - q, axis=1)

    def projected(self, projection: 'LinearProjection') -> 'RetrievalGallery':
        return RetrievalGallery([EmbeddingVector(projection(v), i) for v, i in zip(self.matrix, self.ids)])


def load_gallery(directory) -> Tuple[RetrievalGallery, Dict[str, RasterImage]]:
    """Every *.pgm file in directory; the item id is the file stem"""
    paths = sorted(Path(directory).glob('*.pgm'))
    if not paths:
        raise ArgumentError(f"no .pgm files in {directory}")
    rasters = {p.stem: load_pgm(p) for p in paths}
    gallery = RetrievalGallery([raster_embed(r, item_id) for item_id, r in rasters.items()])
    logger.info(f"Loaded gallery of {len(gallery)} edge maps from {directory}")
    return gallery, rasters


# ----------------------------------------------------------------------------
# fusion
# ----------------------------------------------------------------------------

class FusedQuery:
    """Input sketch plus its abstractions; distance is fused over all of them"""

    def __init__(self, embeddings: List[np.ndarray], fusion: str = 'mean'):
        if fusion not in FUSION_MODES:
            raise ArgumentError(f"fusion must be one of {FUSION_MODES}")
        self.embeddings = embeddings
        self.fusion = fusion

    def __call__(self, item) -> float:
        d = [distance(e, item) for e in self.embeddings]
        return float(np.mean(d)) if self.fusion == 'mean' else float(np.min(d))

    def distances(self, gallery: RetrievalGallery) -> np.ndarray:
        per_query = np.stack([gallery.distances(e) for e in self.embeddings])
        return per_query.mean(axis=0) if self.fusion == 'mean' else per_query.min(axis=0)


def fuse_query(sketch: VectorSketch, agent: AgentModel, rng: np.random.Generator,
               deltas: Sequence[float] = FUSION_DELTAS, fusion: str = 'mean',
               projection: Optional['LinearProjection'] = None) -> FusedQuery:
    """
    Queries: the sketch itself and one abstraction per delta. An abstraction
    that removes every stroke falls back to the input sketch.
    """
    base = raster_embed(sketch).values
    embeddings = [base]
    for delta in deltas:
        abstracted = abstract(agent, sketch, delta, rng).sketch
        if abstracted.is_empty:
            logger.debug(f"delta={delta}: abstraction removed everything, using the input sketch")
            embeddings.append(base)
        else:
            embeddings.append(raster_embed(abstracted).values)
    if projection is not None:
        embeddings = [projection(e) for e in embeddings]
    return FusedQuery(embeddings, fusion)


# ----------------------------------------------------------------------------
# linear projection trained with the triplet loss
# ----------------------------------------------------------------------------

class LinearProjection:
    def __init__(self, store: ParamStore):
        self.store = store

    @classmethod
    def create(cls, in_dim: int = EMBED_DIM, out_dim: int = 32, seed: int = 0) -> 'LinearProjection':
        rng = np.random.default_rng(seed)
        return cls(ParamStore({'proj.W': uniform_init(rng, (out_dim, in_dim), in_dim)}))

    def __call__(self, v) -> np.ndarray:
        return self.store['proj.W'] @ _values(v)


def _tensor_distance(a: Tensor, b: Tensor) -> Tensor:
    diff = sub(a, b)
    return sqrt(add(sum_(mul(diff, diff)), Tensor(1e-12)))


def train_projection(triplets: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]], out_dim: int = 32,
                     margin: float = 0.2, epochs: int = 20, lr: float = 1e-2,
                     seed: int = 0) -> Tuple[LinearProjection, List[float]]:
    """Adam on the triplet loss of projected (query, positive, negative) embeddings"""
    if not triplets:
        raise ArgumentError("no triplets to train on")
    projection = LinearProjection.create(len(_values(triplets[0][0])), out_dim, seed)
    store, state = projection.store, AdamState()
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        losses = []
        for i in rng.permutation(len(triplets)):
            s, p, n = (Tensor(_values(v)) for v in triplets[i])
            tape = Tape()
            W = tape.watch(store)['proj.W']
            ws, wp, wn = matmul(W, s), matmul(W, p), matmul(W, n)
            loss = relu(add(sub(_tensor_distance(ws, wp), _tensor_distance(ws, wn)), Tensor(margin)))
            losses.append(loss.item())
            if loss.item() > 0:
                store.zero_grads()
                tape.backward(loss, store)
                adam_step(store, state, lr)
        history.append(float(np.mean(losses)))
        logger.debug(f"Projection epoch {epoch + 1}: triplet loss {history[-1]:.4f}")
    return projection, history


def gallery_triplets(gallery: RetrievalGallery, queries: Mapping[str, Sequence[np.ndarray]],
                     rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(query, own gallery item, random other item) for every query of every item"""
    if len(gallery) < 2:
        raise ArgumentError("triplets need at least two gallery items")
    triplets = []
    for item_id, embeddings in queries.items():
        i = gallery.index_of(item_id)
        for e in embeddings:
            j = int(rng.integers(len(gallery) - 1))
            j += j >= i
            triplets.append((_values(e), gallery.matrix[i], gallery.matrix[j]))
    return triplets


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

def evaluate_sbir(gallery: RetrievalGallery, queries: Sequence[VectorSketch], agent: AgentModel,
                  ks: Sequence[int] = (1, 10), fusion: str = 'mean', deltas: Sequence[float] = FUSION_DELTAS,
                  seed: int = 0, projection: Optional[LinearProjection] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per-query ranks (single sketch vs fused) and a Top-K summary.
    A query matches the gallery item whose id equals its key.
    """
    if projection is not None:
        gallery = gallery.projected(projection)
    embed: Callable = (lambda s: projection(raster_embed(s))) if projection is not None else raster_embed

    rows, single, fused, truth = [], [], [], {}
    for j, sketch in enumerate(queries):
        query_id = f"q{j}"
        if sketch.key is None:
            raise ArgumentError(f"query {j} has no key naming its gallery match")
        truth[query_id] = gallery.index_of(sketch.key)
        single_d = gallery.distances(embed(sketch))
        fused_d = fuse_query(sketch, agent, np.random.default_rng([seed, j]), deltas, fusion,
                             projection).distances(gallery)
        single.append((query_id, single_d))
        fused.append((query_id, fused_d))
        rows.append({'query_id': query_id, 'key': sketch.key,
                     'single_rank': match_rank(single_d, truth[query_id]),
                     'fused_rank': match_rank(fused_d, truth[query_id])})

    summary = pd.DataFrame([{'k': k,
                             'single_topk': topk_accuracy(single, truth, k),
                             'fused_topk': topk_accuracy(fused, truth, k)} for k in ks])
    return pd.DataFrame(rows), summary
