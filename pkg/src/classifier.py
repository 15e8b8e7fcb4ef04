#!/usr/bin/env python3
"""
Sketch Classifier
Stacked LSTM over stroke-3 points with a softmax output layer.
Supplies class probabilities and the ground-truth rank used by the rewards.
"""

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .autograd import (AdamState, ParamStore, Tape, Tensor, adam_step, cross_entropy, load_checkpoint,
                       matmul, add, save_checkpoint, softmax, uniform_init)
from .corpus import Corpus
from .errors import ArgumentError, CorpusError, DivergenceError
from .recurrent import cell_params, init_cell, stacked_lstm
from .sketch import VectorSketch

logger = logging.getLogger(__name__)

INPUT_SIZE = 3
CHECKPOINT_KIND = 'classifier'


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    predicted: int
    degenerate: bool = False

    def is_correct(self, label: Optional[int]) -> bool:
        """An empty sketch is never recognized"""
        return not self.degenerate and self.predicted == label


@dataclass(frozen=True)
class RankResult:
    probs: np.ndarray
    predicted: int
    rank: int


@dataclass
class ClassifierConfig:
    hidden: int = 64
    layers: int = 3
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0

    def validate(self):
        if self.hidden < 1 or self.layers < 1:
            raise ArgumentError("classifier needs hidden >= 1 and layers >= 1")
        if self.epochs < 0:
            raise ArgumentError("epochs must be >= 0")
        if self.lr < 0:
            raise ArgumentError("learning rate must be >= 0")


class ClassifierModel:
    """Parameters lstm.<k>.{W,U,b} per layer and out.{W,b}"""

    def __init__(self, store: ParamStore, K: int, hidden: int, layers: int):
        if K < 2:
            raise ArgumentError(f"classifier needs K >= 2, got {K}")
        if layers < 1:
            raise ArgumentError("classifier needs at least one LSTM layer")
        self.store = store
        self.K = K
        self.hidden = hidden
        self.layers = layers

    @classmethod
    def create(cls, K: int, hidden: int = 64, layers: int = 3, seed: int = 0,
               zero_output: bool = False) -> 'ClassifierModel':
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for k in range(layers):
            init_cell(store, f"lstm.{k}", 4, INPUT_SIZE if k == 0 else hidden, hidden, rng)
        if zero_output:
            store.add('out.W', np.zeros((K, hidden)))
            store.add('out.b', np.zeros(K))
        else:
            store.add('out.W', uniform_init(rng, (K, hidden), hidden))
            store.add('out.b', np.zeros(K))
        return cls(store, K, hidden, layers)

    @property
    def architecture(self) -> dict:
        return {'K': self.K, 'hidden': self.hidden, 'layers': self.layers, 'input_size': INPUT_SIZE}

    def forward(self, view: dict, sketch: VectorSketch) -> Tensor:
        """Class probabilities as a tensor (taped when view comes from a Tape)"""
        xs = [Tensor(row) for row in sketch.points]
        layers = [cell_params(view, f"lstm.{k}") for k in range(self.layers)]
        h = stacked_lstm(xs, layers)
        return softmax(add(matmul(view['out.W'], h), view['out.b']))

    def snapshot(self) -> 'ClassifierModel':
        return ClassifierModel(self.store.copy(), self.K, self.hidden, self.layers)


def predict(model: ClassifierModel, sketch: VectorSketch) -> Prediction:
    """Softmax over the final hidden state; uniform for an empty sketch"""
    if sketch.is_empty:
        return Prediction(np.full(model.K, 1.0 / model.K), 0, degenerate=True)
    probs = model.forward(model.store.view(), sketch).value
    return Prediction(probs, int(np.argmax(probs)))


def rank_of(probs: np.ndarray, label: int) -> int:
    """
    Reverse rank of the label: K when it is the top class, 1 when last.
    Ties are ordered by ascending class index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    K = len(probs)
    if not 0 <= label < K:
        raise ArgumentError(f"label {label} outside [0, {K - 1}]")
    order = np.argsort(-probs, kind='stable')
    position = int(np.flatnonzero(order == label)[0]) + 1
    return K - position + 1


def rank(model: ClassifierModel, sketch: VectorSketch, label: int) -> RankResult:
    prediction = predict(model, sketch)
    C = rank_of(prediction.probs, label)
    if prediction.degenerate:
        C = 1  # nothing left to recognize: the true class ranks last
    return RankResult(prediction.probs, prediction.predicted, C)


def accuracy(model: ClassifierModel, sketches: Sequence[VectorSketch]) -> float:
    if not sketches:
        return 0.0
    hits = sum(predict(model, s).is_correct(s.label) for s in sketches)
    return hits / len(sketches)


@dataclass
class ClassifierTrainingResult:
    model: ClassifierModel
    history: pd.DataFrame  # epoch, mean_loss, test_accuracy
    best_epoch: int
    best_accuracy: float


def train_classifier(corpus: Corpus, config: ClassifierConfig,
                     model: Optional[ClassifierModel] = None) -> ClassifierTrainingResult:
    """
    Cross-entropy training with one Adam step per sketch.

    Epoch 0 is the untrained model; the returned model is the copy with the
    best test accuracy (earliest epoch on ties).
    """
    config.validate()
    if corpus.K < 2:
        raise CorpusError("classifier training needs at least two classes")
    train, test = corpus.train, corpus.test
    if not train or not test:
        raise CorpusError("classifier training needs non-empty train and test splits")

    if model is None:
        model = ClassifierModel.create(corpus.K, config.hidden, config.layers, seed=config.seed)
    store = model.store
    state = AdamState()
    rng = np.random.default_rng(config.seed)

    rows = [{'epoch': 0, 'mean_loss': float('nan'), 'test_accuracy': accuracy(model, test)}]
    best = model.snapshot()
    best_epoch, best_accuracy = 0, rows[0]['test_accuracy']
    logger.info(f"Untrained test accuracy: {best_accuracy:.3f}")

    for epoch in range(1, config.epochs + 1):
        losses: List[float] = []
        for i in rng.permutation(len(train)):
            sketch = train[i]
            if sketch.is_empty:
                continue
            tape = Tape()
            view = tape.watch(store)
            loss = cross_entropy(model.forward(view, sketch), sketch.label)
            value = loss.item()
            if not np.isfinite(value):
                logger.error(f"Classifier loss diverged at epoch {epoch} (loss={value})")
                raise DivergenceError(f"non-finite classifier loss at epoch {epoch}")
            store.zero_grads()
            tape.backward(loss, store)
            adam_step(store, state, config.lr)
            losses.append(value)

        acc = accuracy(model, test)
        rows.append({'epoch': epoch, 'mean_loss': float(np.mean(losses)), 'test_accuracy': acc})
        logger.info(f"Epoch {epoch}/{config.epochs}: loss={np.mean(losses):.4f} test_accuracy={acc:.3f}")
        if acc > best_accuracy:
            best, best_epoch, best_accuracy = model.snapshot(), epoch, acc

    return ClassifierTrainingResult(best, pd.DataFrame(rows), best_epoch, best_accuracy)


def save_classifier(path, model: ClassifierModel, config: Optional[ClassifierConfig] = None) -> None:
    save_checkpoint(path, model.store, CHECKPOINT_KIND, model.architecture,
                    asdict(config) if config is not None else None)


def load_classifier(path) -> ClassifierModel:
    store, meta = load_checkpoint(path, kind=CHECKPOINT_KIND)
    arch = meta['architecture']
    return ClassifierModel(store, int(arch['K']), int(arch['hidden']), int(arch['layers']))
