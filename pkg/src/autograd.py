#!/usr/bin/env python3
"""
Reverse-Mode Autodiff
Dense float64 tensors, a recording tape, parameter store, Adam and checkpoints.

Every op builds its result eagerly. When at least one operand belongs to a
Tape the result is recorded on it together with a closure mapping the
output gradient to operand gradients; constants (no tape) are never
recorded. Nodes are appended in creation order, which is a topological
order, so backward walks the tape in reverse exactly once.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, DimensionError, FormatError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'sketchlab-ckpt'
CHECKPOINT_VERSION = 1


class Tensor:
    __slots__ = ('value', 'grad', 'parents', 'backward_fn', 'tape', 'param_name')

    def __init__(self, value, parents: Tuple['Tensor', ...] = (), backward_fn: Optional[Callable] = None,
                 tape: Optional['Tape'] = None, param_name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.tape = tape
        self.param_name = param_name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        where = 'taped' if self.tape is not None else 'const'
        return f"Tensor(shape={self.shape}, {where})"


class Tape:
    """Records operations for one backward pass"""

    def __init__(self):
        self.nodes: List[Tensor] = []

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def watch(self, store: 'ParamStore') -> Dict[str, Tensor]:
        """Leaf tensors for every parameter, recorded on this tape"""
        view = {}
        for name, value in store.params.items():
            leaf = Tensor(value, tape=self, param_name=name)
            self.record(leaf)
            view[name] = leaf
        return view

    def backward(self, loss: Tensor, store: Optional['ParamStore'] = None) -> None:
        """Accumulate d(loss)/d(param) into store.grads"""
        if loss.value.size != 1:
            raise ArgumentError(f"loss must be a scalar, got shape {loss.shape}")
        if loss.tape is None:
            return  # constant loss: nothing depends on a parameter
        if loss.tape is not self:
            raise ArgumentError("loss was not produced on this tape")

        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if parent.tape is None or g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

        if store is not None:
            for node in self.nodes:
                if node.param_name is not None and node.grad is not None:
                    store.grads[node.param_name] += node.grad


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(value, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Result tensor, recorded when any parent is taped"""
    tape = next((p.tape for p in parents if p.tape is not None), None)
    if tape is None:
        return Tensor(value)
    node = Tensor(value, tuple(parents), backward_fn, tape)
    tape.record(node)
    return node


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ----------------------------------------------------------------------------
# forward ops
# ----------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        ga = np.outer(g, bv) if bv.ndim == 1 else g @ bv.T
        return ga, av.T @ g

    return make_node(av @ bv, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, 'add')
    return make_node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, 'sub')
    return make_node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, 'mul')
    av, bv = a.value, b.value
    return make_node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.value * c, (a,), lambda g: (g * c,))


def concat(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if any(p.value.ndim != 1 for p in parts):
        raise DimensionError("concat expects 1-D tensors")
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_node(np.concatenate([p.value for p in parts]), parts, backward)


def slice_(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    n = a.shape[0]

    def backward(g):
        full = np.zeros(n)
        full[start:stop] = g
        return (full,)

    return make_node(a.value[start:stop], (a,), backward)


def pick(a, index: int) -> Tensor:
    """Scalar element of a vector"""
    a = as_tensor(a)
    n = a.shape[0]

    def backward(g):
        full = np.zeros(n)
        full[index] = g
        return (full,)

    return make_node(a.value[index], (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return make_node(out, (a,), lambda g: (g * (1.0 - out ** 2),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.value > 0).astype(np.float64)
    return make_node(a.value * mask, (a,), lambda g: (g * mask,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return make_node(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


def sum_(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return make_node(np.sum(a.value), (a,), lambda g: (np.full(shape, float(g)),))


def softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 1:
        raise DimensionError("softmax expects a vector")
    e = np.exp(a.value - a.value.max())
    out = e / e.sum()
    return make_node(out, (a,), lambda g: (out * (g - np.dot(g, out)),))


def cross_entropy(probs, label: int) -> Tensor:
    """-log p[label] for a probability vector"""
    probs = as_tensor(probs)
    p = probs.value
    if p.ndim != 1:
        raise DimensionError("cross_entropy expects a probability vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ArgumentError(f"cross_entropy input sums to {p.sum():.8f}, not 1")
    if not 0 <= label < len(p):
        raise ArgumentError(f"label {label} outside [0, {len(p) - 1}]")

    def backward(g):
        full = np.zeros_like(p)
        full[label] = -g / p[label]
        return (full,)

    return make_node(-np.log(p[label]), (probs,), backward)


def total(terms: Iterable[Tensor]) -> Tensor:
    """Sum of scalar tensors as a single node"""
    terms = [as_tensor(t) for t in terms]
    return make_node(sum(float(t.value) for t in terms), terms, lambda g: tuple(g for _ in terms))


# ----------------------------------------------------------------------------
# parameters and optimizer
# ----------------------------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named parameter arrays with matching gradient accumulators"""

    def __init__(self, params: Optional[Dict[str, np.ndarray]] = None):
        self.params: 'OrderedDict[str, np.ndarray]' = OrderedDict()
        self.grads: 'OrderedDict[str, np.ndarray]' = OrderedDict()
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def view(self) -> Dict[str, Tensor]:
        """Constant tensors for inference (nothing is recorded)"""
        return {name: Tensor(value) for name, value in self.params.items()}

    def copy(self) -> 'ParamStore':
        return ParamStore({name: value.copy() for name, value in self.params.items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def grads_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads.values())


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParamStore, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update from store.grads, in place"""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for name, param in store.params.items():
        g = store.grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

def save_checkpoint(path, store: ParamStore, kind: str, architecture: dict,
                    config: Optional[dict] = None) -> None:
    """
    Write an .npz archive: '__meta__' holds JSON (format, version, kind,
    param_names, architecture, config); each parameter is 'param/<name>'
    stored as little-endian float64.
    """
    meta = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'kind': kind,
        'param_names': store.names(),
        'architecture': architecture,
        'config': config or {},
    }
    arrays = {f"param/{name}": value.astype('<f8') for name, value in store.params.items()}
    arrays['__meta__'] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    logger.info(f"Saved {kind} checkpoint ({store.num_parameters()} parameters) to {path}")


def load_checkpoint(path, kind: Optional[str] = None) -> Tuple[ParamStore, dict]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive['__meta__']))
            if meta.get('format') != CHECKPOINT_FORMAT:
                raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} file")
            if meta.get('version') != CHECKPOINT_VERSION:
                raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            if kind is not None and meta.get('kind') != kind:
                raise FormatError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')}")
            store = ParamStore({name: archive[f"param/{name}"] for name in meta['param_names']})
    except (KeyError, ValueError, OSError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: unreadable checkpoint ({e})") from e
    return store, meta
