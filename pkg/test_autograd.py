#!/usr/bin/env python3
"""
Tests for the autodiff tape, Adam and checkpoints
"""

import numpy as np
import pytest

from src.autograd import (AdamState, ParamStore, Tape, Tensor, adam_step, add, cross_entropy, load_checkpoint,
                          matmul, save_checkpoint, softmax, sum_, tanh)
from src.errors import DimensionError, FormatError
from src.recurrent import cell_params, gru_cell, init_cell


def finite_difference(store: ParamStore, loss_fn, eps: float = 1e-5):
    grads = {}
    for name, value in store.params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + eps
            up = loss_fn()
            value[idx] = old - eps
            down = loss_fn()
            value[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def assert_grads_close(store: ParamStore, numeric, tol: float = 1e-4):
    for name, expected in numeric.items():
        actual = store.grads[name]
        scale = max(np.abs(expected).max(), np.abs(actual).max(), 1e-8)
        assert np.abs(actual - expected).max() / scale <= tol, name


def test_softmax_of_zeros_is_uniform():
    assert np.allclose(softmax(Tensor(np.zeros(3))).value, 1 / 3)


def test_cross_entropy_of_uniform():
    probs = Tensor(np.full(9, 1 / 9))
    assert abs(cross_entropy(probs, 4).item() - np.log(9)) < 1e-12


def test_matmul_matches_loops():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b).value, expected, atol=1e-12)
    with pytest.raises(DimensionError):
        matmul(a, a)


def test_constant_loss_leaves_gradients_zero():
    store = ParamStore({'w': np.ones(3)})
    tape = Tape()
    tape.watch(store)
    tape.backward(Tensor(2.0), store)
    assert np.array_equal(store.grads['w'], np.zeros(3))


def test_sum_of_parameter_has_unit_gradient():
    store = ParamStore({'w': np.arange(4.0)})
    tape = Tape()
    view = tape.watch(store)
    tape.backward(sum_(view['w']), store)
    assert np.array_equal(store.grads['w'], np.ones(4))


def test_gru_mlp_cross_entropy_gradients():
    rng = np.random.default_rng(1)
    store = ParamStore()
    init_cell(store, 'gru', 3, 3, 4, rng)
    store.add('W1', rng.normal(0, 0.5, (5, 4)))
    store.add('b1', rng.normal(0, 0.1, 5))
    store.add('W2', rng.normal(0, 0.5, (3, 5)))
    xs = [rng.normal(size=3) for _ in range(4)]

    def forward(view):
        h = Tensor(np.zeros(4))
        for x in xs:
            h = gru_cell(Tensor(x), h, *cell_params(view, 'gru'))
        hidden = tanh(add(matmul(view['W1'], h), view['b1']))
        return cross_entropy(softmax(matmul(view['W2'], hidden)), 2)

    assert store.num_parameters() <= 200
    tape = Tape()
    loss = forward(tape.watch(store))
    store.zero_grads()
    tape.backward(loss, store)
    numeric = finite_difference(store, lambda: forward(store.view()).item())
    assert_grads_close(store, numeric)


def test_adam_zero_gradient_keeps_parameters():
    store = ParamStore({'w': np.array([1.0, -2.0])})
    adam_step(store, AdamState(), 0.1)
    assert np.array_equal(store['w'], [1.0, -2.0])


def test_adam_first_step_moves_by_lr_against_gradient():
    store = ParamStore({'w': np.array([1.0, 1.0])})
    store.grads['w'][:] = [3.0, -0.5]
    adam_step(store, AdamState(), 0.01)
    assert np.allclose(store['w'], [0.99, 1.01], atol=1e-6)


def test_adam_minimizes_square():
    store = ParamStore({'w': np.array([1.0])})
    state = AdamState()
    for _ in range(200):
        store.grads['w'][:] = 2 * store['w']
        adam_step(store, state, 0.1)
    assert abs(store['w'][0]) < 0.1


def test_checkpoint_round_trip(tmp_path):
    store = ParamStore({'a.W': np.random.default_rng(2).normal(size=(2, 3)), 'a.b': np.zeros(2)})
    path = tmp_path / 'model.ckpt'
    save_checkpoint(path, store, 'classifier', {'K': 2}, {'lr': 0.1})
    loaded, meta = load_checkpoint(path, kind='classifier')
    assert loaded.names() == ['a.W', 'a.b']
    assert np.array_equal(loaded['a.W'], store['a.W'])
    assert meta['architecture'] == {'K': 2}
    assert meta['config'] == {'lr': 0.1}


def test_checkpoint_kind_and_garbage_are_rejected(tmp_path):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(path, ParamStore({'w': np.zeros(1)}), 'agent', {})
    with pytest.raises(FormatError):
        load_checkpoint(path, kind='classifier')
    junk = tmp_path / 'junk.ckpt'
    junk.write_bytes(b'not an archive')
    with pytest.raises(FormatError):
        load_checkpoint(junk)
