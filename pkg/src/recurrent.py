#!/usr/bin/env python3
"""
Recurrent Cells
GRU, bidirectional GRU, LSTM and stacked LSTM on top of the autodiff tape.

Gate conventions:
    GRU   z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
          n = tanh(Wn x + Un (r*h) + bn), h' = (1 - z) * h + z * n
    LSTM  i, f, o = sig(.), g = tanh(.), c' = f * c + i * g, h' = o * tanh(c')

Weights are stacked row-wise in gate order (z, r, n) and (i, f, g, o).
Each cell step is one tape node with a hand-written backward.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np

from .autograd import ParamStore, Tensor, as_tensor, concat, make_node, slice_, uniform_init
from .errors import DimensionError

logger = logging.getLogger(__name__)

CellParams = Tuple[Tensor, Tensor, Tensor]


def _sig(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-a))


def _check_cell(name: str, gates: int, x: Tensor, h: Tensor, W: Tensor, U: Tensor, b: Tensor) -> int:
    H = h.shape[0]
    D = x.shape[0]
    if W.shape != (gates * H, D) or U.shape != (gates * H, H) or b.shape != (gates * H,):
        raise DimensionError(
            f"{name}: x{x.shape} h{h.shape} do not match W{W.shape} U{U.shape} b{b.shape}")
    return H


def init_cell(store: ParamStore, prefix: str, gates: int, input_size: int, hidden: int,
              rng: np.random.Generator) -> None:
    store.add(f"{prefix}.W", uniform_init(rng, (gates * hidden, input_size), input_size))
    store.add(f"{prefix}.U", uniform_init(rng, (gates * hidden, hidden), hidden))
    store.add(f"{prefix}.b", uniform_init(rng, (gates * hidden,), hidden))


def cell_params(view: dict, prefix: str) -> CellParams:
    return view[f"{prefix}.W"], view[f"{prefix}.U"], view[f"{prefix}.b"]


def gru_cell(x, h, W, U, b) -> Tensor:
    x, h, W, U, b = (as_tensor(t) for t in (x, h, W, U, b))
    H = _check_cell('gru_cell', 3, x, h, W, U, b)
    xv, hv, Wv, Uv = x.value, h.value, W.value, U.value

    ax = Wv @ xv + b.value
    uzr = Uv[:2 * H] @ hv
    z = _sig(ax[:H] + uzr[:H])
    r = _sig(ax[H:2 * H] + uzr[H:])
    rh = r * hv
    n = np.tanh(ax[2 * H:] + Uv[2 * H:] @ rh)
    out = (1.0 - z) * hv + z * n

    def backward(g):
        dz = g * (n - hv)
        dan = g * z * (1.0 - n * n)
        drh = Uv[2 * H:].T @ dan
        daz = dz * z * (1.0 - z)
        dar = drh * hv * r * (1.0 - r)
        dpre = np.concatenate([daz, dar, dan])
        dU = np.empty_like(Uv)
        dU[:H] = np.outer(daz, hv)
        dU[H:2 * H] = np.outer(dar, hv)
        dU[2 * H:] = np.outer(dan, rh)
        dh = g * (1.0 - z) + drh * r + Uv[:H].T @ daz + Uv[H:2 * H].T @ dar
        return Wv.T @ dpre, dh, np.outer(dpre, xv), dU, dpre

    return make_node(out, (x, h, W, U, b), backward)


def run_gru(xs: Sequence[Tensor], params: CellParams) -> List[Tensor]:
    W = params[0]
    h = Tensor(np.zeros(W.shape[0] // 3))
    outputs = []
    for x in xs:
        h = gru_cell(x, h, *params)
        outputs.append(h)
    return outputs


def bidirectional_gru(xs: Sequence[Tensor], forward: CellParams, backward: CellParams) -> List[Tensor]:
    """Per-step concatenation of forward and backward GRU states (width 2H)"""
    if not xs:
        raise DimensionError("bidirectional_gru needs a non-empty sequence")
    fw = run_gru(xs, forward)
    bw = run_gru(list(reversed(xs)), backward)[::-1]
    return [concat([f, b]) for f, b in zip(fw, bw)]


def lstm_cell(x, h, c, W, U, b) -> Tuple[Tensor, Tensor]:
    x, h, c, W, U, b = (as_tensor(t) for t in (x, h, c, W, U, b))
    H = _check_cell('lstm_cell', 4, x, h, W, U, b)
    if c.shape != h.shape:
        raise DimensionError(f"lstm_cell: cell state {c.shape} vs hidden {h.shape}")
    xv, hv, cv, Wv, Uv = x.value, h.value, c.value, W.value, U.value

    pre = Wv @ xv + Uv @ hv + b.value
    i = _sig(pre[:H])
    f = _sig(pre[H:2 * H])
    gg = np.tanh(pre[2 * H:3 * H])
    o = _sig(pre[3 * H:])
    c_next = f * cv + i * gg
    tc = np.tanh(c_next)
    h_next = o * tc

    def backward(gs):
        gh, gc = gs[:H], gs[H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * cv * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ])
        return Wv.T @ dpre, Uv.T @ dpre, dc * f, np.outer(dpre, xv), np.outer(dpre, hv), dpre

    state = make_node(np.concatenate([h_next, c_next]), (x, h, c, W, U, b), backward)
    return slice_(state, 0, H), slice_(state, H, 2 * H)


def stacked_lstm(xs: Sequence[Tensor], layers: Sequence[CellParams]) -> Tensor:
    """Runs each layer over the sequence; returns the last layer's final hidden"""
    if not xs:
        raise DimensionError("stacked_lstm needs a non-empty sequence")
    seq = list(xs)
    h = None
    for W, U, b in layers:
        H = U.shape[1]
        h, c = Tensor(np.zeros(H)), Tensor(np.zeros(H))
        outputs = []
        for x in seq:
            h, c = lstm_cell(x, h, c, W, U, b)
            outputs.append(h)
        seq = outputs
    return h
