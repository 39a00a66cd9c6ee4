"""TT-LSTM cell with the four gate maps fused into one TT layer.

All gates read the concatenation ``[h_{t-1}, x_t]`` (hidden state first) and
the fused output is laid out in gate order (i, f, o, c~), ``H`` columns each.
Arrays are batched as ``(B, ...)`` per step and ``(T, B, ...)`` per sequence;
unbatched inputs are accepted and returned unbatched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .tt_core import (TTLinear, TTShape, TTShapeError, as_real, factorize, param_count, tt_from_dense,
                      tt_random_init, ttl_forward, weight_param_count)
from .tt_grad import ContractError, ttl_backward

GATES = ("i", "f", "o", "c")


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, H: int, batch: Optional[int] = None) -> "LSTMState":
        shape = (H,) if batch is None else (batch, H)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class TTLSTMCell:
    H: int
    D: int
    gates_ttl: TTLinear
    bias: np.ndarray  # length 4H, blocks b_i, b_f, b_o, b_c

    def __post_init__(self):
        if self.gates_ttl.input_dim != self.H + self.D:
            raise TTShapeError(f"gate map input is {self.gates_ttl.input_dim}, expected H+D={self.H + self.D}")
        if self.gates_ttl.output_dim != 4 * self.H or self.gates_ttl.shape.gate_fusion != 4:
            raise TTShapeError("gate map must be a 4-way fused TT layer with 4H outputs")
        if self.gates_ttl.bias is not None:
            raise TTShapeError("gate biases live on the cell, not on the TT layer")
        self.bias = as_real(self.bias)
        if self.bias.shape != (4 * self.H,):
            raise TTShapeError(f"gate bias has shape {self.bias.shape}, expected ({4 * self.H},)")

    def parameters(self) -> list:
        return list(self.gates_ttl.cores) + [self.bias]

    def gate_bias(self, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        return self.bias[k * self.H:(k + 1) * self.H]

    def copy(self) -> "TTLSTMCell":
        return TTLSTMCell(self.H, self.D, self.gates_ttl.copy(), self.bias.copy())

    def astype(self, dtype) -> "TTLSTMCell":
        return TTLSTMCell(self.H, self.D, self.gates_ttl.astype(dtype), self.bias.astype(dtype))


def make_cell(D: int, H: int, input_factors: Sequence[int], hidden_factors: Sequence[int],
              rank, seed: int = 0, forget_bias: float = 1.0) -> TTLSTMCell:
    """Randomly initialized cell.  ``input_factors`` factor ``H + D``."""
    if math.prod(input_factors) != H + D:
        raise TTShapeError(f"input factors {tuple(input_factors)} do not multiply to H+D={H + D}")
    if math.prod(hidden_factors) != H:
        raise TTShapeError(f"hidden factors {tuple(hidden_factors)} do not multiply to H={H}")
    if isinstance(rank, int):
        shape = TTShape.uniform_rank(input_factors, hidden_factors, rank, 4)
    else:
        shape = TTShape(tuple(input_factors), tuple(hidden_factors), tuple(rank), 4)
    ttl = tt_random_init(shape, seed, bias=False)
    bias = np.zeros(4 * H)
    bias[H:2 * H] = forget_bias
    return TTLSTMCell(H, D, ttl, bias)


def _batch_step_inputs(cell, x_t, state):
    x = as_real(x_t)
    single = x.ndim == 1
    xb = x[None] if single else x
    h = as_real(state.h)
    c = as_real(state.c)
    hb = h[None] if h.ndim == 1 else h
    cb = c[None] if c.ndim == 1 else c
    if xb.shape[-1] != cell.D or hb.shape[-1] != cell.H or cb.shape != hb.shape \
            or hb.shape[0] != xb.shape[0]:
        raise TTShapeError(f"step inputs x{x.shape} h{h.shape} c{c.shape} do not fit H={cell.H}, D={cell.D}")
    return xb, hb, cb, single


def _step(cell, xb, hb, cb):
    z = np.concatenate([hb, xb], axis=1)
    pre, partials = ttl_forward(cell.gates_ttl, z, return_cache=True)
    pre = np.ascontiguousarray(pre + cell.bias)
    gates, c, tc, h = kernels.lstm_pointwise_forward(pre, np.ascontiguousarray(cb))
    if not np.all(np.isfinite(c)):
        raise FloatingPointError("LSTM cell state became non-finite")
    return h, c, (partials, gates, cb, tc)


def lstm_step(cell: TTLSTMCell, x_t, state: LSTMState):
    """One recurrence step.  Returns the new state and the step cache."""
    xb, hb, cb, single = _batch_step_inputs(cell, x_t, state)
    h, c, cache = _step(cell, xb, hb, cb)
    if single:
        return LSTMState(h[0], c[0]), cache
    return LSTMState(h, c), cache


@dataclass
class SequenceCache:
    cell_id: int
    xs_shape: tuple
    steps: list
    single: bool

    def __len__(self):
        return len(self.steps)


def lstm_sequence_forward(cell: TTLSTMCell, xs, state: Optional[LSTMState] = None):
    """Run the cell over ``xs`` of shape ``(T, D)`` or ``(T, B, D)`` from a zero state."""
    xs = as_real(xs)
    single = xs.ndim == 2
    xsb = xs[:, None, :] if single else xs
    if xsb.ndim != 3 or xsb.shape[0] < 1:
        raise ValueError("sequence must contain at least one step")
    if xsb.shape[2] != cell.D:
        raise TTShapeError(f"sequence width {xsb.shape[2]} does not match D={cell.D}")
    T, B, _ = xsb.shape
    if state is None:
        hb, cb = np.zeros((B, cell.H)), np.zeros((B, cell.H))
    else:
        hb = np.atleast_2d(as_real(state.h))
        cb = np.atleast_2d(as_real(state.c))
    hs = np.empty((T, B, cell.H), dtype=np.result_type(xsb, cell.bias))
    steps = []
    for t in range(T):
        hb, cb, cache = _step(cell, xsb[t], hb, cb)
        hs[t] = hb
        steps.append(cache)
    cache = SequenceCache(id(cell), xsb.shape, steps, single)
    return (hs[:, 0, :] if single else hs), cache


@dataclass
class CellGradients:
    core_grads: list
    bias_grad: np.ndarray
    input_grad: np.ndarray

    def parameter_grads(self) -> list:
        return list(self.core_grads) + [self.bias_grad]


def lstm_sequence_backward(cell: TTLSTMCell, cache: SequenceCache, dhs,
                           truncation: int = 0) -> CellGradients:
    """Backpropagation through time.

    ``truncation > 0`` cuts the recurrent gradient at every multiple of
    ``truncation`` steps (block truncation); 0 keeps the full sequence.
    """
    if not isinstance(cache, SequenceCache) or cache.cell_id != id(cell):
        raise ContractError("sequence cache was not produced by this cell")
    dhs = as_real(dhs)
    dhsb = dhs[:, None, :] if dhs.ndim == 2 else dhs
    T, B, _ = cache.xs_shape
    if dhsb.shape != (T, B, cell.H):
        raise ContractError(f"upstream gradient {dhs.shape} does not match the cached sequence")
    core_grads = [np.zeros_like(c) for c in cell.gates_ttl.cores]
    bias_grad = np.zeros(4 * cell.H)
    dxs = np.empty((T, B, cell.D), dtype=np.result_type(dhsb, cell.bias))
    dh_next = np.zeros((B, cell.H))
    dc_next = np.zeros((B, cell.H))
    for t in range(T - 1, -1, -1):
        partials, gates, c_prev, tc = cache.steps[t]
        dh = np.ascontiguousarray(dhsb[t] + dh_next)
        dpre, dc_prev = kernels.lstm_pointwise_backward(gates, c_prev, tc, dh, dc_next)
        bias_grad += dpre.sum(axis=0)
        g = ttl_backward(cell.gates_ttl, partials, dpre)
        for acc, gk in zip(core_grads, g.core_grads):
            acc += gk
        dh_next = g.input_grad[:, :cell.H]
        dxs[t] = g.input_grad[:, cell.H:]
        dc_next = dc_prev
        if truncation and t % truncation == 0:
            dh_next = np.zeros_like(dh_next)
            dc_next = np.zeros_like(dc_next)
    return CellGradients(core_grads, bias_grad, dxs[:, 0, :] if cache.single else dxs)


@dataclass
class DenseLSTM:
    """Uncompressed LSTM; ``W[g]`` is ``H x (H+D)`` acting on ``[h, x]``."""

    W: np.ndarray  # (4, H, H+D)
    b: np.ndarray  # (4, H)

    @property
    def H(self) -> int:
        return self.W.shape[1]

    @property
    def D(self) -> int:
        return self.W.shape[2] - self.W.shape[1]

    def param_count(self) -> int:
        return self.W.size + self.b.size

    def fused_matrix(self) -> np.ndarray:
        """The ``(H+D) x 4H`` input-first matrix with gate column blocks."""
        return np.concatenate([self.W[g].T for g in range(4)], axis=1)

    @classmethod
    def from_cell(cls, cell: TTLSTMCell) -> "DenseLSTM":
        from .tt_core import tt_reconstruct
        Wf = tt_reconstruct(cell.gates_ttl)
        H = cell.H
        W = np.stack([Wf[:, g * H:(g + 1) * H].T for g in range(4)])
        return cls(W, cell.bias.reshape(4, H).copy())

    def to_cell(self, input_factors, hidden_factors) -> TTLSTMCell:
        ttl = tt_from_dense(self.fused_matrix(), input_factors, hidden_factors, gate_fusion=4)
        return TTLSTMCell(self.H, self.D, ttl, self.b.reshape(-1).copy())


def dense_lstm_param_count(H: int, D: int) -> int:
    return 4 * H * (H + D) + 4 * H


def dense_lstm_step(weights: DenseLSTM, x_t, state: LSTMState) -> LSTMState:
    H, D = weights.H, weights.D
    x = np.asarray(x_t, dtype=np.float64)
    if x.shape[-1] != D or np.shape(state.h)[-1] != H:
        raise TTShapeError(f"x{x.shape} / h{np.shape(state.h)} do not fit H={H}, D={D}")
    z = np.concatenate([state.h, x], axis=-1)
    pre = [z @ weights.W[g].T + weights.b[g] for g in range(4)]
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))  # noqa: E731
    i, f, o, g = sig(pre[0]), sig(pre[1]), sig(pre[2]), np.tanh(pre[3])
    c = i * g + f * state.c
    return LSTMState(o * np.tanh(c), c)


def table1_input_factors(cell: TTLSTMCell) -> list:
    """Factors of the layer-input width ``D`` alone, used by the table1 count.

    Keeps the leading factors of the concatenated factorization when they
    divide ``D`` and absorbs the remainder into the last factor; otherwise
    falls back to the most balanced factorization.
    """
    p = cell.gates_ttl.shape.p
    lead = math.prod(p[:-1])
    if cell.D % lead == 0:
        return list(p[:-1]) + [cell.D // lead]
    return factorize(cell.D, len(p), allow_ones=True)


def table1_shape(cell: TTLSTMCell, input_factors: Optional[Sequence[int]] = None) -> TTShape:
    p = table1_input_factors(cell) if input_factors is None else list(input_factors)
    s = cell.gates_ttl.shape
    return TTShape(tuple(p), s.q, s.r, 4)


def cell_param_count(cell: TTLSTMCell, convention: str = "model",
                     input_factors: Optional[Sequence[int]] = None) -> int:
    """Stored parameters (``model``) or the input-to-hidden-only count (``table1``)."""
    if convention == "model":
        return weight_param_count(cell.gates_ttl.shape) + 4 * cell.H
    if convention == "table1":
        return param_count(table1_shape(cell, input_factors), include_bias=True)
    raise ValueError(f"unknown counting convention {convention!r}")
