"""NumPy implementations of the inner-loop kernels.

Used when the compiled extension is unavailable or disabled with
``TTNET_PURE_PYTHON=1``.  Signatures and results match ``_kernels.pyx``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_pointwise_forward(pre, c_prev):
    """Gate nonlinearities and state update for one step.

    ``pre`` is ``(B, 4H)`` in gate order (i, f, o, c~).  Returns the activated
    gates, the new cell state, ``tanh`` of it and the new hidden state.
    """
    H = c_prev.shape[1]
    gates = np.empty_like(pre)
    gates[:, : 3 * H] = sigmoid(pre[:, : 3 * H])
    gates[:, 3 * H:] = np.tanh(pre[:, 3 * H:])
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    c = i * g + f * c_prev
    tc = np.tanh(c)
    h = o * tc
    return gates, c, tc, h


def lstm_pointwise_backward(gates, c_prev, tc, dh, dc):
    """Gradients w.r.t. the gate pre-activations and the previous cell state."""
    H = c_prev.shape[1]
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    dct = dc + dh * o * (1.0 - tc * tc)
    dpre = np.empty_like(gates)
    dpre[:, :H] = dct * g * i * (1.0 - i)
    dpre[:, H:2 * H] = dct * c_prev * f * (1.0 - f)
    dpre[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
    dpre[:, 3 * H:] = dct * i * (1.0 - g * g)
    return dpre, dct * f


def frame_energy(signals, starts, win):
    """Sum of squares of ``signals[:, s:s+win]`` for each start ``s``.

    Starts may be negative or run past the end; out-of-range samples count
    as zero.  Returns ``(channels, len(starts))``.
    """
    signals = np.ascontiguousarray(signals, dtype=np.float64)
    C, N = signals.shape
    starts = np.asarray(starts, dtype=np.int64)
    lo = int(min(0, starts.min())) if starts.size else 0
    hi = int(max(N, starts.max() + win)) if starts.size else N
    padded = np.zeros((C, hi - lo))
    padded[:, -lo: -lo + N] = signals * signals
    windows = sliding_window_view(padded, win, axis=1)
    return windows[:, starts - lo, :].sum(axis=-1)


def box_mean(grid, half_rows, half_cols):
    """Mean over a ``(2a+1) x (2b+1)`` neighbourhood, truncated at the edges."""
    grid = np.asarray(grid, dtype=np.float64)
    R, C = grid.shape
    out = np.empty_like(grid)
    for r in range(R):
        r0, r1 = max(0, r - half_rows), min(R, r + half_rows + 1)
        band = grid[r0:r1].sum(axis=0)
        cols = np.concatenate(([0.0], np.cumsum(band)))
        c0 = np.maximum(0, np.arange(C) - half_cols)
        c1 = np.minimum(C, np.arange(C) + half_cols + 1)
        out[r] = (cols[c1] - cols[c0]) / ((r1 - r0) * (c1 - c0))
    return out
