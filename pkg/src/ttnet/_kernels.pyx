# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner-loop kernels.  See ``_kernels_py`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double a) nogil:
    cdef double e
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


def lstm_pointwise_forward(double[:, ::1] pre, double[:, ::1] c_prev):
    cdef Py_ssize_t B = c_prev.shape[0], H = c_prev.shape[1]
    cdef Py_ssize_t b, k
    cdef double i, f, o, g, c
    gates_a = np.empty((B, 4 * H))
    c_a = np.empty((B, H))
    tc_a = np.empty((B, H))
    h_a = np.empty((B, H))
    cdef double[:, ::1] gates = gates_a, cn = c_a, tc = tc_a, h = h_a
    with nogil:
        for b in range(B):
            for k in range(H):
                i = _sigmoid(pre[b, k])
                f = _sigmoid(pre[b, H + k])
                o = _sigmoid(pre[b, 2 * H + k])
                g = tanh(pre[b, 3 * H + k])
                gates[b, k] = i
                gates[b, H + k] = f
                gates[b, 2 * H + k] = o
                gates[b, 3 * H + k] = g
                c = i * g + f * c_prev[b, k]
                cn[b, k] = c
                tc[b, k] = tanh(c)
                h[b, k] = o * tc[b, k]
    return gates_a, c_a, tc_a, h_a


def lstm_pointwise_backward(double[:, ::1] gates, double[:, ::1] c_prev, double[:, ::1] tc,
                            double[:, ::1] dh, double[:, ::1] dc):
    cdef Py_ssize_t B = c_prev.shape[0], H = c_prev.shape[1]
    cdef Py_ssize_t b, k
    cdef double i, f, o, g, t, dct
    dpre_a = np.empty((B, 4 * H))
    dcp_a = np.empty((B, H))
    cdef double[:, ::1] dpre = dpre_a, dcp = dcp_a
    with nogil:
        for b in range(B):
            for k in range(H):
                i = gates[b, k]
                f = gates[b, H + k]
                o = gates[b, 2 * H + k]
                g = gates[b, 3 * H + k]
                t = tc[b, k]
                dct = dc[b, k] + dh[b, k] * o * (1.0 - t * t)
                dpre[b, k] = dct * g * i * (1.0 - i)
                dpre[b, H + k] = dct * c_prev[b, k] * f * (1.0 - f)
                dpre[b, 2 * H + k] = dh[b, k] * t * o * (1.0 - o)
                dpre[b, 3 * H + k] = dct * i * (1.0 - g * g)
                dcp[b, k] = dct * f
    return dpre_a, dcp_a


def frame_energy(signals, starts, Py_ssize_t win):
    cdef double[:, ::1] x = np.ascontiguousarray(signals, dtype=np.float64)
    cdef long long[::1] s = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t C = x.shape[0], N = x.shape[1], T = s.shape[0]
    cdef Py_ssize_t ch, t, n, lo, hi
    cdef double acc, v
    out_a = np.empty((C, T))
    cdef double[:, ::1] out = out_a
    with nogil:
        for ch in range(C):
            for t in range(T):
                lo = s[t] if s[t] > 0 else 0
                hi = s[t] + win if s[t] + win < N else N
                acc = 0.0
                for n in range(lo, hi):
                    v = x[ch, n]
                    acc = acc + v * v
                out[ch, t] = acc
    return out_a


def box_mean(grid, Py_ssize_t half_rows, Py_ssize_t half_cols):
    # row band sums, then a running column prefix sum, as in the NumPy version
    cdef double[:, ::1] x = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t R = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t r, c, rr, r0, r1, c0, c1
    cdef double acc
    out_a = np.empty((R, C))
    pref_a = np.zeros(C + 1)
    cdef double[:, ::1] out = out_a
    cdef double[::1] pref = pref_a
    with nogil:
        for r in range(R):
            r0 = r - half_rows if r > half_rows else 0
            r1 = r + half_rows + 1 if r + half_rows + 1 < R else R
            acc = 0.0
            for c in range(C):
                for rr in range(r0, r1):
                    acc = acc + x[rr, c]
                pref[c + 1] = acc
            for c in range(C):
                c0 = c - half_cols if c > half_cols else 0
                c1 = c + half_cols + 1 if c + half_cols + 1 < C else C
                out[r, c] = (pref[c1] - pref[c0]) / ((r1 - r0) * (c1 - c0))
    return out_a
