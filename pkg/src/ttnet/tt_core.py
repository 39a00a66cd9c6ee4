"""Tensor-train weight matrices.

A ``TTLinear`` stores a ``P x Q`` weight matrix as ``d`` four-way cores of
extents ``p_k x (g_k q_k) x r_{k-1} x r_k``.  The matrix is indexed input
first, ``y(j) = sum_i W(i, j) x(i) + b(j)``, and multi-indices are row-major
with the first factor most significant.  Core 1 may carry ``g`` fused output
copies (the four LSTM gates); the fused copy index is the most significant
part of the output index, so the gates occupy consecutive column blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

RECONSTRUCT_CAP = 2 ** 24


def as_real(a) -> np.ndarray:
    """Float64 array, except that extended-precision input stays extended."""
    a = np.asarray(a)
    return a if a.dtype == np.longdouble else a.astype(np.float64, copy=False)


class TTShapeError(ValueError):
    """Inconsistent tensor-train shape or input dimension."""


class FactorizationError(ValueError):
    """No admissible factorization exists."""


@dataclass(frozen=True)
class TTShape:
    p: tuple
    q: tuple
    r: tuple
    gate_fusion: int = 1

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        q = tuple(int(v) for v in self.q)
        r = tuple(int(v) for v in self.r)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        d = len(p)
        if d < 1:
            raise TTShapeError("a TT shape needs at least one core")
        if len(q) != d:
            raise TTShapeError(f"len(q)={len(q)} does not match len(p)={d}")
        if len(r) != d + 1:
            raise TTShapeError(f"need {d + 1} ranks, got {len(r)}")
        if r[0] != 1 or r[-1] != 1:
            raise TTShapeError(f"boundary ranks must be 1, got {r}")
        if min(p + q + r) < 1 or self.gate_fusion < 1:
            raise TTShapeError("all factors, ranks and gate_fusion must be >= 1")

    @property
    def d(self) -> int:
        return len(self.p)

    @property
    def input_dim(self) -> int:
        return math.prod(self.p)

    @property
    def output_dim(self) -> int:
        return self.gate_fusion * math.prod(self.q)

    def core_shape(self, k: int) -> tuple:
        """Extents of core ``k`` (0-based)."""
        g = self.gate_fusion if k == 0 else 1
        return (self.p[k], g * self.q[k], self.r[k], self.r[k + 1])

    @classmethod
    def uniform_rank(cls, p, q, rank, gate_fusion=1):
        d = len(p)
        r = (1,) + (rank,) * (d - 1) + (1,)
        return cls(tuple(p), tuple(q), r, gate_fusion)


@dataclass
class TTLinear:
    shape: TTShape
    cores: list
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.cores) != self.shape.d:
            raise TTShapeError(f"expected {self.shape.d} cores, got {len(self.cores)}")
        cores = []
        for k, core in enumerate(self.cores):
            core = as_real(core)
            if core.shape != self.shape.core_shape(k):
                raise TTShapeError(
                    f"core {k + 1} has extents {core.shape}, expected {self.shape.core_shape(k)}"
                )
            cores.append(core)
        self.cores = cores
        if self.bias is not None:
            self.bias = as_real(self.bias)
            if self.bias.shape != (self.shape.output_dim,):
                raise TTShapeError(
                    f"bias length {self.bias.shape} does not match Q={self.shape.output_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.shape.input_dim

    @property
    def output_dim(self) -> int:
        return self.shape.output_dim

    def parameters(self) -> list:
        """Trainable arrays in a fixed order: cores, then bias if present."""
        params = list(self.cores)
        if self.bias is not None:
            params.append(self.bias)
        return params

    def copy(self) -> "TTLinear":
        bias = None if self.bias is None else self.bias.copy()
        return TTLinear(self.shape, [c.copy() for c in self.cores], bias)

    def astype(self, dtype) -> "TTLinear":
        bias = None if self.bias is None else self.bias.astype(dtype)
        return TTLinear(self.shape, [c.astype(dtype) for c in self.cores], bias)


def index_map(l: int, q: int) -> tuple:
    """Split a flat index into (row, column) of a ``? x q`` grid."""
    return l // q, l % q


def index_unmap(i: int, j: int, q: int) -> int:
    return i * q + j


def _contract_forward(cores, x):
    """Left-to-right sweep.  Returns every partial contraction ``Z_0..Z_d``.

    ``Z_k`` has layout ``(B, prod_{m<=k} q_m, r_k, prod_{m>k} p_m)``.
    """
    batch = x.shape[0]
    z = x.reshape(batch, 1, 1, x.shape[1])
    partials = [z]
    for core in cores:
        pk, qk, r_in, r_out = core.shape
        b, qleft, _, prest = z.shape
        z5 = z.reshape(b, qleft, r_in, pk, prest // pk)
        # (b, qleft, prest', r_in, pk) . (r_in, pk, qk, r_out)
        t = np.tensordot(z5.transpose(0, 1, 4, 2, 3), core.transpose(2, 0, 1, 3), axes=2)
        # t: (b, qleft, prest', qk, r_out) -> (b, qleft*qk, r_out, prest')
        z = t.transpose(0, 1, 3, 4, 2).reshape(b, qleft * qk, r_out, prest // pk)
        partials.append(z)
    return partials


def _as_batch(ttl: TTLinear, x):
    x = as_real(x)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != ttl.input_dim:
        raise TTShapeError(f"input has shape {x.shape}, expected last dimension {ttl.input_dim}")
    return xb, single


def ttl_forward(ttl: TTLinear, x, return_cache: bool = False):
    """Apply the TT matrix to ``x`` of shape ``(P,)`` or ``(B, P)``.

    With ``return_cache`` the partial contractions are returned as well; they
    are what :func:`ttnet.tt_grad.ttl_backward` consumes.
    """
    xb, single = _as_batch(ttl, x)
    partials = _contract_forward(ttl.cores, xb)
    y = partials[-1].reshape(xb.shape[0], ttl.output_dim)
    if ttl.bias is not None:
        y = y + ttl.bias
    if single:
        y = y[0]
    if return_cache:
        return y, partials
    return y


def tt_reconstruct(ttl: TTLinear, cap: int = RECONSTRUCT_CAP) -> np.ndarray:
    """Materialize the ``P x Q`` matrix.  Only meant as a test oracle."""
    P, Q = ttl.input_dim, ttl.output_dim
    if cap is not None and P * Q > cap:
        raise OverflowError(f"refusing to materialize a {P}x{Q} matrix (cap {cap})")
    # full chain: (p1, q1', p2, q2, ..., r_d) built core by core
    acc = ttl.cores[0][..., 0, :]  # (p1, q1', r1)
    for core in ttl.cores[1:]:
        acc = np.tensordot(acc, core, axes=([acc.ndim - 1], [2]))
    acc = acc[..., 0]
    d = ttl.shape.d
    order = [2 * k for k in range(d)] + [2 * k + 1 for k in range(d)]
    return acc.transpose(order).reshape(P, Q)


def tt_from_dense(W, p, q, gate_fusion: int = 1) -> TTLinear:
    """Exact TT representation of a dense ``P x Q`` matrix with maximal ranks.

    Sequential unfolding with untruncated SVDs, so reconstruction is exact up
    to roundoff.  Ranks come out as ``min(rows, cols)`` of each unfolding.
    """
    W = np.asarray(W, dtype=np.float64)
    p = tuple(int(v) for v in p)
    q = tuple(int(v) for v in q)
    d = len(p)
    qq = (gate_fusion * q[0],) + q[1:]
    if W.shape != (math.prod(p), math.prod(qq)):
        raise TTShapeError(f"matrix {W.shape} does not match factors {p} x {qq}")
    t = W.reshape(p + qq)
    order = [ax for k in range(d) for ax in (k, d + k)]
    t = t.transpose(order)  # (p1, q1', p2, q2, ...)
    cores, ranks = [], [1]
    rest = t.reshape(1, -1)
    for k in range(d - 1):
        rows = ranks[-1] * p[k] * qq[k]
        mat = rest.reshape(rows, -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        rk = s.shape[0]
        core = u.reshape(ranks[-1], p[k], qq[k], rk).transpose(1, 2, 0, 3)
        cores.append(core)
        ranks.append(rk)
        rest = s[:, None] * vt
    cores.append(rest.reshape(ranks[-1], p[-1], qq[-1], 1).transpose(1, 2, 0, 3))
    ranks.append(1)
    shape = TTShape(p, q, tuple(ranks), gate_fusion)
    return TTLinear(shape, cores)


def weight_param_count(shape: TTShape) -> int:
    total = sum(shape.p[k] * shape.q[k] * shape.r[k] * shape.r[k + 1] for k in range(shape.d))
    return total + (shape.gate_fusion - 1) * shape.p[0] * shape.q[0] * shape.r[0] * shape.r[1]


def param_count(shape: TTShape, include_bias: bool = True) -> int:
    n = weight_param_count(shape)
    if include_bias:
        n += shape.output_dim
    return n


def compression_rate(shape: TTShape, mode: str = "weights_only",
                     dense_params: Optional[int] = None) -> float:
    """TT parameter count over the dense count for the same matrix.

    ``dense_params`` replaces the dense denominator of the ``with_bias`` mode;
    a fused-gate LSTM layer is compared against the full dense LSTM, which
    also carries hidden-to-hidden weights.
    """
    P, Q = shape.input_dim, shape.output_dim
    if mode == "weights_only":
        return weight_param_count(shape) / (P * Q)
    if mode == "with_bias":
        dense = P * Q + Q if dense_params is None else dense_params
        return param_count(shape, True) / dense
    raise ValueError(f"unknown compression mode {mode!r}")


def init_std(shape: TTShape) -> float:
    """Per-core standard deviation giving Glorot-scale reconstructed entries.

    Each entry of W is a sum over ``prod(r_1..r_{d-1})`` products of ``d``
    independent core entries, so its variance is ``sigma^(2d) * prod(r)``.
    """
    target = 2.0 / (shape.input_dim + shape.output_dim)
    paths = math.prod(shape.r[1:-1])
    return (target / paths) ** (1.0 / (2 * shape.d))


def tt_random_init(shape: TTShape, seed: int = 0, bias: bool = True,
                   std: Optional[float] = None) -> TTLinear:
    rng = np.random.default_rng(seed)
    sigma = init_std(shape) if std is None else std
    cores = [rng.normal(0.0, sigma, size=shape.core_shape(k)) for k in range(shape.d)]
    b = np.zeros(shape.output_dim) if bias else None
    return TTLinear(shape, cores, b)


def _factor_tuples(n: int, d: int, allow_ones: bool):
    """All non-increasing d-tuples of integers whose product is n."""
    lo = 1 if allow_ones else 2

    def rec(n, d, cap):
        if d == 1:
            if lo <= n <= cap:
                yield (n,)
            return
        for f in range(min(cap, n), lo - 1, -1):
            if n % f == 0:
                for tail in rec(n // f, d - 1, f):
                    yield (f,) + tail

    return list(rec(n, d, n))


def factorize(n: int, d: int, allow_ones: bool = False) -> list:
    """Most balanced non-increasing ``d``-way factorization of ``n``.

    Minimizes the largest factor; among ties the lexicographically smallest
    tuple wins.
    """
    if n < 1 or d < 1:
        raise FactorizationError(f"cannot factorize {n} into {d} parts")
    options = _factor_tuples(n, d, allow_ones)
    if not options:
        raise FactorizationError(f"{n} has no {d}-way factorization"
                                 + ("" if allow_ones else " without unit factors"))
    return list(min(options, key=lambda t: (t[0], t)))


def factorize_dims(P: int, Q: int, d: int, allow_ones: bool = False) -> tuple:
    return factorize(P, d, allow_ones), factorize(Q, d, allow_ones)


def max_ranks(p: Sequence[int], q: Sequence[int], gate_fusion: int = 1) -> tuple:
    """Largest useful TT-ranks for the given factors."""
    sizes = [pk * qk for pk, qk in zip(p, q)]
    sizes[0] *= gate_fusion
    d = len(sizes)
    return (1,) + tuple(
        min(math.prod(sizes[: k + 1]), math.prod(sizes[k + 1:])) for k in range(d - 1)
    ) + (1,)


def multi_index(flat: int, factors: Sequence[int]) -> tuple:
    """Row-major split of ``flat`` over ``factors`` (first most significant)."""
    out = []
    for f in reversed(factors):
        flat, rem = divmod(flat, f)
        out.append(rem)
    return tuple(reversed(out))


def entry(ttl: TTLinear, i: int, j: int) -> float:
    """Single entry of W by the explicit chain product (slow reference)."""
    shape = ttl.shape
    qq = (shape.gate_fusion * shape.q[0],) + shape.q[1:]
    ii = multi_index(i, shape.p)
    jj = multi_index(j, qq)
    v = np.ones((1, 1))
    for k, core in enumerate(ttl.cores):
        v = v @ core[ii[k], jj[k]]
    return float(v[0, 0])


__all__ = [
    "TTShape", "TTLinear", "TTShapeError", "FactorizationError", "index_map", "index_unmap",
    "ttl_forward", "tt_reconstruct", "tt_from_dense", "param_count", "weight_param_count",
    "compression_rate", "tt_random_init", "init_std", "factorize", "factorize_dims",
    "max_ranks", "multi_index", "entry",
]
