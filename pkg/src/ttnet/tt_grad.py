"""Gradients of TT layers, finite-difference checking and momentum SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tt_core import TTLinear, TTShapeError, as_real, ttl_forward


class ContractError(RuntimeError):
    """A backward pass was called without a matching forward cache."""


class TrainingDivergence(FloatingPointError):
    """Non-finite loss or gradient during optimization."""


@dataclass
class TTLGradients:
    core_grads: list
    bias_grad: Optional[np.ndarray]
    input_grad: np.ndarray

    def parameter_grads(self) -> list:
        """Same order as :meth:`TTLinear.parameters`."""
        grads = list(self.core_grads)
        if self.bias_grad is not None:
            grads.append(self.bias_grad)
        return grads


def _check_cache(ttl: TTLinear, cache, batch: int):
    if cache is None:
        raise ContractError("ttl_backward needs the cache returned by ttl_forward(..., return_cache=True)")
    if len(cache) != ttl.shape.d + 1 or cache[0].shape[0] != batch:
        raise ContractError("forward cache does not match this layer or batch")
    if cache[0].shape[-1] != ttl.input_dim:
        raise ContractError("forward cache was produced by a different layer")


def ttl_backward(ttl: TTLinear, cache, dy) -> TTLGradients:
    """Backward sweep, right to left, through the cached partial contractions.

    ``dy`` is ``(Q,)`` or ``(B, Q)``; core gradients are summed over the batch
    in index order.
    """
    dy = as_real(dy)
    single = dy.ndim == 1
    dyb = dy[None, :] if single else dy
    if dyb.ndim != 2 or dyb.shape[1] != ttl.output_dim:
        raise TTShapeError(f"upstream gradient has shape {dy.shape}, expected last dimension {ttl.output_dim}")
    batch = dyb.shape[0]
    _check_cache(ttl, cache, batch)

    dz = dyb.reshape(batch, ttl.output_dim, 1, 1)
    core_grads = [None] * ttl.shape.d
    for k in range(ttl.shape.d - 1, -1, -1):
        core = ttl.cores[k]
        pk, qk, r_in, r_out = core.shape
        z_prev = cache[k]
        b, qleft, _, prest = z_prev.shape
        prest2 = prest // pk
        z5 = z_prev.reshape(b, qleft, r_in, pk, prest2)
        dz5 = dz.reshape(b, qleft, qk, r_out, prest2)
        # dG[p, q, r, s] = sum_{b, Q, R} z5[b, Q, r, p, R] * dz5[b, Q, q, s, R]
        g = np.tensordot(z5.transpose(2, 3, 0, 1, 4), dz5.transpose(0, 1, 4, 2, 3),
                         axes=([2, 3, 4], [0, 1, 2]))  # (r_in, pk, qk, r_out)
        core_grads[k] = g.transpose(1, 2, 0, 3)
        # dz_prev[b, Q, r, p, R] = sum_{q, s} dz5[b, Q, q, s, R] * G[p, q, r, s]
        t = np.tensordot(dz5.transpose(0, 1, 4, 2, 3), core.transpose(1, 3, 2, 0), axes=2)
        dz = t.transpose(0, 1, 3, 4, 2).reshape(b, qleft, r_in, prest)
    input_grad = dz.reshape(batch, ttl.input_dim)
    if single:
        input_grad = input_grad[0]
    bias_grad = None if ttl.bias is None else dyb.sum(axis=0)
    return TTLGradients(core_grads, bias_grad, input_grad)


def ttl_grad(ttl: TTLinear, x, dy) -> TTLGradients:
    """Forward then backward in one call."""
    _, cache = ttl_forward(ttl, x, return_cache=True)
    return ttl_backward(ttl, cache, dy)


def finite_diff_check(loss_fn: Callable, params: Sequence[np.ndarray], epsilon: float = 1e-6,
                      floor: float = 1e-12, max_entries: Optional[int] = None,
                      seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(loss, grads)`` with ``grads`` aligned to
    ``params``.  Arrays are perturbed in place and restored.  ``max_entries``
    limits the number of probed entries per array (chosen by a seeded draw).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError(f"loss is not finite: {loss}")
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for arr, grad in zip(params, grads):
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError("parameters must be contiguous arrays")
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        gflat = grad.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + epsilon
            lp, _ = loss_fn(params)
            flat[i] = old - epsilon
            lm, _ = loss_fn(params)
            flat[i] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError("loss became non-finite under perturbation")
            numeric = (lp - lm) / (2 * epsilon)
            analytic = gflat[i]
            denom = max(abs(analytic), abs(numeric), floor)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


@dataclass
class OptimizerState:
    learning_rate: float = 0.1
    momentum: float = 0.9
    clip_norm: float = 5.0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))


def sgd_momentum_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                      state: OptimizerState):
    """Clip by global norm, then ``v <- m v - lr g``; ``p <- p + v``.  In place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDivergence("gradient is not finite")
    scale = 1.0
    if math.isfinite(state.clip_norm) and norm > state.clip_norm:
        scale = state.clip_norm / norm
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"extent mismatch {p.shape} / {g.shape} / {v.shape}")
        v *= state.momentum
        v -= state.learning_rate * scale * g
        p += v
    return params, state
