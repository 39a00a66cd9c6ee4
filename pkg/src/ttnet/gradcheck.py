"""Finite-difference suites for TT layers, TT-LSTM BPTT and the reduced network.

Analytic gradients are computed in float64; the central differences are
evaluated on an extended-precision copy of the parameters, which keeps their
roundoff well below the gradient entries being checked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensornet import build_model, mask_mse_grad, mask_mse_loss, model_backward, model_forward, reduced_config
from .tt_core import TTShape, tt_random_init, ttl_forward
from .tt_grad import finite_diff_check, ttl_backward
from .tt_lstm import lstm_sequence_backward, lstm_sequence_forward, make_cell

EXT = np.longdouble
TOLERANCE = 1e-5

TTL_SHAPES = [
    ((4,), (3,), 1),
    ((2, 3), (3, 2), 1), ((2, 3), (3, 2), 2), ((3, 4), (2, 5), 4),
    ((2, 3, 2), (2, 2, 3), 1), ((2, 3, 2), (2, 2, 3), 2), ((2, 3, 2), (2, 2, 3), 4),
    ((2, 2, 2, 2), (2, 3, 1, 2), 2), ((2, 2, 2, 2), (2, 1, 2, 3), 4),
]


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    n_checks: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _perturb(grads, fault: bool):
    if fault:
        grads[0].reshape(-1)[0] *= 1.0 + 1e-3
        grads[0].reshape(-1)[0] += 1e-3
    return grads


def ttl_suite(seed: int = 0, fault: bool = False, gate_fusion=(1, 4)) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    for p, q, rank in TTL_SHAPES:
        for g in gate_fusion:
            shape = TTShape.uniform_rank(p, q, rank, g)
            ttl = tt_random_init(shape, int(rng.integers(2 ** 31)), std=0.7)
            ttl.bias = rng.normal(size=shape.output_dim)
            x = rng.normal(size=(2, shape.input_dim))
            w = rng.normal(size=(2, shape.output_dim))
            _, cache = ttl_forward(ttl, x, return_cache=True)
            grads = _perturb(ttl_backward(ttl, cache, w).parameter_grads(), fault and n == 0)
            ext = ttl.astype(EXT)
            xe = x.astype(EXT)

            def loss(params, ext=ext, xe=xe, w=w, grads=grads):
                return np.sum(w * ttl_forward(ext, xe)), grads

            worst = max(worst, finite_diff_check(loss, ext.parameters()))
            n += 1
    return SuiteResult("tt_linear", worst, n)


def lstm_suite(seed: int = 0, fault: bool = False, T: int = 3, H: int = 4, D: int = 5) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    configs = [((3, 3), (2, 2), 2), ((3, 3), (2, 2), 1), ((9,), (4,), 1)]
    for k, (pf, qf, rank) in enumerate(configs):
        cell = make_cell(D, H, pf, qf, rank, seed=int(rng.integers(2 ** 31)))
        cell.bias = rng.normal(scale=0.5, size=4 * H)
        xs = rng.normal(size=(T, D))
        w = rng.normal(size=(T, H))
        _, cache = lstm_sequence_forward(cell, xs)
        grads = _perturb(lstm_sequence_backward(cell, cache, w).parameter_grads(), fault and k == 0)
        ext = cell.astype(EXT)
        xe = xs.astype(EXT)

        def loss(params, ext=ext, xe=xe, w=w, grads=grads):
            hs, _ = lstm_sequence_forward(ext, xe)
            return np.sum(w * hs), grads

        worst = max(worst, finite_diff_check(loss, ext.parameters()))
    return SuiteResult("tt_lstm_bptt", worst, len(configs))


def tensornet_suite(seed: int = 0, fault: bool = False, T: int = 3, init_scale: float = 2.0,
                    dropout: bool = True) -> SuiteResult:
    """Reduced network (H=8, width 12, mask 4, rank 2), with and without dropout.

    Parameters start at ``init_scale`` times the default scale so that the
    deepest gradients are not lost in the finite-difference resolution.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    modes = (False, True) if dropout else (False,)
    for k, training in enumerate(modes):
        model = build_model(reduced_config(), seed=int(rng.integers(2 ** 31)))
        for prm in model.parameters():
            prm *= init_scale
        x = rng.normal(size=(T, model.feature_dim))
        target = rng.uniform(size=(T, model.mask_dim))
        dseed = int(rng.integers(2 ** 31))
        pred, cache = model_forward(model, x, training=training, seed=dseed, return_cache=True)
        grads = _perturb(model_backward(model, cache, mask_mse_grad(pred, target)), fault and k == 0)
        ext = model.astype(EXT)
        xe = x.astype(EXT)

        def loss(params, ext=ext, xe=xe, target=target, training=training, dseed=dseed, grads=grads):
            return mask_mse_loss(model_forward(ext, xe, training=training, seed=dseed), target), grads

        worst = max(worst, finite_diff_check(loss, ext.parameters()))
    return SuiteResult("tensornet_reduced", worst, len(modes))


def run_suites(size: str = "small", seed: int = 0, fault: bool = False) -> list:
    if size not in ("small", "fig2-reduced"):
        raise ValueError(f"unknown gradcheck size {size!r}")
    results = [ttl_suite(seed, fault), lstm_suite(seed)]
    if size == "fig2-reduced":
        results.append(tensornet_suite(seed))
    return results


def format_report(results, tolerance: Optional[float] = None) -> str:
    tol = TOLERANCE if tolerance is None else tolerance
    lines = [f"{'suite':<20} {'checks':>6} {'max_rel_error':>14}  result"]
    for r in results:
        lines.append(f"{r.name:<20} {r.n_checks:>6} {r.max_rel_error:>14.3e}  "
                     f"{'PASS' if r.max_rel_error <= tol else 'FAIL'}")
    worst = max(r.max_rel_error for r in results)
    lines.append(f"overall max relative error {worst:.3e} (tolerance {tol:.0e}): "
                 f"{'PASS' if worst <= tol else 'FAIL'}")
    return "\n".join(lines)
