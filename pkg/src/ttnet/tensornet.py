"""Deep TT network: stacked TT-LSTM layers, a TT ReLU layer, a TT sigmoid mask layer."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .tt_core import TTLinear, TTShape, TTShapeError, as_real, param_count, tt_random_init, ttl_forward
from .tt_grad import OptimizerState, TrainingDivergence, sgd_momentum_step, ttl_backward
from .tt_lstm import (TTLSTMCell, cell_param_count, dense_lstm_param_count, lstm_sequence_backward,
                      lstm_sequence_forward, make_cell, table1_shape)

FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    """Layer widths and TT factorizations.  Defaults build the full-size network."""

    feature_dim: int = 768
    hidden_size: int = 512
    n_lstm: int = 3
    dense_size: int = 128
    mask_dim: int = 64
    tt_rank: int = 4
    hidden_factors: tuple = (16, 16, 2)
    lstm_input_factors: tuple = ((16, 16, 5), (16, 16, 4), (16, 16, 4))
    dense_in_factors: tuple = (16, 8, 4)
    dense_out_factors: tuple = (4, 8, 4)
    out_in_factors: tuple = (8, 4, 4)
    out_out_factors: tuple = (4, 4, 4)
    forget_bias: float = 1.0

    def validate(self):
        if len(self.lstm_input_factors) != self.n_lstm:
            raise TTShapeError(f"need {self.n_lstm} LSTM input factorizations")
        widths = [self.feature_dim] + [self.hidden_size] * (self.n_lstm - 1)
        for k, (w, f) in enumerate(zip(widths, self.lstm_input_factors)):
            if math.prod(f) != w + self.hidden_size:
                raise TTShapeError(f"LSTM layer {k + 1}: factors {tuple(f)} do not multiply to "
                                   f"{w + self.hidden_size}")
        checks = [(self.hidden_factors, self.hidden_size, "hidden"),
                  (self.dense_in_factors, self.hidden_size, "dense input"),
                  (self.dense_out_factors, self.dense_size, "dense output"),
                  (self.out_in_factors, self.dense_size, "mask input"),
                  (self.out_out_factors, self.mask_dim, "mask output")]
        for f, n, what in checks:
            if math.prod(f) != n:
                raise TTShapeError(f"{what} factors {tuple(f)} do not multiply to {n}")


def reduced_config() -> ModelConfig:
    """Tiny network for end-to-end gradient checks (H=8, width 12, mask 4, rank 2)."""
    return ModelConfig(feature_dim=12, hidden_size=8, n_lstm=3, dense_size=6, mask_dim=4, tt_rank=2,
                       hidden_factors=(4, 2), lstm_input_factors=((5, 4), (4, 4), (4, 4)),
                       dense_in_factors=(4, 2), dense_out_factors=(3, 2),
                       out_in_factors=(3, 2), out_out_factors=(2, 2))


@dataclass
class TensorNetModel:
    lstm_layers: list
    dense: TTLinear
    output: TTLinear
    dropout_p: float = 0.5
    seed: int = 0
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        width = self.lstm_layers[0].D if self.lstm_layers else None
        for k, cell in enumerate(self.lstm_layers):
            if cell.D != width:
                raise TTShapeError(f"LSTM layer {k + 1} expects width {cell.D}, receives {width}")
            width = cell.H
        if self.dense.input_dim != width:
            raise TTShapeError(f"dense layer expects {self.dense.input_dim}, receives {width}")
        if self.output.input_dim != self.dense.output_dim:
            raise TTShapeError("output layer input does not match the dense layer width")

    @property
    def feature_dim(self) -> int:
        return self.lstm_layers[0].D

    @property
    def mask_dim(self) -> int:
        return self.output.output_dim

    def parameters(self) -> list:
        params = []
        for cell in self.lstm_layers:
            params += cell.parameters()
        return params + self.dense.parameters() + self.output.parameters()

    def copy(self) -> "TensorNetModel":
        return TensorNetModel([c.copy() for c in self.lstm_layers], self.dense.copy(),
                              self.output.copy(), self.dropout_p, self.seed, self.version)

    def astype(self, dtype) -> "TensorNetModel":
        """Copy with every parameter cast, e.g. to ``np.longdouble`` for gradient oracles."""
        return TensorNetModel([c.astype(dtype) for c in self.lstm_layers], self.dense.astype(dtype),
                              self.output.astype(dtype), self.dropout_p, self.seed, self.version)


def build_model(config: Optional[ModelConfig] = None, seed: int = 0,
                dropout_p: float = 0.5) -> TensorNetModel:
    config = config or ModelConfig()
    config.validate()
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(config.n_lstm + 2)]
    cells = []
    width = config.feature_dim
    for k in range(config.n_lstm):
        cells.append(make_cell(width, config.hidden_size, config.lstm_input_factors[k],
                               config.hidden_factors, config.tt_rank, seed=seeds[k],
                               forget_bias=config.forget_bias))
        width = config.hidden_size
    dense = tt_random_init(TTShape.uniform_rank(config.dense_in_factors, config.dense_out_factors,
                                                config.tt_rank), seeds[-2])
    out = tt_random_init(TTShape.uniform_rank(config.out_in_factors, config.out_out_factors,
                                              config.tt_rank), seeds[-1])
    return TensorNetModel(cells, dense, out, dropout_p, seed)


def _dropout_mask(rng, shape, p):
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


@dataclass
class ForwardCache:
    model_id: int
    lstm_caches: list
    dropout_masks: list
    dense_cache: list
    dense_pre: np.ndarray
    out_cache: list
    mask: np.ndarray
    single: bool


def model_forward(model: TensorNetModel, features, training: bool = False, seed: int = 0,
                  return_cache: bool = False):
    """Mask estimate of shape ``(T, mask_dim)`` (or ``(T, B, mask_dim)``).

    With ``training`` inverted dropout is applied to every LSTM output and to
    the dense layer output; the draws come from ``seed``.
    """
    x = as_real(features)
    single = x.ndim == 2
    xb = x[:, None, :] if single else x
    if xb.ndim != 3 or xb.shape[2] != model.feature_dim:
        raise TTShapeError(f"features have shape {x.shape}, expected width {model.feature_dim}")
    T, B, _ = xb.shape
    use_dropout = training and model.dropout_p > 0
    rng = np.random.default_rng(seed) if use_dropout else None
    lstm_caches, masks = [], []
    h = xb
    for cell in model.lstm_layers:
        h, cache = lstm_sequence_forward(cell, h)
        lstm_caches.append(cache)
        if use_dropout:
            m = _dropout_mask(rng, h.shape, model.dropout_p)
            masks.append(m)
            h = h * m
    flat = h.reshape(T * B, -1)
    a, dense_cache = ttl_forward(model.dense, flat, return_cache=True)
    z = np.maximum(a, 0.0)
    if use_dropout:
        m = _dropout_mask(rng, z.shape, model.dropout_p)
        masks.append(m)
        z = z * m
    o, out_cache = ttl_forward(model.output, z, return_cache=True)
    mask = kernels.sigmoid(o).reshape(T, B, -1)
    if not np.all(np.isfinite(mask)):
        raise FloatingPointError("non-finite activations in model_forward")
    result = mask[:, 0, :] if single else mask
    if return_cache:
        cache = ForwardCache(id(model), lstm_caches, masks, dense_cache, a, out_cache, mask, single)
        return result, cache
    return result


def model_backward(model: TensorNetModel, cache: ForwardCache, dmask, truncation: int = 0) -> list:
    """Gradients aligned with :meth:`TensorNetModel.parameters`."""
    if cache.model_id != id(model):
        raise ValueError("forward cache belongs to a different model")
    dm = as_real(dmask)
    dm = dm[:, None, :] if cache.single else dm
    T, B, _ = cache.mask.shape
    s = cache.mask.reshape(T * B, -1)
    do = dm.reshape(T * B, -1) * s * (1.0 - s)
    g_out = ttl_backward(model.output, cache.out_cache, do)
    dz = g_out.input_grad
    masks = list(cache.dropout_masks)
    if masks:
        dz = dz * masks.pop()
    da = dz * (cache.dense_pre > 0)
    g_dense = ttl_backward(model.dense, cache.dense_cache, da)
    dh = g_dense.input_grad.reshape(T, B, -1)
    cell_grads = []
    for cell, lc in zip(reversed(model.lstm_layers), reversed(cache.lstm_caches)):
        if masks:
            dh = dh * masks.pop()
        g = lstm_sequence_backward(cell, lc, dh, truncation)
        cell_grads.append(g.parameter_grads())
        dh = g.input_grad
    grads = []
    for g in reversed(cell_grads):
        grads += g
    return grads + g_dense.parameter_grads() + g_out.parameter_grads()


def mask_mse_loss(predicted, target) -> float:
    predicted = as_real(predicted)
    target = as_real(target)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {target.shape}")
    return np.mean((predicted - target) ** 2)[()]


def mask_mse_grad(predicted, target) -> np.ndarray:
    return 2.0 * (predicted - target) / predicted.size


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 20
    batch_size: int = 1
    dropout_p: float = 0.5
    seed: int = 0
    truncation: int = 0

    def validate(self):
        if self.learning_rate <= 0 or self.clip_norm <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate, clip_norm and batch_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.truncation < 0:
            raise ValueError("epochs and truncation must be non-negative")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    config: Optional[TrainConfig] = None
    wall_time: list = field(default_factory=list, compare=False)


def evaluate_loss(model: TensorNetModel, dataset) -> float:
    """Mean per-utterance mask MSE in inference mode."""
    return float(np.mean([mask_mse_loss(model_forward(model, f), m) for f, m in dataset]))


def _check_dataset(model, dataset):
    if not dataset:
        raise ValueError("training set is empty")
    for f, m in dataset:
        if f.shape[1] != model.feature_dim or m.shape[1] != model.mask_dim or f.shape[0] != m.shape[0]:
            raise TTShapeError(f"sequence with features {f.shape} / mask {m.shape} does not fit the model")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
            raise ValueError("training data contains non-finite values")


def batch_gradients(model, batch, training, rng, truncation):
    """Loss and gradient of the mean per-utterance MSE over ``batch``.

    Equal-length utterances are stacked and run together; groups are visited
    in order of first appearance so the reduction order is fixed.
    """
    groups = {}
    for f, m in batch:
        groups.setdefault(f.shape[0], []).append((f, m))
    n = len(batch)
    total, grads = 0.0, None
    for seqs in groups.values():
        feats = np.stack([f for f, _ in seqs], axis=1)
        tgt = np.stack([m for _, m in seqs], axis=1)
        seed = int(rng.integers(2 ** 63)) if training else 0
        pred, cache = model_forward(model, feats, training=training, seed=seed, return_cache=True)
        w = len(seqs) / n
        total += w * mask_mse_loss(pred, tgt)
        g = model_backward(model, cache, w * mask_mse_grad(pred, tgt), truncation)
        grads = g if grads is None else [a + b for a, b in zip(grads, g)]
    return total, grads


def train(model: TensorNetModel, dataset, config: Optional[TrainConfig] = None,
          validation=None, log=None):
    """Momentum SGD with BPTT.  Updates ``model`` in place and returns it with a report.

    On a non-finite loss or gradient the parameters are restored to the last
    good step and :class:`TrainingDivergence` is raised carrying ``model`` and
    ``report``.
    """
    config = config or TrainConfig()
    config.validate()
    report = TrainReport(config=config)
    if config.epochs == 0:
        return model, report
    _check_dataset(model, dataset)
    model.dropout_p = config.dropout_p
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(config.learning_rate, config.momentum, config.clip_norm)
    params = model.parameters()
    report.initial_loss = evaluate_loss(model, dataset)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            snapshot = [p.copy() for p in params]
            try:
                loss, grads = batch_gradients(model, batch, True, rng, config.truncation)
                if not math.isfinite(loss):
                    raise TrainingDivergence(f"loss became {loss} in epoch {epoch + 1}")
                sgd_momentum_step(params, grads, state)
            except (TrainingDivergence, FloatingPointError) as exc:
                for p, s in zip(params, snapshot):
                    p[...] = s
                err = TrainingDivergence(str(exc))
                err.model, err.report = model, report
                raise err from exc
            losses.append(loss)
        report.train_loss.append(float(np.mean(losses)))
        if validation:
            report.val_loss.append(evaluate_loss(model, validation))
        report.wall_time.append(time.perf_counter() - t0)
        if log is not None:
            val = f" val {report.val_loss[-1]:.5f}" if validation else ""
            log(f"epoch {epoch + 1:3d}  train {report.train_loss[-1]:.5f}{val}")
    report.final_loss = evaluate_loss(model, dataset)
    return model, report


@dataclass
class LayerCount:
    name: str
    tt: int
    dense: int

    @property
    def rate(self) -> float:
        return self.tt / self.dense


def count_model_params(model: TensorNetModel, convention: str = "model",
                       table1_factors: Optional[Sequence] = None) -> list:
    """Per-layer TT and dense-baseline counts (biases included) plus a total row."""
    rows = []
    for k, cell in enumerate(model.lstm_layers):
        f = None if table1_factors is None else table1_factors[k]
        rows.append(LayerCount(f"Layer {k + 1} (TT-LSTM)", cell_param_count(cell, convention, f),
                               dense_lstm_param_count(cell.H, cell.D)))
    for name, ttl in (("dense", model.dense), ("output", model.output)):
        label = f"Layer {len(rows) + 1} ({'TT dense' if name == 'dense' else 'TT output'})"
        rows.append(LayerCount(label, param_count(ttl.shape, ttl.bias is not None),
                               ttl.input_dim * ttl.output_dim + ttl.output_dim))
    rows.append(LayerCount("Total", sum(r.tt for r in rows), sum(r.dense for r in rows)))
    return rows


__all__ = [
    "ModelConfig", "reduced_config", "TensorNetModel", "build_model", "model_forward",
    "model_backward", "mask_mse_loss", "mask_mse_grad", "TrainConfig", "TrainReport", "train",
    "evaluate_loss", "count_model_params", "LayerCount", "FORMAT_VERSION", "table1_shape",
]
