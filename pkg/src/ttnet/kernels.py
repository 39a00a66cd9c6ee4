"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``TTNET_PURE_PYTHON`` is set to a non-empty value other than ``0``, the NumPy
versions are used.  Non-float64 arrays (extended precision for gradient
oracles) always take the NumPy path.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TTNET_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _fast(*arrays) -> bool:
    return _impl is not _kernels_py and all(a.dtype == np.float64 for a in arrays)


def lstm_pointwise_forward(pre, c_prev):
    if _fast(pre, c_prev):
        return _impl.lstm_pointwise_forward(np.ascontiguousarray(pre), np.ascontiguousarray(c_prev))
    return _kernels_py.lstm_pointwise_forward(pre, c_prev)


def lstm_pointwise_backward(gates, c_prev, tc, dh, dc):
    args = (gates, c_prev, tc, dh, dc)
    if _fast(*args):
        return _impl.lstm_pointwise_backward(*(np.ascontiguousarray(a) for a in args))
    return _kernels_py.lstm_pointwise_backward(*args)


frame_energy = _impl.frame_energy
box_mean = _impl.box_mean
sigmoid = _kernels_py.sigmoid

__all__ = ["BACKEND", "lstm_pointwise_forward", "lstm_pointwise_backward", "frame_energy",
           "box_mean", "sigmoid"]
