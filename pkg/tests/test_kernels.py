import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttnet import _kernels_py as py
from ttnet import kernels

cy = pytest.importorskip("ttnet._kernels", reason="compiled extension not built")


def pointwise_inputs(rng, B, H, scale=3.0):
    pre = scale * rng.normal(size=(B, 4 * H))
    c_prev = rng.normal(size=(B, H))
    return pre, c_prev


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 2 ** 31))
def test_pointwise_forward_agrees(B, H, seed):
    pre, c_prev = pointwise_inputs(np.random.default_rng(seed), B, H)
    for a, b in zip(cy.lstm_pointwise_forward(pre, c_prev), py.lstm_pointwise_forward(pre, c_prev)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 2 ** 31))
def test_pointwise_backward_agrees(B, H, seed):
    rng = np.random.default_rng(seed)
    pre, c_prev = pointwise_inputs(rng, B, H)
    gates, _, tc, _ = py.lstm_pointwise_forward(pre, c_prev)
    dh, dc = rng.normal(size=(2, B, H))
    for a, b in zip(cy.lstm_pointwise_backward(gates, c_prev, tc, dh, dc),
                    py.lstm_pointwise_backward(gates, c_prev, tc, dh, dc)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_sigmoid_extremes():
    a = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = py.sigmoid(a)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0


@pytest.mark.parametrize("n, win, starts", [
    (1000, 320, np.arange(5) * 160),
    (500, 3200, np.array([-1500, 0, 300])),
    (400, 50, np.array([380, 390, -60])),
])
def test_frame_energy_agrees_and_matches_loop(rng, n, win, starts):
    x = rng.normal(size=(3, n))
    a = cy.frame_energy(x, starts.astype(np.int64), win)
    b = py.frame_energy(x, starts, win)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    for j, s in enumerate(starts):
        lo, hi = max(s, 0), min(s + win, n)
        ref = np.sum(x[:, lo:hi] ** 2, axis=1) if hi > lo else np.zeros(3)
        np.testing.assert_allclose(a[:, j], ref, rtol=1e-12, atol=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 12), st.integers(0, 12), st.integers(0, 2 ** 31))
def test_box_mean_agrees_with_loop(R, C, a, b, seed):
    grid = np.random.default_rng(seed).normal(size=(R, C))
    fast = cy.box_mean(grid, a, b)
    np.testing.assert_allclose(fast, py.box_mean(grid, a, b), rtol=1e-12, atol=1e-13)
    r, c = R // 2, C // 2
    win = grid[max(r - a, 0):r + a + 1, max(c - b, 0):c + b + 1]
    assert fast[r, c] == pytest.approx(win.mean(), rel=1e-12, abs=1e-13)


def test_dispatch_uses_numpy_for_extended_precision(rng):
    pre, c_prev = pointwise_inputs(rng, 2, 3)
    out = kernels.lstm_pointwise_forward(pre.astype(np.longdouble), c_prev.astype(np.longdouble))
    assert all(a.dtype == np.longdouble for a in out)


def _backend_in_subprocess(value):
    env = dict(os.environ)
    if value is None:
        env.pop("TTNET_PURE_PYTHON", None)
    else:
        env["TTNET_PURE_PYTHON"] = value
    code = "import ttnet.kernels as k; print(k.BACKEND)"
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                          check=True).stdout.strip()


def test_backend_selection():
    assert _backend_in_subprocess(None) == "cython"
    assert _backend_in_subprocess("0") == "cython"
    assert _backend_in_subprocess("1") == "python"
