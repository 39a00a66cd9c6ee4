"""Compare the compiled kernels with their NumPy fallbacks.

Kernel-level timings call both implementations directly.  The end-to-end
timings (one LSTM sequence forward/backward at full model size, feature
extraction for one second of audio, first LSTM layer of the default model) run in subprocesses with
``TTNET_PURE_PYTHON`` set to 0 and 1, since the backend is chosen at import.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 1] [--hidden 512]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from ttnet import _kernels_py

try:
    from ttnet import _kernels as _compiled
except ImportError:
    _compiled = None

END_TO_END = r"""
import json, sys, timeit
import numpy as np
from ttnet import BACKEND
from ttnet.audio_features import extract_features, make_gammatone_bank
from ttnet.synth import make_utterance
from ttnet.tensornet import build_model
from ttnet.tt_lstm import lstm_sequence_backward, lstm_sequence_forward

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
cell = build_model(seed=0).lstm_layers[0]
xs = rng.normal(size=(99, cell.D))
dh = rng.normal(size=(99, cell.H))

def lstm():
    _, cache = lstm_sequence_forward(cell, xs)
    lstm_sequence_backward(cell, cache, dh)

bank = make_gammatone_bank()
wave = make_utterance(0, 0, "hiss").noisy
feats = lambda: extract_features(wave, bank)
print(json.dumps({"backend": BACKEND,
                  "lstm_fwd_bwd": min(timeit.repeat(lstm, number=1, repeat=repeat)),
                  "features_1s": min(timeit.repeat(feats, number=1, repeat=repeat))}))
"""


def best(fn, repeat, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_cases(batch, hidden, rng):
    pre = rng.normal(size=(batch, 4 * hidden))
    c_prev = rng.normal(size=(batch, hidden))
    gates, _, tc, _ = _kernels_py.lstm_pointwise_forward(pre, c_prev)
    dh, dc = rng.normal(size=(2, batch, hidden))
    signals = rng.normal(size=(64, 16000))
    starts = np.arange(99, dtype=np.int64) * 160
    long_starts = starts - 1440
    grid = rng.normal(size=(64, 99))
    return {
        "lstm_pointwise_forward": lambda m: m.lstm_pointwise_forward(pre, c_prev),
        "lstm_pointwise_backward": lambda m: m.lstm_pointwise_backward(gates, c_prev, tc, dh, dc),
        "frame_energy (20 ms)": lambda m: m.frame_energy(signals, starts, 320),
        "frame_energy (200 ms)": lambda m: m.frame_energy(signals, long_starts, 3200),
        "box_mean 11x11": lambda m: m.box_mean(grid, 5, 5),
        "box_mean 23x23": lambda m: m.box_mean(grid, 11, 11),
    }


def end_to_end(pure: bool, repeat: int) -> dict:
    env = dict(os.environ, TTNET_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20, help="calls per kernel timing")
    parser.add_argument("--batch", type=int, default=1)
    parser.add_argument("--hidden", type=int, default=512, help="hidden size for the pointwise kernels")
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args(argv)

    if _compiled is None:
        print("compiled extension not built; only the NumPy timings are shown")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26} {'numpy (us)':>11} {'cython (us)':>12} {'speedup':>8}")
    for name, call in kernel_cases(args.batch, args.hidden, rng).items():
        t_py = best(lambda: call(_kernels_py), args.repeat, args.number) * 1e6
        if _compiled is None:
            print(f"{name:<26} {t_py:>11.1f} {'-':>12} {'-':>8}")
            continue
        t_cy = best(lambda: call(_compiled), args.repeat, args.number) * 1e6
        print(f"{name:<26} {t_py:>11.1f} {t_cy:>12.1f} {t_py / t_cy:>7.2f}x")

    if args.skip_end_to_end:
        return 0
    print()
    print(f"{'end to end':<26} {'numpy (ms)':>11} {'cython (ms)':>12} {'speedup':>8}")
    py = end_to_end(True, args.repeat)
    cy = end_to_end(False, args.repeat)
    for key, label in (("lstm_fwd_bwd", "LSTM fwd+bwd, T=99"), ("features_1s", "features, 1 s audio")):
        print(f"{label:<26} {py[key] * 1e3:>11.1f} {cy[key] * 1e3:>12.1f} {py[key] / cy[key]:>7.2f}x")
    if cy["backend"] != "cython":
        print("note: the compiled backend did not load; both columns use NumPy")
    return 0


if __name__ == "__main__":
    sys.exit(main())
