"""Gammatone front end, multi-resolution cochleagram features, ratio masks and metrics."""

from __future__ import annotations

import functools
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import kernels

SAMPLE_RATE = 16000
N_CHANNELS = 64
FRAME_LEN = 320
FRAME_HOP = 160
LONG_FRAME_LEN = 3200
IR_LEN = 2048
LOG_FLOOR = 1e-12
SEGSNR_RANGE = (-10.0, 35.0)
DUMP_MAGIC = b"TTFM"


class AudioFormatError(ValueError):
    """Unsupported audio or dump file."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.samples.ndim != 1 or not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform must be a finite mono signal")

    def __len__(self):
        return self.samples.shape[0]


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def inverse_erb_rate(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f):
    """Glasberg-Moore equivalent rectangular bandwidth in Hz."""
    return 24.7 * (4.37e-3 * np.asarray(f, dtype=np.float64) + 1.0)


def erb_center_frequencies(n: int = N_CHANNELS, lo: float = 50.0, hi: float = 8000.0) -> np.ndarray:
    if n < 2 or not 0 < lo < hi:
        raise ValueError("need n >= 2 and 0 < lo < hi")
    cf = inverse_erb_rate(np.linspace(erb_rate(lo), erb_rate(hi), n))
    cf[0], cf[-1] = lo, hi
    return cf


def gammatone_ir(cf: float, fs: int = SAMPLE_RATE, length: int = IR_LEN) -> np.ndarray:
    """Peak-normalized 4th-order gammatone impulse response, FIR-truncated."""
    t = np.arange(length) / fs
    b = 1.019 * erb_bandwidth(cf)
    g = t ** 3 * np.exp(-2 * np.pi * b * t) * np.cos(2 * np.pi * cf * t)
    return g / np.max(np.abs(g))


@dataclass
class GammatoneBank:
    cf: np.ndarray
    irs: np.ndarray  # (channels, IR_LEN)
    lags: np.ndarray  # per-channel impulse-response peak position, samples
    synthesis_weights: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.cf.shape[0]


def _synthesis_weights(irs, lags, fs, lo, hi, nfft=8192, ridge=1e-6):
    """Real channel weights that make the delay-compensated channel sum flat.

    Least squares fit of ``sum_k w_k H_k(f) exp(2j pi f lag_k / fs) = 1`` over
    the analysis band.
    """
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    band = (freqs >= lo) & (freqs <= hi)
    H = np.fft.rfft(irs, nfft, axis=1)[:, band]
    H = H * np.exp(2j * np.pi * freqs[band][None, :] * lags[:, None] / fs)
    A = np.concatenate([H.real, H.imag], axis=1).T
    rhs = np.concatenate([np.ones(band.sum()), np.zeros(band.sum())])
    n = A.shape[1]
    lhs = A.T @ A + ridge * np.trace(A.T @ A) / n * np.eye(n)
    return np.linalg.solve(lhs, A.T @ rhs)


@functools.lru_cache(maxsize=4)
def make_gammatone_bank(n: int = N_CHANNELS, lo: float = 50.0, hi: float = 8000.0,
                        fs: int = SAMPLE_RATE) -> GammatoneBank:
    cf = erb_center_frequencies(n, lo, hi)
    irs = np.stack([gammatone_ir(f, fs) for f in cf])
    lags = np.argmax(irs, axis=1)
    weights = _synthesis_weights(irs, lags, fs, lo, min(hi, 0.49 * fs))
    for a in (cf, irs, lags, weights):
        a.setflags(write=False)
    return GammatoneBank(cf, irs, lags, weights)


def gammatone_analyze(bank: GammatoneBank, wave_in) -> np.ndarray:
    """Causal filtering of the input by every channel, ``(channels, N)``."""
    if isinstance(wave_in, Waveform) and wave_in.sample_rate != SAMPLE_RATE:
        raise AudioFormatError("sample rate must be 16 kHz")
    x = _samples(wave_in)
    n = x.shape[0]
    return fftconvolve(x[None, :], bank.irs, axes=1)[:, :n]


def n_frames(n_samples: int, win: int = FRAME_LEN, hop: int = FRAME_HOP) -> int:
    if n_samples < win:
        raise ValueError(f"signal of {n_samples} samples is shorter than one {win}-sample frame")
    return (n_samples - win) // hop + 1


def cochleagram(signals, win: int = FRAME_LEN, hop: int = FRAME_HOP) -> np.ndarray:
    """Per-frame energies ``(channels, T)`` of filterbank outputs."""
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    T = n_frames(signals.shape[1], win, hop)
    return kernels.frame_energy(signals, np.arange(T, dtype=np.int64) * hop, win)


def _long_cochleagram(signals, T, win=LONG_FRAME_LEN, short=FRAME_LEN, hop=FRAME_HOP):
    """Energies in ``win``-sample windows sharing the centers of the short frames."""
    centers = np.arange(T, dtype=np.int64) * hop + short // 2
    return kernels.frame_energy(signals, centers - win // 2, win)


def mrcg_features(wave_in, bank: GammatoneBank | None = None) -> np.ndarray:
    """Multi-resolution cochleagram, ``(T, 4 * channels)``.

    Streams: log energy with 20 ms frames, log energy with 200 ms frames at
    the same centers, and 11x11 / 23x23 box smoothings of the first stream.
    """
    bank = bank or make_gammatone_bank()
    sig = gammatone_analyze(bank, wave_in)
    cg = cochleagram(sig)
    T = cg.shape[1]
    cg1 = np.log(cg + LOG_FLOOR)
    cg2 = np.log(_long_cochleagram(sig, T) + LOG_FLOOR)
    cg3 = kernels.box_mean(cg1, 5, 5)
    cg4 = kernels.box_mean(cg1, 11, 11)
    return np.concatenate([cg1, cg2, cg3, cg4], axis=0).T


def deltas(features, N: int = 2) -> np.ndarray:
    """Regression deltas over +-N frames with edge replication."""
    x = np.asarray(features, dtype=np.float64)
    T = x.shape[0]
    padded = np.pad(x, ((N, N), (0, 0)), mode="edge")
    denom = 2 * sum(n * n for n in range(1, N + 1))
    out = np.zeros_like(x)
    for n in range(1, N + 1):
        out += n * (padded[N + n:N + n + T] - padded[N - n:N - n + T])
    return out / denom


def add_deltas(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 5:
        raise ValueError("delta features need at least 5 frames")
    d1 = deltas(x)
    return np.concatenate([x, d1, deltas(d1)], axis=1)


def normalize_features(features, eps: float = 1e-8) -> np.ndarray:
    """Per-utterance zero mean, unit variance per dimension."""
    x = np.asarray(features, dtype=np.float64)
    return (x - x.mean(axis=0)) / (x.std(axis=0) + eps)


def extract_features(wave_in, bank: GammatoneBank | None = None, normalize: bool = True) -> np.ndarray:
    """``(T, 768)`` network input: MRCG with deltas and double deltas."""
    f = add_deltas(mrcg_features(wave_in, bank))
    return normalize_features(f) if normalize else f


def ideal_ratio_mask(clean_cg, noise_cg, beta: float = 0.5) -> np.ndarray:
    """Ratio mask ``(T, channels)`` from ``(channels, T)`` energies; 0/0 cells give 0."""
    s = np.asarray(clean_cg, dtype=np.float64)
    w = np.asarray(noise_cg, dtype=np.float64)
    if s.shape != w.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {w.shape}")
    if np.any(s < 0) or np.any(w < 0):
        raise ValueError("energies must be non-negative")
    total = s + w
    ratio = np.divide(s, total, out=np.zeros_like(s), where=total > 0)
    return (ratio ** beta).T


def rms(x) -> float:
    x = _samples(x)
    return float(np.sqrt(np.mean(x * x)))


def mix_at_snr(clean, noise, snr_db: float, seed: int = 0):
    """Scale a randomly positioned noise excerpt to ``snr_db`` and add it."""
    c = _samples(clean)
    n = _samples(noise)
    if n.shape[0] < c.shape[0]:
        raise ValueError("noise is shorter than the clean signal")
    rc = rms(c)
    if rc == 0.0:
        raise ValueError("clean signal is silent")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, n.shape[0] - c.shape[0] + 1))
    seg = n[offset:offset + c.shape[0]]
    rn = rms(seg)
    if rn == 0.0:
        raise ValueError("noise excerpt is silent")
    scaled = seg * (rc / rn) * 10.0 ** (-snr_db / 20.0)
    return Waveform(c + scaled), Waveform(scaled)


def frame_gains(mask, n_samples: int, hop: int = FRAME_HOP, win: int = FRAME_LEN) -> np.ndarray:
    """Per-sample gains ``(channels, N)`` interpolated between frame centers."""
    mask = np.asarray(mask, dtype=np.float64)
    centers = np.arange(mask.shape[0]) * hop + win / 2
    n = np.arange(n_samples)
    return np.stack([np.interp(n, centers, mask[:, k]) for k in range(mask.shape[1])])


def apply_mask_resynthesize(noisy, mask, bank: GammatoneBank | None = None) -> Waveform:
    """Weight each channel by its mask gain, undo the channel delay, and sum."""
    bank = bank or make_gammatone_bank()
    x = _samples(noisy)
    N = x.shape[0]
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2 or mask.shape[1] != bank.n_channels or mask.shape[0] != n_frames(N):
        raise ValueError(f"mask {mask.shape} does not match {n_frames(N)} frames x {bank.n_channels} channels")
    sig = gammatone_analyze(bank, x) * frame_gains(mask, N)
    out = np.zeros(N)
    for k in range(bank.n_channels):
        lag = int(bank.lags[k])
        out[:N - lag] += bank.synthesis_weights[k] * sig[k, lag:]
    return Waveform(out)


def segmental_snr(reference, processed, frame: int = FRAME_LEN, hop: int = FRAME_HOP) -> float:
    ref = _samples(reference)
    proc = _samples(processed)
    if ref.shape != proc.shape:
        raise ValueError("signals differ in length")
    lo, hi = SEGSNR_RANGE
    vals = []
    for start in range(0, ref.shape[0] - frame + 1, hop):
        r = ref[start:start + frame]
        e = r - proc[start:start + frame]
        er = float(np.dot(r, r))
        if er == 0.0:
            continue
        ee = float(np.dot(e, e))
        snr = hi if ee == 0.0 else 10.0 * np.log10(er / ee)
        vals.append(min(max(snr, lo), hi))
    if not vals:
        raise ValueError("every frame of the reference is silent")
    return float(np.mean(vals))


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, found {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * w.getsampwidth()}-bit")
        if w.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, found {w.getframerate()} Hz")
        if w.getcomptype() != "NONE":
            raise AudioFormatError(f"{path}: compressed WAV is not supported")
        data = w.readframes(w.getnframes())
    return Waveform(np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0)


def write_wav(path, wave_out) -> None:
    x = _samples(wave_out)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def write_matrix(path, matrix, float_width: int = 4) -> None:
    """Binary dump: ``TTFM``, u32 rows, u32 cols, u8 float width, row-major payload."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("only 2-D matrices can be dumped")
    dtype = {4: "<f4", 8: "<f8"}.get(float_width)
    if dtype is None:
        raise ValueError("float width must be 4 or 8")
    header = DUMP_MAGIC + struct.pack("<IIB", m.shape[0], m.shape[1], float_width)
    Path(path).write_bytes(header + np.ascontiguousarray(m, dtype=dtype).tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DUMP_MAGIC or len(raw) < 13:
        raise AudioFormatError(f"{path}: not a feature/mask dump")
    rows, cols, width = struct.unpack("<IIB", raw[4:13])
    if width not in (4, 8):
        raise AudioFormatError(f"{path}: unsupported float width {width}")
    payload = raw[13:]
    if len(payload) != rows * cols * width:
        raise AudioFormatError(f"{path}: payload holds {len(payload)} bytes, expected {rows * cols * width}")
    return np.frombuffer(payload, dtype="<f4" if width == 4 else "<f8").astype(np.float64).reshape(rows, cols)
