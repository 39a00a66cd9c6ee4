"""Synthetic speech-like and noise signals, and on-disk dataset generation.

"Speech" is a harmonic complex with a gliding pitch, a formant-like spectral
envelope and syllable-rate on/off amplitude modulation.  Noise types are
filtered Gaussian noises whose spectra differ from the speech band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio_features import (SAMPLE_RATE, Waveform, cochleagram, extract_features, gammatone_analyze,
                             ideal_ratio_mask, make_gammatone_bank, mix_at_snr, read_matrix, read_wav,
                             write_matrix, write_wav)

DEFAULT_SNRS = (-6, -3, 0, 3, 6, 9)
NOISE_TYPES = ("hiss", "band", "rumble")
MANIFEST = "manifest.json"


def synth_speech(rng: np.random.Generator, n_samples: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(n_samples) / SAMPLE_RATE
    f0 = rng.uniform(100.0, 220.0) * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t
                                                          + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    formants = np.sort(rng.uniform([300, 900, 2000], [800, 1800, 3200]))
    x = np.zeros(n_samples)
    for k in range(1, int(4000 / f0.min()) + 1):
        fk = k * f0
        env = sum(np.exp(-0.5 * ((fk - fm) / (0.15 * fm)) ** 2) for fm in formants) + 0.05
        x += np.where(fk < 4000.0, env / np.sqrt(k), 0.0) * np.sin(k * phase)
    # syllables: raised-cosine bursts separated by short pauses
    am = np.zeros(n_samples)
    pos = int(rng.integers(0, int(0.08 * SAMPLE_RATE)))
    while pos < n_samples:
        dur = int(rng.uniform(0.12, 0.3) * SAMPLE_RATE)
        seg = np.sin(np.pi * np.arange(dur) / dur) ** 2
        end = min(pos + dur, n_samples)
        am[pos:end] = seg[:end - pos]
        pos = end + int(rng.uniform(0.04, 0.12) * SAMPLE_RATE)
    return x * am


def synth_noise(rng: np.random.Generator, kind: str, n_samples: int) -> np.ndarray:
    white = rng.standard_normal(n_samples)
    if kind == "hiss":
        sos = butter(6, 2500.0, btype="highpass", fs=SAMPLE_RATE, output="sos")
    elif kind == "band":
        sos = butter(4, [4000.0, 7000.0], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    elif kind == "rumble":
        sos = butter(4, 250.0, btype="lowpass", fs=SAMPLE_RATE, output="sos")
    else:
        raise ValueError(f"unknown noise type {kind!r}")
    return sosfilt(sos, white)


def _quantize(x):
    return np.clip(np.round(x * 32768.0), -32768, 32767) / 32768.0


@dataclass
class Utterance:
    clean: Waveform
    noise: Waveform
    noisy: Waveform
    snr_db: float
    noise_type: str


def make_utterance(seed: int, snr_db: float, noise_type: str, n_samples: int = SAMPLE_RATE,
                   peak: float = 0.5) -> Utterance:
    """One mixture; every signal lies on the 16-bit grid so WAV round trips are exact."""
    rng = np.random.default_rng(seed)
    clean = synth_speech(rng, n_samples)
    noise = synth_noise(rng, noise_type, n_samples + SAMPLE_RATE // 2)
    noisy, scaled = mix_at_snr(clean, noise, snr_db, seed=int(rng.integers(2 ** 31)))
    g = peak / np.max(np.abs(noisy.samples))
    c = _quantize(clean * g)
    n = _quantize(scaled.samples * g)
    return Utterance(Waveform(c), Waveform(n), Waveform(c + n), float(snr_db), noise_type)


def oracle_mask(clean, noise, bank=None) -> np.ndarray:
    bank = bank or make_gammatone_bank()
    return ideal_ratio_mask(cochleagram(gammatone_analyze(bank, clean)),
                            cochleagram(gammatone_analyze(bank, noise)))


def generate_dataset(out_dir, n_utterances: int, snrs=DEFAULT_SNRS, seed: int = 0,
                     n_samples: int = SAMPLE_RATE) -> list:
    """Write WAVs, feature/mask dumps and ``manifest.json``.  Returns the manifest entries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank = make_gammatone_bank()
    seeds = np.random.SeedSequence(seed).spawn(n_utterances)
    entries = []
    for k in range(n_utterances):
        snr = snrs[k % len(snrs)]
        kind = NOISE_TYPES[(k // len(snrs)) % len(NOISE_TYPES)]
        utt = make_utterance(int(seeds[k].generate_state(1)[0]), snr, kind, n_samples)
        name = f"utt{k:04d}"
        files = {part: f"{name}_{part}.wav" for part in ("clean", "noise", "noisy")}
        for part, fname in files.items():
            write_wav(out / fname, getattr(utt, part))
        files["features"] = f"{name}_features.ttfm"
        files["mask"] = f"{name}_mask.ttfm"
        write_matrix(out / files["features"], extract_features(utt.noisy, bank))
        write_matrix(out / files["mask"], oracle_mask(utt.clean, utt.noise, bank))
        entries.append({"id": name, "snr_db": snr, "noise_type": kind, "files": files})
    manifest = {"sample_rate": SAMPLE_RATE, "seed": seed, "snrs": list(snrs), "utterances": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return entries


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {data_dir}")
    return json.loads(path.read_text())


def load_training_pairs(data_dir) -> list:
    """``(features, mask)`` pairs in manifest order."""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    return [(read_matrix(data_dir / e["files"]["features"]), read_matrix(data_dir / e["files"]["mask"]))
            for e in manifest["utterances"]]


def load_signals(data_dir, entry) -> dict:
    data_dir = Path(data_dir)
    return {part: read_wav(data_dir / entry["files"][part]) for part in ("clean", "noise", "noisy")}
