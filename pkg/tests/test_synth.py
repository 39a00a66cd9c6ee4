import json
import math

import numpy as np
import pytest

from ttnet.audio_features import extract_features, read_matrix
from ttnet.synth import (DEFAULT_SNRS, MANIFEST, NOISE_TYPES, generate_dataset, load_manifest, load_signals,
                         load_training_pairs, make_utterance, synth_noise)


def test_default_grid():
    assert DEFAULT_SNRS == (-6, -3, 0, 3, 6, 9)


def test_utterance_on_16bit_grid():
    u = make_utterance(1, 3, "band", 4000)
    for w in (u.clean, u.noise, u.noisy):
        assert np.array_equal(np.round(w.samples * 32768), w.samples * 32768)
    np.testing.assert_array_equal(u.noisy.samples, u.clean.samples + u.noise.samples)
    assert np.max(np.abs(u.noisy.samples)) == pytest.approx(0.5, abs=1 / 32768)


@pytest.mark.parametrize("snr", [-6, 0, 9])
def test_mixture_snr_survives_quantization(snr):
    u = make_utterance(2, snr, "hiss")
    measured = 10 * math.log10(np.sum(u.clean.samples ** 2) / np.sum(u.noise.samples ** 2))
    assert measured == pytest.approx(snr, abs=0.05)


def test_noise_spectra_differ():
    rng = np.random.default_rng(0)
    centroids = {}
    for kind in NOISE_TYPES:
        x = synth_noise(rng, kind, 16000)
        power = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(16000, 1 / 16000)
        centroids[kind] = np.sum(f * power) / np.sum(power)
    assert centroids["rumble"] < 500 < 4000 < centroids["hiss"]
    assert 4000 < centroids["band"] < 7000
    with pytest.raises(ValueError):
        synth_noise(rng, "pink", 10)


def test_dataset_layout(tiny_dataset):
    manifest = load_manifest(tiny_dataset)
    entries = manifest["utterances"]
    assert [e["snr_db"] for e in entries] == [0, 6, 0]
    assert [e["noise_type"] for e in entries] == ["hiss", "hiss", "band"]
    pairs = load_training_pairs(tiny_dataset)
    assert len(pairs) == 3
    for (f, m), e in zip(pairs, entries):
        assert f.shape == (24, 768) and m.shape == (24, 64)
        assert np.all((m >= 0) & (m <= 1))
        sig = load_signals(tiny_dataset, e)
        np.testing.assert_allclose(f, extract_features(sig["noisy"]).astype(np.float32), rtol=0, atol=0)


def test_dataset_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(a, 2, seed=5, n_samples=3200)
    generate_dataset(b, 2, seed=5, n_samples=3200)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    generate_dataset(tmp_path / "c", 2, seed=6, n_samples=3200)
    assert (a / "utt0000_noisy.wav").read_bytes() != (tmp_path / "c" / "utt0000_noisy.wav").read_bytes()


def test_empty_dataset(tmp_path):
    generate_dataset(tmp_path, 0)
    assert json.loads((tmp_path / MANIFEST).read_text())["utterances"] == []


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path)


def test_mask_dump_is_oracle(tiny_dataset):
    from ttnet.synth import oracle_mask
    e = load_manifest(tiny_dataset)["utterances"][1]
    sig = load_signals(tiny_dataset, e)
    stored = read_matrix(tiny_dataset / e["files"]["mask"])
    np.testing.assert_array_equal(stored, oracle_mask(sig["clean"], sig["noise"]).astype(np.float32))
