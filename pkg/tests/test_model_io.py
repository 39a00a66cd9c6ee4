import struct
import zlib

import numpy as np
import pytest

from ttnet.model_io import (ConfigError, ModelFormatError, ModelVersionError, format_config, load_model,
                            model_from_bytes, model_to_bytes, parse_config, save_model, split_config)
from ttnet.tensornet import TrainConfig, build_model, count_model_params, model_forward, reduced_config


@pytest.fixture(scope="module")
def model():
    m = build_model(reduced_config(), seed=21, dropout_p=0.25)
    rng = np.random.default_rng(0)
    m.dense.bias[...] = rng.normal(size=m.dense.bias.shape)
    return m


def recrc(buf: bytearray) -> bytes:
    payload = bytes(buf[:-4])
    return payload + struct.pack("<I", zlib.crc32(payload))


class TestRoundTrip:
    def test_bitwise_parameters(self, model, tmp_path):
        path = tmp_path / "m.ttnn"
        save_model(model, path)
        loaded = load_model(path)
        assert len(loaded.parameters()) == len(model.parameters())
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert a.tobytes() == b.tobytes()
        assert loaded.seed == 21 and loaded.dropout_p == 0.25

    def test_outputs_and_counts_preserved(self, model, rng):
        loaded = model_from_bytes(model_to_bytes(model))
        x = rng.normal(size=(5, 12))
        assert model_forward(model, x).tobytes() == model_forward(loaded, x).tobytes()
        for conv in ("model", "table1"):
            assert count_model_params(model, conv) == count_model_params(loaded, conv)

    def test_full_model(self, tmp_path):
        m = build_model(seed=1)
        save_model(m, tmp_path / "full.ttnn")
        loaded = load_model(tmp_path / "full.ttnn")
        assert all(a.tobytes() == b.tobytes() for a, b in zip(m.parameters(), loaded.parameters()))

    def test_deterministic_bytes(self, model):
        assert model_to_bytes(model) == model_to_bytes(model.copy())

    def test_single_precision(self, model):
        loaded = model_from_bytes(model_to_bytes(model, float_width=4))
        for a, b in zip(model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(b, a.astype(np.float32))

    def test_header_layout(self, model):
        buf = model_to_bytes(model)
        assert buf[:4] == b"TTNN"
        version, width, n_layers = struct.unpack_from("<IBI", buf, 4)
        assert (version, width, n_layers) == (1, 8, 5)
        assert struct.unpack("<I", buf[-4:])[0] == zlib.crc32(buf[:-4])


class TestCorruption:
    def test_flipped_byte(self, model):
        buf = bytearray(model_to_bytes(model))
        buf[len(buf) // 2] ^= 0x40
        with pytest.raises(ModelFormatError, match="checksum"):
            model_from_bytes(bytes(buf))

    @pytest.mark.parametrize("cut", [1, 5, 100])
    def test_truncated(self, model, cut):
        buf = model_to_bytes(model)
        with pytest.raises(ModelFormatError):
            model_from_bytes(buf[:-cut])

    def test_truncated_with_valid_crc(self, model):
        buf = bytearray(model_to_bytes(model)[:-40])
        with pytest.raises(ModelFormatError, match="truncated"):
            model_from_bytes(recrc(buf + b"\0\0\0\0"))

    def test_future_version(self, model):
        buf = bytearray(model_to_bytes(model))
        struct.pack_into("<I", buf, 4, 2)
        with pytest.raises(ModelVersionError, match="version 2"):
            model_from_bytes(recrc(buf))

    def test_bad_magic(self):
        with pytest.raises(ModelFormatError):
            model_from_bytes(b"NOPE" + bytes(40))

    def test_unknown_layer_kind(self, model):
        buf = bytearray(model_to_bytes(model))
        buf[4 + 25] = 9  # first layer tag follows the 25-byte header
        with pytest.raises(ModelFormatError, match="kind"):
            model_from_bytes(recrc(buf))


class TestConfig:
    def test_parse_and_split(self):
        text = """
        # training
        learning_rate = 0.02
        epochs = 3   # short
        hidden_size = 8
        feature_dim = 12
        dense_size = 6
        mask_dim = 4
        tt_rank = 2
        hidden_factors = 4,2
        lstm_input_factors = 5,4; 4,4; 4,4
        dense_in_factors = 4,2
        dense_out_factors = 3,2
        out_in_factors = 3,2
        out_out_factors = 2,2
        """
        train_cfg, model_cfg, t1 = split_config(parse_config(text))
        assert train_cfg.learning_rate == 0.02 and train_cfg.epochs == 3
        assert model_cfg.lstm_input_factors == ((5, 4), (4, 4), (4, 4))
        assert t1 is None
        assert build_model(model_cfg).feature_dim == 12

    @pytest.mark.parametrize("text, msg", [
        ("bogus = 1", "unknown key"),
        ("epochs = 1\nepochs = 2", "duplicate"),
        ("epochs", "expected"),
        ("epochs = many", "cannot parse"),
        ("hidden_factors = 4,0", "factor"),
    ])
    def test_rejections(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            split_config(parse_config("dropout_p = 1.5"))
        with pytest.raises(ConfigError):
            split_config(parse_config("hidden_factors = 16,16,3"))

    def test_format_round_trip(self):
        cfg = TrainConfig(learning_rate=0.3, epochs=7, seed=2)
        train_cfg, _, _ = split_config(parse_config(format_config(cfg)))
        assert train_cfg == cfg
