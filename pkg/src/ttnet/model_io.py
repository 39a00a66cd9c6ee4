"""Binary model files and ``key = value`` text configs.

Model file layout (little-endian)::

    b"TTNN" u32 version u8 float_width u32 n_layers u64 seed f64 dropout_p
    per layer:
        u8 kind (1 = TT-LSTM, 2 = TT ReLU dense, 3 = TT sigmoid output)
        u32 d, u32 p[d], u32 q[d], u32 r[d+1], u32 gate_fusion
        cores, each row-major over (p, q, r_in, r_out)
        LSTM:   u32 H, u32 D, 4H gate biases (i, f, o, c~)
        other:  u8 has_bias, Q bias values when present
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import dataclasses
import struct
import zlib
from pathlib import Path

import numpy as np

from .tensornet import FORMAT_VERSION, ModelConfig, TensorNetModel, TrainConfig
from .tt_core import TTLinear, TTShape
from .tt_lstm import TTLSTMCell

MAGIC = b"TTNN"
KIND_LSTM, KIND_DENSE, KIND_OUTPUT = 1, 2, 3


class ModelFormatError(ValueError):
    """Unreadable, corrupted or incompatible model file."""


class ModelVersionError(ModelFormatError):
    """Model file written by a newer format version."""


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


def _pack_shape(shape: TTShape) -> bytes:
    d = shape.d
    return struct.pack(f"<I{d}I{d}I{d + 1}II", d, *shape.p, *shape.q, *shape.r, shape.gate_fusion)


def _pack_arrays(arrays, dtype) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays)


def model_to_bytes(model: TensorNetModel, float_width: int = 8) -> bytes:
    if float_width not in (4, 8):
        raise ValueError("float width must be 4 or 8")
    dtype = "<f4" if float_width == 4 else "<f8"
    layers = len(model.lstm_layers) + 2
    out = [MAGIC, struct.pack("<IBIQd", FORMAT_VERSION, float_width, layers, model.seed, model.dropout_p)]
    for cell in model.lstm_layers:
        out += [struct.pack("<B", KIND_LSTM), _pack_shape(cell.gates_ttl.shape),
                _pack_arrays(cell.gates_ttl.cores, dtype), struct.pack("<II", cell.H, cell.D),
                _pack_arrays([cell.bias], dtype)]
    for kind, ttl in ((KIND_DENSE, model.dense), (KIND_OUTPUT, model.output)):
        out += [struct.pack("<B", kind), _pack_shape(ttl.shape), _pack_arrays(ttl.cores, dtype),
                struct.pack("<B", ttl.bias is not None)]
        if ttl.bias is not None:
            out.append(_pack_arrays([ttl.bias], dtype))
    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ModelFormatError("model file is truncated")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def floats(self, shape, dtype):
        n = int(np.prod(shape))
        size = n * np.dtype(dtype).itemsize
        if self.pos + size > len(self.buf):
            raise ModelFormatError("model file is truncated")
        a = np.frombuffer(self.buf, dtype=dtype, count=n, offset=self.pos)
        self.pos += size
        return a.astype(np.float64).reshape(shape)

    def shape(self) -> TTShape:
        (d,) = self.take("<I")
        if not 1 <= d <= 64:
            raise ModelFormatError(f"implausible core count {d}")
        vals = self.take(f"<{d}I{d}I{d + 1}II")
        p, q, r = vals[:d], vals[d:2 * d], vals[2 * d:3 * d + 1]
        try:
            return TTShape(p, q, r, vals[-1])
        except ValueError as exc:
            raise ModelFormatError(f"invalid TT shape: {exc}") from exc


def model_from_bytes(buf: bytes) -> TensorNetModel:
    if len(buf) < 4 + 4 + 4 or buf[:4] != MAGIC:
        raise ModelFormatError("not a TTNN model file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    if len(buf) < 4 + 4 + 1 + 4 + 8 + 8 + 4:
        raise ModelFormatError("model file is truncated")
    payload, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != crc:
        raise ModelFormatError("checksum mismatch: model file is corrupted")
    rd = _Reader(payload, 8)
    width, n_layers, seed, dropout_p = rd.take("<BIQd")
    if width not in (4, 8):
        raise ModelFormatError(f"unsupported float width {width}")
    dtype = "<f4" if width == 4 else "<f8"
    cells, dense, output = [], None, None
    try:
        for _ in range(n_layers):
            (kind,) = rd.take("<B")
            shape = rd.shape()
            cores = [rd.floats(shape.core_shape(k), dtype) for k in range(shape.d)]
            if kind == KIND_LSTM:
                if dense is not None:
                    raise ModelFormatError("LSTM layer after the dense layer")
                H, D = rd.take("<II")
                bias = rd.floats((4 * H,), dtype)
                cells.append(TTLSTMCell(H, D, TTLinear(shape, cores), bias))
            elif kind in (KIND_DENSE, KIND_OUTPUT):
                (has_bias,) = rd.take("<B")
                bias = rd.floats((shape.output_dim,), dtype) if has_bias else None
                ttl = TTLinear(shape, cores, bias)
                if kind == KIND_DENSE:
                    if dense is not None or output is not None:
                        raise ModelFormatError("unexpected dense layer")
                    dense = ttl
                else:
                    if dense is None or output is not None:
                        raise ModelFormatError("unexpected output layer")
                    output = ttl
            else:
                raise ModelFormatError(f"unknown layer kind {kind}")
        if rd.pos != len(payload):
            raise ModelFormatError("trailing bytes after the last layer")
        if not cells or dense is None or output is None:
            raise ModelFormatError("model needs LSTM, dense and output layers")
        return TensorNetModel(cells, dense, output, dropout_p, seed, version)
    except ModelFormatError:
        raise
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent model: {exc}") from exc


def save_model(model: TensorNetModel, path, float_width: int = 8) -> None:
    Path(path).write_bytes(model_to_bytes(model, float_width))


def load_model(path) -> TensorNetModel:
    return model_from_bytes(Path(path).read_bytes())


# -- text configs -------------------------------------------------------------

_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_MODEL_KEYS = {
    "feature_dim": int, "hidden_size": int, "n_lstm": int, "dense_size": int, "mask_dim": int,
    "tt_rank": int, "forget_bias": float, "hidden_factors": "factors", "lstm_input_factors": "factor_list",
    "dense_in_factors": "factors", "dense_out_factors": "factors", "out_in_factors": "factors",
    "out_out_factors": "factors", "table1_input_factors": "factor_list",
}


def _factors(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError as exc:
        raise ConfigError(f"bad factor list {text!r}") from exc
    if not vals or min(vals) < 1:
        raise ConfigError(f"bad factor list {text!r}")
    return vals


def _convert(key: str, kind, text: str):
    try:
        if kind == "factors":
            return _factors(text)
        if kind == "factor_list":
            return tuple(_factors(part) for part in text.split(";"))
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc
    raise ConfigError(f"{key}: unsupported type")


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are rejected."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in _TRAIN_KEYS:
            entries[key] = _convert(key, _TRAIN_KEYS[key], value)
        elif key in _MODEL_KEYS:
            entries[key] = _convert(key, _MODEL_KEYS[key], value)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return entries


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def split_config(entries: dict):
    """``(TrainConfig, ModelConfig, table1 input factors or None)`` from parsed entries."""
    train = TrainConfig(**{k: v for k, v in entries.items() if k in _TRAIN_KEYS})
    model_kw = {k: v for k, v in entries.items() if k in _MODEL_KEYS and k != "table1_input_factors"}
    model = ModelConfig(**model_kw)
    try:
        train.validate()
        model.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return train, model, entries.get("table1_input_factors")


def format_config(train: TrainConfig) -> str:
    return "".join(f"{f.name} = {getattr(train, f.name)}\n" for f in dataclasses.fields(train))
