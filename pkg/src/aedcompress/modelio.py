"""AEDM model files.

Layout (little endian)::

    4 bytes   magic b"AEDM"
    u32       version (1)
    u32       header length in bytes
    header    UTF-8 JSON text: architecture, CMVN statistics, tensor table
    payload   tensors back to back, at the offsets listed in the header

Full-precision tensors are float32 row-major. Quantized tensors store their
codes packed LSB-first (8-bit: one byte per code; 4-bit: two codes per
byte, low nibble first, zero pad nibble at the end), with ``alpha`` and
``beta`` kept as float64 in the header.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data import CmvnStats
from .lstm import LstmModel
from .quant import dequantize, pack_codes, packed_size, quantize, QuantizedTensor, unpack_codes

MAGIC = b"AEDM"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class ModelFormatError(ValueError):
    """Malformed model file."""


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the target directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_model(model: LstmModel, cmvn: CmvnStats | None = None, class_names=None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, value in model.params.items():
        entry = {
            "name": name,
            "state": "factorized" if model.factorized and not name.endswith(".b") and not name.startswith("head.") else "full",
            "shape": list(value.shape),
            "offset": offset,
        }
        if name in model.quant_bits:
            q = quantize(value, model.quant_bits[name])
            raw = pack_codes(q.codes, q.n_bits)
            entry.update(n_bits=q.n_bits, alpha=q.alpha, beta=q.beta)
        else:
            raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
            entry.update(n_bits=32, alpha=None, beta=None)
        entry["length"] = len(raw)
        entries.append(entry)
        chunks.append(raw)
        offset += len(raw)
    header = {
        "architecture": {
            "num_layers": model.num_layers,
            "hidden_size": model.hidden_size,
            "input_size": model.input_size,
            "num_classes": model.num_classes,
            "dropout": model.dropout,
            "factorized": model.factorized,
            "input_bits": model.input_bits,
        },
        "class_names": list(class_names) if class_names else None,
        "cmvn": None if cmvn is None else {"mean": cmvn.mean.tolist(), "std": cmvn.std.tolist()},
        "tensors": entries,
    }
    text = json.dumps(header, indent=1).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(text)) + text + b"".join(chunks)


def save_model(path, model: LstmModel, cmvn: CmvnStats | None = None, class_names=None) -> None:
    atomic_write(path, encode_model(model, cmvn, class_names))


def decode_model(raw: bytes, source: str = "<bytes>") -> tuple[LstmModel, CmvnStats | None, list[str] | None]:
    if len(raw) < _PREFIX.size:
        raise ModelFormatError(f"{source}: truncated at byte offset {len(raw)}")
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise ModelFormatError(f"{source}: unsupported version {version} at byte offset 4")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise ModelFormatError(f"{source}: header runs past end of file at byte offset {len(raw)}")
    try:
        header = json.loads(raw[_PREFIX.size : start].decode("utf-8"))
        arch = header["architecture"]
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise ModelFormatError(f"{source}: unreadable header at byte offset {_PREFIX.size} ({exc})") from exc

    payload = raw[start:]
    params: dict[str, np.ndarray] = {}
    quant_bits: dict[str, int] = {}
    for e in entries:
        shape = tuple(e["shape"])
        count = int(np.prod(shape))
        lo, hi = e["offset"], e["offset"] + e["length"]
        if hi > len(payload):
            raise ModelFormatError(f"{source}: tensor {e['name']} ends at byte offset {start + hi}, file has {len(raw)}")
        chunk = payload[lo:hi]
        if e["n_bits"] >= 32:
            if len(chunk) != 4 * count:
                raise ModelFormatError(f"{source}: tensor {e['name']} has {len(chunk)} bytes at offset {start + lo}")
            params[e["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        else:
            if len(chunk) != packed_size(count, e["n_bits"]):
                raise ModelFormatError(f"{source}: tensor {e['name']} has {len(chunk)} bytes at offset {start + lo}")
            codes = unpack_codes(chunk, e["n_bits"], count).reshape(shape)
            q = QuantizedTensor(codes, int(e["n_bits"]), float(e["alpha"]), float(e["beta"]))
            params[e["name"]] = dequantize(q)
            quant_bits[e["name"]] = q.n_bits
    model = LstmModel(
        input_size=arch["input_size"],
        hidden_size=arch["hidden_size"],
        num_layers=arch["num_layers"],
        num_classes=arch["num_classes"],
        dropout=arch["dropout"],
        params=params,
        factorized=arch["factorized"],
        quant_bits=quant_bits,
        input_bits=arch["input_bits"],
    )
    cmvn = header.get("cmvn")
    stats = None if cmvn is None else CmvnStats(np.array(cmvn["mean"]), np.array(cmvn["std"]))
    return model, stats, header.get("class_names")


def load_model(path) -> tuple[LstmModel, CmvnStats | None, list[str] | None]:
    """Returns ``(model, cmvn_stats, class_names)``."""
    return decode_model(Path(path).read_bytes(), str(path))


def frozen_codes(model: LstmModel) -> dict[str, QuantizedTensor]:
    """The codes that :func:`save_model` would write for each quantized tensor."""
    return {k: quantize(model.params[k], b) for k, b in model.quant_bits.items()}
