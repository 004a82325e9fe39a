"""Min/max uniform n-bit quantization, fake quantization and bit packing.

A tensor ``v`` is mapped onto ``2**n`` evenly spaced levels spanning
``[min(v), max(v)]``::

    beta  = min(v)
    alpha = max(v) - min(v)
    code  = round((v - beta) / alpha * (2**n - 1))      # half away from zero
    Q(v)  = alpha * code / (2**n - 1) + beta

``alpha`` and ``beta`` stay in float64. Training through ``Q`` uses the
straight-through estimator: the gradient of the quantized surrogate is used
as the gradient of the float master weight.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

FULL_PRECISION_BITS = 32


@dataclass(frozen=True)
class QuantizedTensor:
    codes: np.ndarray  # unsigned ints in [0, 2**n_bits - 1], tensor shape
    n_bits: int
    alpha: float
    beta: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape

    @property
    def levels(self) -> int:
        return (1 << self.n_bits) - 1


def _check_bits(n_bits: int) -> None:
    if not isinstance(n_bits, (int, np.integer)) or not 1 <= n_bits <= 16:
        raise ValueError(f"n_bits must be an integer in 1..16, got {n_bits!r}")


def _scale_offset(v: np.ndarray) -> tuple[float, float]:
    beta = float(v.min())
    alpha = float(v.max()) - beta
    if alpha == 0.0:
        return 1.0, beta
    # Nudge alpha so that (beta + alpha) - beta == alpha holds exactly in
    # float64. Requantizing a dequantized tensor then recovers the same
    # alpha and beta, which makes fake_quant bitwise idempotent.
    for _ in range(8):
        settled = (beta + alpha) - beta
        if settled == alpha:
            break
        alpha = settled
    return alpha, beta


def quantize(v: np.ndarray, n_bits: int) -> QuantizedTensor:
    """Quantize ``v`` to ``n_bits`` with per-tensor scale and offset.

    A constant tensor gets ``alpha = 1`` and all-zero codes, so it
    dequantizes back to itself.
    """
    _check_bits(n_bits)
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize a tensor with non-finite values")
    alpha, beta = _scale_offset(v)
    levels = (1 << n_bits) - 1
    if float(v.max()) == beta:
        codes = np.zeros(v.shape, dtype=np.uint32)
    else:
        scaled = (v - beta) / alpha * levels
        # scaled >= 0, so floor(x + 0.5) rounds half away from zero
        codes = np.clip(np.floor(scaled + 0.5), 0, levels).astype(np.uint32)
    return QuantizedTensor(codes=codes, n_bits=int(n_bits), alpha=alpha, beta=beta)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.alpha * (q.codes / q.levels) + q.beta


def fake_quant(v: np.ndarray, n_bits: int) -> np.ndarray:
    """``dequantize(quantize(v, n_bits))``; the identity for ``n_bits >= 32``."""
    if n_bits >= FULL_PRECISION_BITS:
        return np.asarray(v, dtype=np.float64)
    return dequantize(quantize(v, n_bits))


def ste_backward(upstream_grad: np.ndarray) -> np.ndarray:
    """Straight-through estimator: pass the gradient through unchanged."""
    return upstream_grad


def quantize_inputs(x: np.ndarray, n_bits: int) -> np.ndarray:
    """Fake-quantize features with a separate min/max per clip.

    ``x`` is one clip ``(T, d)`` or a batch ``(B, T, d)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return fake_quant(x, n_bits)
    return np.stack([fake_quant(clip, n_bits) for clip in x])


def weight_names(model) -> list[str]:
    """Names of the quantizable weight matrices (everything except biases and the head)."""
    return [name for name in model.params if not name.startswith("head.") and not name.endswith(".b")]


def quantize_model(model, n_bits: int, targets: Iterable[str] | None = None, *, inputs: bool = True):
    """Return a copy of ``model`` whose weight matrices go through n-bit fake quantization.

    ``targets`` defaults to every LSTM weight matrix: ``w_x``/``w_h`` for a
    full model, ``z_h``/``v_h``/``z_x``/``v_x`` for a factorized one. Biases
    and the classifier head stay full precision. The float tensors are kept
    as master weights for quantization training; codes are frozen when the
    model is written to disk. ``n_bits = 32`` returns an unquantized copy.
    """
    out = model.copy()
    if n_bits >= FULL_PRECISION_BITS:
        out.quant_bits = {}
        out.input_bits = None
        return out
    _check_bits(n_bits)
    allowed = weight_names(model)
    names = allowed if targets is None else list(targets)
    for name in names:
        if name not in allowed:
            raise ValueError(f"{name!r} is not a quantizable weight of this model; choose from {allowed}")
    out.quant_bits = {name: int(n_bits) for name in names}
    out.input_bits = int(n_bits) if inputs else None
    return out


def pack_codes(codes: np.ndarray, n_bits: int) -> bytes:
    """Pack codes LSB-first into a little-endian bit stream.

    8-bit codes take one byte each; 4-bit codes share a byte, low nibble
    first, with a zero pad nibble at the end when the count is odd.
    """
    _check_bits(n_bits)
    flat = np.ascontiguousarray(codes, dtype=np.uint32).ravel()
    if flat.size and int(flat.max()) >= (1 << n_bits):
        raise ValueError(f"code {int(flat.max())} does not fit in {n_bits} bits")
    if n_bits == 8:
        return flat.astype(np.uint8).tobytes()
    if n_bits == 16:
        return flat.astype("<u2").tobytes()
    bits = (flat[:, None] >> np.arange(n_bits, dtype=np.uint32)) & 1
    return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_codes(data: bytes, n_bits: int, count: int) -> np.ndarray:
    _check_bits(n_bits)
    need = packed_size(count, n_bits)
    if len(data) < need:
        raise ValueError(f"packed buffer has {len(data)} bytes, need {need} for {count} {n_bits}-bit codes")
    if n_bits == 8:
        return np.frombuffer(data, dtype=np.uint8, count=count).astype(np.uint32)
    if n_bits == 16:
        return np.frombuffer(data, dtype="<u2", count=count).astype(np.uint32)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=need), bitorder="little")
    bits = bits[: count * n_bits].reshape(count, n_bits).astype(np.uint32)
    return (bits << np.arange(n_bits, dtype=np.uint32)).sum(axis=1).astype(np.uint32)


def packed_size(count: int, n_bits: int) -> int:
    return (count * n_bits + 7) // 8
