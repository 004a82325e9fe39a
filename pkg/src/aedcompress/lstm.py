"""Stacked LSTM clip classifier with exact backpropagation through time.

Parameters live in a flat ``dict`` keyed by name. Layer ``l`` of a full model
owns ``l{l}.w_x`` (4h x d_in), ``l{l}.w_h`` (4h x h) and ``l{l}.b`` (4h).
A factorized model replaces the two matrices by factors:

* ``l{l}.z_h`` (4h x r_l) and ``l{l}.v_h`` (h x r_l) with ``w_h ~ z_h v_h^T``;
* ``l{l}.z_x`` (4h x r) paired with the basis of the hidden state it reads:
  ``l{l-1}.v_h`` for l >= 1, and its own ``l0.v_x`` (d x r_x) for layer 0.

Gate blocks along the 4h axis are ordered input, forget, cell candidate,
output. The clip score is ``sigmoid(head.w @ h_T + head.b)`` on the top
layer's last hidden state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .quant import fake_quant, quantize_inputs, ste_backward


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmModel:
    input_size: int
    hidden_size: int
    num_layers: int
    num_classes: int
    dropout: float
    params: dict[str, np.ndarray]
    factorized: bool = False
    quant_bits: dict[str, int] = field(default_factory=dict)
    input_bits: int | None = None

    def copy(self) -> LstmModel:
        out = copy.copy(self)
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.quant_bits = dict(self.quant_bits)
        return out

    @property
    def quantized(self) -> bool:
        return bool(self.quant_bits)

    def ranks(self) -> dict[str, int]:
        """Rank of every low-rank factor (empty for a full model)."""
        return {k: v.shape[1] for k, v in self.params.items() if self.factorized and k.split(".")[1].startswith("v_")}

    def effective_params(self) -> dict[str, np.ndarray]:
        """Parameters as seen by the forward pass (fake-quantized where configured)."""
        return {
            k: fake_quant(v, self.quant_bits[k]) if k in self.quant_bits else v
            for k, v in self.params.items()
        }

    def input_basis(self, layer: int) -> str | None:
        """Name of the basis that the input matrix of ``layer`` is factored on."""
        if not self.factorized:
            return None
        return "l0.v_x" if layer == 0 else f"l{layer - 1}.v_h"


def init_model(
    input_size: int = 64,
    hidden_size: int = 256,
    num_layers: int = 3,
    num_classes: int = 3,
    dropout: float = 0.2,
    seed: int = 0,
) -> LstmModel:
    """Uniform(-k, k) weights with k = 1/sqrt(fan_in); forget-gate bias 1, other biases 0."""
    if min(input_size, hidden_size, num_layers, num_classes) < 1:
        raise ValueError("model dimensions must all be >= 1")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")
    rng = np.random.default_rng(seed)
    h = hidden_size
    params: dict[str, np.ndarray] = {}
    for layer in range(num_layers):
        d_in = input_size if layer == 0 else h
        params[f"l{layer}.w_x"] = rng.uniform(-1, 1, (4 * h, d_in)) / np.sqrt(d_in)
        params[f"l{layer}.w_h"] = rng.uniform(-1, 1, (4 * h, h)) / np.sqrt(h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        params[f"l{layer}.b"] = b
    params["head.w"] = rng.uniform(-1, 1, (num_classes, h)) / np.sqrt(h)
    params["head.b"] = np.zeros(num_classes)
    return LstmModel(input_size, hidden_size, num_layers, num_classes, dropout, params)


def param_count(model: LstmModel) -> dict[str, int]:
    """Element count per tensor plus ``"total"``; unaffected by quantization."""
    counts = {k: int(v.size) for k, v in model.params.items()}
    counts["total"] = sum(counts.values())
    return counts


@dataclass
class LayerCache:
    inputs: np.ndarray  # (B, T, d_in) after dropout of the layer below
    proj_in: np.ndarray | None  # (B, T, r) inputs @ basis, factorized only
    gates: np.ndarray  # (B, T, 4h) post-activation [i, f, g, o]
    c: np.ndarray  # (B, T + 1, h), c[:, 0] = 0
    h: np.ndarray  # (B, T + 1, h), h[:, 0] = 0
    proj_h: np.ndarray | None  # (B, T, r) h_{t-1} @ v_h, factorized only
    mask: np.ndarray | None  # (B, T, h) inverted-dropout mask on this layer's output


@dataclass
class ForwardTrace:
    layers: list[LayerCache]
    weights: dict[str, np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    batched: bool
    signature: tuple


def _signature(model: LstmModel) -> tuple:
    return (model.factorized, tuple((k, v.shape) for k, v in model.params.items()))


def forward(
    model: LstmModel,
    features: np.ndarray,
    *,
    train: bool = False,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network on one clip ``(T, d)`` or a batch ``(B, T, d)``.

    In train mode inverted dropout (drawn from ``rng`` or ``seed``) is
    applied to the output sequence of every layer that feeds another LSTM
    layer. Returns per-class probabilities ``(C,)`` or ``(B, C)`` and the
    trace needed by :func:`backward`.
    """
    x = np.asarray(features, dtype=np.float64)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError(f"features must be (T, d) or (B, T, d) with T >= 1, got {np.shape(features)}")
    if x.shape[2] != model.input_size:
        raise ValueError(f"feature dim {x.shape[2]} does not match model input size {model.input_size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    if model.input_bits is not None:
        x = quantize_inputs(x, model.input_bits)
    if train and model.dropout > 0 and rng is None:
        rng = np.random.default_rng(seed)

    w = model.effective_params()
    hs = model.hidden_size
    batch, steps, _ = x.shape
    caches = []
    layer_in = x
    for layer in range(model.num_layers):
        basis = model.input_basis(layer)
        if basis is None:
            proj_in = None
            pre_in = layer_in @ w[f"l{layer}.w_x"].T
            w_h = w[f"l{layer}.w_h"]
        else:
            proj_in = layer_in @ w[basis]
            pre_in = proj_in @ w[f"l{layer}.z_x"].T
            z_h, v_h = w[f"l{layer}.z_h"], w[f"l{layer}.v_h"]
        pre_in = pre_in + w[f"l{layer}.b"]

        gates = np.empty((batch, steps, 4 * hs))
        c = np.zeros((batch, steps + 1, hs))
        h = np.zeros((batch, steps + 1, hs))
        proj_h = None if basis is None else np.empty((batch, steps, v_h.shape[1]))
        for t in range(steps):
            if basis is None:
                pre = pre_in[:, t] + h[:, t] @ w_h.T
            else:
                proj_h[:, t] = h[:, t] @ v_h
                pre = pre_in[:, t] + proj_h[:, t] @ z_h.T
            g = gates[:, t]
            g[:, : 2 * hs] = sigmoid(pre[:, : 2 * hs])
            g[:, 2 * hs : 3 * hs] = np.tanh(pre[:, 2 * hs : 3 * hs])
            g[:, 3 * hs :] = sigmoid(pre[:, 3 * hs :])
            c[:, t + 1] = g[:, hs : 2 * hs] * c[:, t] + g[:, :hs] * g[:, 2 * hs : 3 * hs]
            h[:, t + 1] = g[:, 3 * hs :] * np.tanh(c[:, t + 1])

        out = h[:, 1:]
        mask = None
        if train and model.dropout > 0 and layer < model.num_layers - 1:
            keep = 1.0 - model.dropout
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
        caches.append(LayerCache(layer_in, proj_in, gates, c, h, proj_h, mask))
        layer_in = out

    logits = caches[-1].h[:, -1] @ w["head.w"].T + w["head.b"]
    probs = sigmoid(logits)
    trace = ForwardTrace(caches, w, logits, probs, batched, _signature(model))
    return (probs if batched else probs[0]), trace


def backward(model: LstmModel, trace: ForwardTrace, grad_probs: np.ndarray) -> dict[str, np.ndarray]:
    """Exact BPTT gradients of a scalar loss given its gradient w.r.t. the probabilities.

    Gradients are keyed like ``model.params``. Quantized tensors receive the
    gradient of their fake-quantized value (straight-through estimator).
    """
    if trace.signature != _signature(model):
        raise ValueError("trace was produced by a model with a different structure")
    g_out = np.asarray(grad_probs, dtype=np.float64)
    if not trace.batched:
        g_out = g_out[None]
    if g_out.shape != trace.probs.shape:
        raise ValueError(f"grad_probs shape {np.shape(grad_probs)} does not match probabilities {trace.probs.shape}")

    w = trace.weights
    hs = model.hidden_size
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}

    p = trace.probs
    d_logits = g_out * p * (1.0 - p)
    top = trace.layers[-1]
    grads["head.w"] = d_logits.T @ top.h[:, -1]
    grads["head.b"] = d_logits.sum(axis=0)

    batch, steps = top.gates.shape[:2]
    d_out = np.zeros((batch, steps, hs))
    d_out[:, -1] = d_logits @ w["head.w"]

    for layer in reversed(range(model.num_layers)):
        cache = trace.layers[layer]
        basis = model.input_basis(layer)
        if basis is None:
            w_h = w[f"l{layer}.w_h"]
        else:
            z_h, v_h = w[f"l{layer}.z_h"], w[f"l{layer}.v_h"]

        gates, c = cache.gates, cache.c
        d_pre = np.empty_like(gates)
        dh_next = np.zeros((batch, hs))
        dc_next = np.zeros((batch, hs))
        for t in reversed(range(steps)):
            i = gates[:, t, :hs]
            f = gates[:, t, hs : 2 * hs]
            g = gates[:, t, 2 * hs : 3 * hs]
            o = gates[:, t, 3 * hs :]
            tc = np.tanh(c[:, t + 1])
            dh = d_out[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dp = d_pre[:, t]
            dp[:, :hs] = dc * g * i * (1.0 - i)
            dp[:, hs : 2 * hs] = dc * c[:, t] * f * (1.0 - f)
            dp[:, 2 * hs : 3 * hs] = dc * i * (1.0 - g * g)
            dp[:, 3 * hs :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            if basis is None:
                dh_next = dp @ w_h
            else:
                dh_next = (dp @ z_h) @ v_h.T

        h_prev = cache.h[:, :-1]
        grads[f"l{layer}.b"] += d_pre.sum(axis=(0, 1))
        if basis is None:
            grads[f"l{layer}.w_h"] += np.einsum("btk,btj->kj", d_pre, h_prev)
            grads[f"l{layer}.w_x"] += np.einsum("btk,btj->kj", d_pre, cache.inputs)
            d_in = d_pre @ w[f"l{layer}.w_x"]
        else:
            grads[f"l{layer}.z_h"] += np.einsum("btk,btr->kr", d_pre, cache.proj_h)
            grads[f"l{layer}.v_h"] += np.einsum("btj,btr->jr", h_prev, d_pre @ z_h)
            z_x = w[f"l{layer}.z_x"]
            grads[f"l{layer}.z_x"] += np.einsum("btk,btr->kr", d_pre, cache.proj_in)
            d_proj = d_pre @ z_x
            grads[basis] += np.einsum("btj,btr->jr", cache.inputs, d_proj)
            d_in = d_proj @ w[basis].T

        if layer > 0:
            below = trace.layers[layer - 1]
            d_out = d_in if below.mask is None else d_in * below.mask

    return {k: ste_backward(g) if k in model.quant_bits else g for k, g in grads.items()}
