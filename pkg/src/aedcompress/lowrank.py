"""Rank selection and shared-basis low-rank factorization of a trained LSTM."""

from __future__ import annotations

import numpy as np

from .linalg import least_squares_project, svd
from .lstm import LstmModel


def select_rank(sigma: np.ndarray, tau: float) -> int:
    """Smallest r whose top-r squared singular values hold at least ``tau`` of the total energy."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise ValueError("sigma must be a non-empty vector")
    if np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
        raise ValueError("sigma must be non-negative and sorted in descending order")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    energy = np.cumsum(sigma**2)
    total = energy[-1]
    if total == 0.0:
        raise ValueError("rank is undefined for an all-zero spectrum")
    if tau == 1.0:
        return int(np.count_nonzero(sigma))
    r = int(np.searchsorted(energy, tau * total, side="left")) + 1
    return min(r, sigma.size)


def factorize_model(model: LstmModel, tau: float, *, return_ranks: bool = False):
    """Factorize every LSTM layer of a full-precision model.

    For layer l the recurrent matrix is truncated by SVD to ``z_h @ v_h.T``
    with ``z_h = U_r diag(sigma_r)``. The basis ``v_h`` is shared with the
    input matrix of layer l + 1, which is refit as ``w_x @ v_h``. The first
    layer's input matrix reads raw features, so it gets its own truncated SVD
    at the same ``tau``. Biases and the head stay as they are.
    """
    if model.factorized or model.quantized:
        raise ValueError("factorize_model expects a full, unquantized model")
    p = model.params
    out = model.copy()
    out.factorized = True
    params: dict[str, np.ndarray] = {}
    ranks: dict[str, int] = {}

    first = svd(p["l0.w_x"])
    r = select_rank(first.sigma, tau)
    ranks["l0.v_x"] = r
    params["l0.z_x"] = first.u[:, :r] * first.sigma[:r]
    params["l0.v_x"] = first.v[:, :r].copy()

    for layer in range(model.num_layers):
        rec = svd(p[f"l{layer}.w_h"])
        r = select_rank(rec.sigma, tau)
        ranks[f"l{layer}.v_h"] = r
        params[f"l{layer}.z_h"] = rec.u[:, :r] * rec.sigma[:r]
        params[f"l{layer}.v_h"] = rec.v[:, :r].copy()
        if layer > 0:
            params[f"l{layer}.z_x"] = least_squares_project(p[f"l{layer}.w_x"], params[f"l{layer - 1}.v_h"])
        params[f"l{layer}.b"] = p[f"l{layer}.b"].copy()

    params["head.w"] = p["head.w"].copy()
    params["head.b"] = p["head.b"].copy()
    out.params = _ordered(params, model.num_layers)
    return (out, ranks) if return_ranks else out


def _ordered(params: dict[str, np.ndarray], num_layers: int) -> dict[str, np.ndarray]:
    names = []
    for layer in range(num_layers):
        if layer == 0:
            names += ["l0.z_x", "l0.v_x"]
        else:
            names.append(f"l{layer}.z_x")
        names += [f"l{layer}.z_h", f"l{layer}.v_h", f"l{layer}.b"]
    names += ["head.w", "head.b"]
    return {k: params[k] for k in names}


def reconstruct_full(model: LstmModel) -> dict[str, np.ndarray]:
    """Dense ``w_x``/``w_h`` matrices implied by a factorized model."""
    if not model.factorized:
        return {k: v for k, v in model.params.items() if k.endswith((".w_x", ".w_h"))}
    p = model.params
    dense = {}
    for layer in range(model.num_layers):
        dense[f"l{layer}.w_h"] = p[f"l{layer}.z_h"] @ p[f"l{layer}.v_h"].T
        dense[f"l{layer}.w_x"] = p[f"l{layer}.z_x"] @ p[model.input_basis(layer)].T
    return dense
