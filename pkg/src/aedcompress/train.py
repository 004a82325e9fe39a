"""Weighted binary cross-entropy, Adam, and the training / quantization-training loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .lstm import LstmModel, backward, forward
from .metrics import evaluate

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass
class LossConfig:
    class_weights: np.ndarray | list[float] | None = None

    def weights(self, num_classes: int) -> np.ndarray:
        if self.class_weights is None:
            return np.ones(num_classes)
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.shape != (num_classes,) or np.any(w <= 0):
            raise ValueError(f"class weights must be {num_classes} positive values, got {w.tolist()}")
        return w

    @classmethod
    def balanced(cls, labels: np.ndarray) -> LossConfig:
        """Positive weight = negatives / positives per class."""
        labels = np.asarray(labels)
        pos = labels.sum(axis=0)
        return cls(np.where(pos > 0, (len(labels) - pos) / np.maximum(pos, 1), 1.0))


def bce_loss(probs: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy ``-sum_c w_c y_c log f_c + (1 - y_c) log(1 - f_c)``.

    ``w_c`` scales only the positive term. Works on one clip ``(C,)`` or a
    batch ``(B, C)`` (summed). Returns the loss and its gradient w.r.t.
    ``probs``, both computed on probabilities clamped to [1e-12, 1 - 1e-12].
    """
    f = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(f.shape[-1]) if w is None else np.asarray(w, dtype=np.float64)
    value = -np.sum(w * y * np.log(f) + (1.0 - y) * np.log(1.0 - f))
    grad = -w * y / f + (1.0 - y) / (1.0 - f)
    return float(value), grad


class Adam:
    """Bias-corrected Adam over a dict of named arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for k, g in grads.items():
            if params[k].shape != g.shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    patience: int = 10
    lr: float = 1e-3
    clip_norm: float = 5.0
    mode: str = "full"  # "full" or "qt-finetune"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.mode not in ("full", "qt-finetune"):
            raise ValueError(f"unknown training mode {self.mode!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: list[float]
    val_eer: list[float]

    @property
    def val_avg_auc(self) -> float:
        return float(np.mean(self.val_auc)) if self.val_auc else float("nan")

    def log_line(self) -> str:
        auc = " ".join(f"{v:.3f}" for v in self.val_auc)
        eer = " ".join(f"{v:.3f}" for v in self.val_eer)
        return (f"epoch {self.epoch} train_loss {self.train_loss:.6f} "
                f"val_auc [{auc}] avg {self.val_avg_auc:.3f} val_eer [{eer}]")


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def to_text(self) -> str:
        return "".join(r.log_line() + "\n" for r in self.epochs)


def predict(model: LstmModel, data: Dataset, batch_size: int = 256) -> np.ndarray:
    """Inference-mode clip probabilities ``(N, C)``."""
    out = np.empty((len(data), model.num_classes))
    for idx, x in _batches(data, np.arange(len(data)), batch_size):
        out[idx] = forward(model, x)[0]
    return out


def _batches(data: Dataset, order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        lengths = {data.features[i].shape[0] for i in idx}
        if len(lengths) == 1:
            yield idx, np.stack([data.features[i] for i in idx])
        else:
            for i in idx:
                yield np.array([i]), data.features[i][None]


def batch_gradients(model, data, idx, weights, rng) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and gradients over the clips ``idx`` (sequences grouped by length)."""
    total = 0.0
    grads = None
    n = len(idx)
    groups: dict[int, list[int]] = {}
    for i in idx:
        groups.setdefault(data.features[i].shape[0], []).append(i)
    for length in sorted(groups):
        members = groups[length]
        x = np.stack([data.features[i] for i in members])
        y = data.labels[members]
        probs, trace = forward(model, x, train=True, rng=rng)
        value, g_probs = bce_loss(probs, y, weights)
        g = backward(model, trace, g_probs / n)
        total += value
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    return total / n, grads


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def _validate(model: LstmModel, val: Dataset | None) -> tuple[list[float], list[float]]:
    if val is None or len(val) == 0:
        return [], []
    labels = val.labels
    usable = [c for c in range(labels.shape[1]) if 0 < labels[:, c].sum() < len(labels)]
    if not usable:
        return [], []
    report = evaluate(predict(model, val)[:, usable], labels[:, usable])
    return report.auc, report.eer


def train(
    model: LstmModel,
    train_set: Dataset,
    val_set: Dataset | None = None,
    config: TrainConfig | None = None,
    loss_config: LossConfig | None = None,
    *,
    log_file=None,
) -> tuple[LstmModel, History]:
    """Mini-batch Adam training with early stopping on validation average AUC.

    The model is copied, never modified in place. With a validation set the
    returned model is the checkpoint with the lowest validation average AUC
    and training stops after ``patience`` epochs without improvement. In
    ``qt-finetune`` mode the model must carry quantized tensors; the forward
    pass then uses fake-quantized weights whose min/max are recomputed from
    the master weights every step, and gradients reach the masters through
    the straight-through estimator.
    """
    config = config or TrainConfig()
    loss_config = loss_config or LossConfig()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if train_set.num_classes != model.num_classes:
        raise ValueError(f"dataset has {train_set.num_classes} classes, model has {model.num_classes}")
    if config.mode == "qt-finetune" and not model.quantized:
        raise ValueError("qt-finetune mode needs a model with quantized tensors")

    weights = loss_config.weights(model.num_classes)
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = Adam(lr=config.lr)
    history = History()
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_score = np.inf
    stale = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grads = batch_gradients(model, train_set, idx, weights, rng)
            _clip(grads, config.clip_norm)
            opt.step(model.params, grads)
            losses.append(value * len(idx))
        auc_c, eer_c = _validate(model, val_set)
        record = EpochRecord(epoch, float(np.sum(losses) / len(order)), auc_c, eer_c)
        history.epochs.append(record)
        log.info(record.log_line())
        if log_file is not None:
            log_file.write(record.log_line() + "\n")

        if not auc_c:
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
            continue
        if record.val_avg_auc < best_score:
            best_score = record.val_avg_auc
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.params = best_params
    return model, history


def finetune_quantized(
    model: LstmModel,
    train_set: Dataset,
    val_set: Dataset | None = None,
    config: TrainConfig | None = None,
    loss_config: LossConfig | None = None,
    **kwargs,
) -> tuple[LstmModel, History]:
    """Quantization training: fine-tune the master weights of a quantized model.

    With zero epochs the result is the post-mortem quantized model itself.
    """
    if not model.quantized:
        raise ValueError("model has no quantized tensors to fine-tune")
    config = config or TrainConfig()
    config = TrainConfig(**{**config.__dict__, "mode": "qt-finetune"})
    return train(model, train_set, val_set, config, loss_config, **kwargs)
