"""DET curves, AUC, EER and model-size accounting.

AUC here is the area under the DET curve (miss rate against false-alarm
rate), so lower is better and a perfect detector scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lstm import LstmModel, param_count
from .quant import FULL_PRECISION_BITS

MB = float(2**20)


@dataclass(frozen=True)
class DetCurve:
    """Operating points ordered by increasing threshold.

    A clip is called positive when its score is strictly above the
    threshold. The first point (threshold -inf) is (FPR=1, FNR=0) and the
    last (threshold +inf) is (FPR=0, FNR=1).
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    fnr: np.ndarray

    def to_csv(self) -> str:
        rows = ["threshold,fpr,fnr"]
        rows += [f"{float(t)!r},{float(a)!r},{float(b)!r}" for t, a, b in zip(self.thresholds, self.fpr, self.fnr)]
        return "\n".join(rows) + "\n"


def det_curve(scores: np.ndarray, labels: np.ndarray) -> DetCurve:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("DET curve needs at least one positive and one negative clip")

    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate([[-np.inf], mids, [np.inf]])

    # counts of positives / negatives at or below each threshold
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    pos_cum = np.concatenate([[0], np.cumsum(labels[order])])
    below = np.searchsorted(s_sorted, thresholds, side="right")
    pos_below = pos_cum[below]
    neg_below = below - pos_below
    fnr = pos_below / n_pos
    fpr = (n_neg - neg_below) / n_neg
    return DetCurve(thresholds, fpr.astype(np.float64), fnr.astype(np.float64))


def auc(curve: DetCurve) -> float:
    """Trapezoidal area under FNR(FPR), in percent."""
    x, y = curve.fpr[::-1], curve.fnr[::-1]
    return float(100.0 * np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def eer(curve: DetCurve) -> float:
    """Error rate where FPR = FNR, linearly interpolated, in percent."""
    gap = curve.fpr - curve.fnr
    i = int(np.argmax(gap <= 0))
    if i == 0:
        return float(100.0 * curve.fpr[0])
    g0, g1 = gap[i - 1], gap[i]
    t = g0 / (g0 - g1)
    return float(100.0 * (curve.fpr[i - 1] + t * (curve.fpr[i] - curve.fpr[i - 1])))


@dataclass
class SizeReport:
    elements: dict[str, int]
    bits: dict[str, int]
    weight_names: list[str]
    quant_overhead_bytes: int = 0

    def tensor_bytes(self, name: str) -> float:
        return self.elements[name] * self.bits[name] / 8.0

    @property
    def total_bytes(self) -> float:
        return sum(self.tensor_bytes(k) for k in self.elements)

    @property
    def weight_bytes(self) -> float:
        """Bytes of the LSTM weight matrices (the quantizable payload)."""
        return sum(self.tensor_bytes(k) for k in self.weight_names)

    @property
    def total_mb(self) -> float:
        return self.total_bytes / MB

    @property
    def weight_mb(self) -> float:
        return self.weight_bytes / MB


def size_report(model: LstmModel, bits_map: dict[str, int] | int | None = None) -> SizeReport:
    """Storage size at the given bit widths.

    ``bits_map`` maps tensor name to bits; missing tensors count at 32 bits.
    An int applies one width to every tensor. ``None`` uses the model's own
    quantization state. Each quantized tensor also stores a float64 scale and
    offset, reported separately as ``quant_overhead_bytes``.
    """
    counts = param_count(model)
    counts.pop("total")
    if bits_map is None:
        bits_map = dict(model.quant_bits)
    elif isinstance(bits_map, int):
        bits_map = {k: bits_map for k in counts}
    unknown = set(bits_map) - set(counts)
    if unknown:
        raise ValueError(f"bits given for unknown tensors: {sorted(unknown)}")
    bits = {k: int(bits_map.get(k, FULL_PRECISION_BITS)) for k in counts}
    weights = [k for k in counts if not k.startswith("head.") and not k.endswith(".b")]
    overhead = 16 * sum(1 for b in bits.values() if b < FULL_PRECISION_BITS)
    return SizeReport(counts, bits, weights, overhead)


@dataclass
class EvalReport:
    class_names: list[str]
    auc: list[float]
    eer: list[float]
    params_mb: float
    curves: list[DetCurve] = field(default_factory=list, repr=False)

    @property
    def avg_auc(self) -> float:
        return float(np.mean(self.auc))

    @property
    def avg_eer(self) -> float:
        return float(np.mean(self.eer))

    def header(self) -> str:
        names = " ".join(f"{n:>8}" for n in self.class_names)
        return f"{'Params(MB)':>10} | AUC% {names} {'Avg':>8} | EER% {names} {'Avg':>8}"

    def row(self) -> str:
        a = " ".join(f"{v:8.2f}" for v in self.auc)
        e = " ".join(f"{v:8.2f}" for v in self.eer)
        return f"{self.params_mb:10.3f} |      {a} {self.avg_auc:8.2f} |      {e} {self.avg_eer:8.2f}"

    def records(self, model_name: str, split_name: str) -> list[dict]:
        rows = [
            {"model": model_name, "split": split_name, "class": n, "auc": a, "eer": e, "params_mb": self.params_mb}
            for n, a, e in zip(self.class_names, self.auc, self.eer)
        ]
        rows.append(
            {"model": model_name, "split": split_name, "class": "avg", "auc": self.avg_auc,
             "eer": self.avg_eer, "params_mb": self.params_mb}
        )
        return rows


def evaluate(scores: np.ndarray, labels: np.ndarray, *, class_names=None, params_mb: float = float("nan")) -> EvalReport:
    """Per-class DET AUC/EER for ``(N, C)`` scores and multi-hot labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    n_classes = scores.shape[1]
    names = list(class_names) if class_names is not None else [f"class{c}" for c in range(n_classes)]
    curves = [det_curve(scores[:, c], labels[:, c]) for c in range(n_classes)]
    return EvalReport(names, [auc(cv) for cv in curves], [eer(cv) for cv in curves], params_mb, curves)
