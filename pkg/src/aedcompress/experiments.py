"""Desk-scale compression study on the synthetic corpus.

One call to :func:`run_seed` trains a baseline, then measures post-mortem
(PM) and quantization-trained (QT) variants at several bit widths, plus the
low-rank + 8-bit pipeline. :func:`summarize` reduces a list of per-seed runs
to medians.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SynthConfig, load_synthetic_splits
from .lowrank import factorize_model
from .lstm import init_model
from .metrics import evaluate, size_report
from .quant import quantize_model
from .train import TrainConfig, finetune_quantized, predict, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    hidden: int = 16
    layers: int = 3
    dropout: float = 0.2
    tau: float = 0.6
    finetune_epochs: int = 20
    pm_bits: tuple[int, ...] = (16, 8, 4)
    qt_bits: tuple[int, ...] = (8, 4)
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class SeedResult:
    seed: int
    baseline_auc: float
    pm_auc: dict[int, float]
    qt_auc: dict[int, float]
    lowrank_auc: float
    lowrank_pm8_auc: float
    lowrank_qt8_auc: float
    ranks: dict[str, int]
    payload_ratio: float
    baseline_epochs: int
    seconds: float

    def as_dict(self) -> dict:
        return asdict(self)


def _avg_auc(model, data) -> float:
    return evaluate(predict(model, data), data.labels).avg_auc


def run_seed(seed: int, config: StudyConfig = StudyConfig()) -> SeedResult:
    start = time.perf_counter()
    synth = SynthConfig(**{**asdict(config.synth), "seed": seed})
    tr, va, te = load_synthetic_splits(synth)
    model = init_model(synth.dim, config.hidden, config.layers, synth.classes, config.dropout, seed=seed)
    base, history = train(model, tr, va, TrainConfig(seed=seed))
    ft = TrainConfig(epochs=config.finetune_epochs, seed=seed)

    pm_auc = {b: _avg_auc(quantize_model(base, b), te) for b in config.pm_bits}
    qt_auc = {}
    for b in config.qt_bits:
        qt, _ = finetune_quantized(quantize_model(base, b), tr, va, ft)
        qt_auc[b] = _avg_auc(qt, te)

    low, ranks = factorize_model(base, config.tau, return_ranks=True)
    low8 = quantize_model(low, 8)
    low8_qt, _ = finetune_quantized(low8, tr, va, ft)
    payload = size_report(low8).weight_bytes / size_report(base).weight_bytes

    result = SeedResult(
        seed=seed,
        baseline_auc=_avg_auc(base, te),
        pm_auc=pm_auc,
        qt_auc=qt_auc,
        lowrank_auc=_avg_auc(low, te),
        lowrank_pm8_auc=_avg_auc(low8, te),
        lowrank_qt8_auc=_avg_auc(low8_qt, te),
        ranks=ranks,
        payload_ratio=payload,
        baseline_epochs=len(history.epochs),
        seconds=time.perf_counter() - start,
    )
    log.info("seed %d done in %.0f s", seed, result.seconds)
    return result


def summarize(results: list[SeedResult]) -> dict[str, float]:
    """Medians across seeds. Gaps are PM minus QT, so positive means QT helped."""
    med = lambda xs: float(np.median(xs))
    out = {
        "baseline_auc": med([r.baseline_auc for r in results]),
        "lowrank_auc": med([r.lowrank_auc for r in results]),
        "lowrank_pm8_auc": med([r.lowrank_pm8_auc for r in results]),
        "lowrank_qt8_auc": med([r.lowrank_qt8_auc for r in results]),
        "lowrank_qt8_degradation": med([r.lowrank_qt8_auc - r.baseline_auc for r in results]),
        "payload_ratio": med([r.payload_ratio for r in results]),
    }
    for b in results[0].pm_auc:
        out[f"pm{b}_auc"] = med([r.pm_auc[b] for r in results])
    for b in results[0].qt_auc:
        out[f"qt{b}_auc"] = med([r.qt_auc[b] for r in results])
        out[f"gap{b}"] = med([r.pm_auc[b] - r.qt_auc[b] for r in results])
    return out
