"""Command line pipeline: synth -> train -> factorize -> quantize -> eval.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Every subcommand accepts ``--config FILE`` (JSON object keyed by the flag
destination names, e.g. ``{"epochs": 50, "batch_size": 16}``); explicit
flags override the file.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (
    FeatureFormatError,
    SynthConfig,
    apply_cmvn,
    compute_cmvn,
    load_dataset,
    read_manifest,
    split,
    synth_dataset,
)
from .linalg import SvdConvergenceError
from .lowrank import factorize_model
from .lstm import init_model
from .metrics import evaluate, size_report
from .modelio import ModelFormatError, atomic_write, load_model, save_model
from .quant import quantize_model
from .train import LossConfig, TrainConfig, finetune_quantized, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _splits(manifest: str, split_seed: int, cmvn=None):
    records = read_manifest(manifest)
    data = load_dataset(records)
    parts = dict(zip(SPLITS, split(data, seed=split_seed)))
    if cmvn is None:
        cmvn = compute_cmvn(parts["train"])
    return {k: apply_cmvn(v, cmvn) for k, v in parts.items()}, cmvn


def _class_weights(spec: str | None, labels: np.ndarray) -> LossConfig:
    if spec is None:
        return LossConfig()
    if spec == "balanced":
        return LossConfig.balanced(labels)
    try:
        return LossConfig([float(v) for v in spec.split(",")])
    except ValueError as exc:
        raise UsageError(f"--class-weights expects 'balanced' or comma-separated numbers: {exc}") from exc


def _train_config(args, mode="full") -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, patience=args.patience,
        lr=args.lr, clip_norm=args.clip_norm, mode=mode,
    )


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        classes=args.classes, clips_per_class=args.clips_per_class, negatives=args.negatives,
        frames=args.frames, dim=args.dim, noise=args.noise, amplitude=args.amplitude,
        jitter=args.jitter, cooccurrence=args.cooccurrence, seed=args.seed,
    )
    records = synth_dataset(cfg, args.out)
    print(f"wrote {len(records)} clips and {Path(args.out) / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    parts, cmvn = _splits(args.manifest, args.split_seed)
    tr = parts["train"]
    model = init_model(
        input_size=tr.features[0].shape[1], hidden_size=args.hidden, num_layers=args.layers,
        num_classes=tr.num_classes, dropout=args.dropout, seed=args.seed,
    )
    log_buf = io.StringIO()
    model, history = train(model, tr, parts["val"], _train_config(args), _class_weights(args.class_weights, tr.labels),
                           log_file=log_buf)
    save_model(args.out, model, cmvn, tr.class_names)
    atomic_write(args.log or f"{args.out}.log", log_buf.getvalue().encode("utf-8"))
    print(f"trained {len(history.epochs)} epochs, best epoch {history.best_epoch}; saved {args.out}")
    return EXIT_OK


def cmd_factorize(args) -> int:
    if not 0.0 < args.tau <= 1.0:
        raise UsageError(f"--tau must lie in (0, 1], got {args.tau}")
    model, cmvn, names = load_model(args.model)
    if model.factorized or model.quantized:
        raise UsageError("factorize needs a full-precision, unfactorized model")
    out, ranks = factorize_model(model, args.tau, return_ranks=True)
    save_model(args.out, out, cmvn, names)
    for name, r in ranks.items():
        print(f"{name} rank {r}")
    before, after = size_report(model), size_report(out)
    print(f"weights {before.weight_mb:.4f} MB -> {after.weight_mb:.4f} MB")
    return EXIT_OK


def cmd_quantize(args) -> int:
    if args.bits not in (4, 8) and not args.allow_any_bits:
        raise UsageError(f"--bits must be 4 or 8 (pass --allow-any-bits for 1..16), got {args.bits}")
    if not 1 <= args.bits <= 16:
        raise UsageError(f"--bits must be in 1..16, got {args.bits}")
    if args.mode == "qt" and not args.manifest:
        raise UsageError("--mode qt needs --manifest for fine-tuning")
    model, cmvn, names = load_model(args.model)
    if model.quantized:
        raise UsageError("model is already quantized")
    qmodel = quantize_model(model, args.bits)
    if args.mode == "qt":
        parts, _ = _splits(args.manifest, args.split_seed, cmvn)
        tr = parts["train"]
        log_buf = io.StringIO()
        qmodel, _ = finetune_quantized(qmodel, tr, parts["val"], _train_config(args, "qt-finetune"),
                                       _class_weights(args.class_weights, tr.labels), log_file=log_buf)
        atomic_write(args.log or f"{args.out}.log", log_buf.getvalue().encode("utf-8"))
    save_model(args.out, qmodel, cmvn, names)
    rep = size_report(qmodel)
    print(f"{args.bits}-bit {args.mode}: weights {rep.weight_mb:.4f} MB, total {rep.total_mb:.4f} MB; saved {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cmvn, names = load_model(args.model)
    parts, _ = _splits(args.manifest, args.split_seed, cmvn)
    data = parts[args.split]
    mb = size_report(model).total_mb
    report = evaluate(predict(model, data), data.labels, class_names=names or data.class_names, params_mb=mb)
    print(report.header())
    print(report.row())
    if args.report:
        lines = "".join(json.dumps(r) + "\n" for r in report.records(args.name or str(args.model), args.split))
        atomic_write(args.report, lines.encode("utf-8"))
    if args.det_dir:
        out = Path(args.det_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, curve in zip(report.class_names, report.curves):
            atomic_write(out / f"det_{name}.csv", curve.to_csv().encode("utf-8"))
    return EXIT_OK


def _add_train_flags(p, epochs: int) -> None:
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--class-weights", default=None, help="'balanced' or comma-separated per-class weights")
    p.add_argument("--log", default=None, help="metrics log path (default: OUT.log)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aedcompress", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic event corpus")
    defaults = SynthConfig()
    p.add_argument("--out", required=True)
    for name in ("classes", "clips_per_class", "negatives", "frames", "dim", "jitter", "seed"):
        p.add_argument(f"--{name.replace('_', '-')}", type=int, default=getattr(defaults, name))
    for name in ("noise", "amplitude", "cooccurrence"):
        p.add_argument(f"--{name}", type=float, default=getattr(defaults, name))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a full-precision baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--dropout", type=float, default=0.2)
    _add_train_flags(p, epochs=200)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("factorize", help="low-rank factorize a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("quantize", help="quantize post-mortem (pm) or with quantization training (qt)")
    p.add_argument("--model", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--mode", choices=("pm", "qt"), default="pm")
    p.add_argument("--allow-any-bits", action="store_true")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", required=True)
    _add_train_flags(p, epochs=20)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="AUC/EER report on one split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write JSON-lines metric records here")
    p.add_argument("--det-dir", default=None, help="dump per-class DET curves as CSV here")
    p.add_argument("--name", default=None, help="model name used in the records")
    p.set_defaults(func=cmd_eval)

    for action in sub.choices.values():
        action.add_argument("--config", default=None, help="JSON file of flag defaults")
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FeatureFormatError, ModelFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SvdConvergenceError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
