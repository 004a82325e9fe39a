"""
The command-line pipeline
=========================

The same steps through the ``aedcompress`` command: generate features,
train, factorize, quantize with fine-tuning, evaluate. Each call below is
equivalent to a shell command such as

    aedcompress train --manifest work/manifest.jsonl --hidden 16 --epochs 30 --out work/base.aedm

A small corpus and few epochs keep this quick.
"""

import json
import tempfile
from pathlib import Path

from aedcompress.cli import main

work = Path(tempfile.mkdtemp(prefix="aedcompress-"))
manifest = str(work / "manifest.jsonl")


def run(*args):
    print("$ aedcompress", " ".join(map(str, args)))
    code = main([str(a) for a in args])
    assert code == 0, code


run("synth", "--out", work, "--clips-per-class", 100, "--negatives", 300, "--frames", 50, "--amplitude", 0.8)
run("train", "--manifest", manifest, "--hidden", 16, "--epochs", 30, "--out", work / "base.aedm")
run("factorize", "--model", work / "base.aedm", "--tau", 0.6, "--out", work / "low.aedm")
run("quantize", "--model", work / "low.aedm", "--bits", 8, "--mode", "qt", "--epochs", 5,
    "--manifest", manifest, "--out", work / "low8.aedm")
for name in ("base", "low", "low8"):
    run("eval", "--model", work / f"{name}.aedm", "--manifest", manifest,
        "--report", work / f"{name}.jsonl", "--name", name)

# the record files are JSON lines, one per class plus the average
for name in ("base", "low8"):
    avg = [json.loads(l) for l in (work / f"{name}.jsonl").read_text().splitlines()][-1]
    print(f"{name}: avg AUC {avg['auc']:.2f}%, {avg['params_mb']:.4f} MB")

# the model file starts with a readable JSON header
raw = (work / "low8.aedm").read_bytes()
print(raw[12:300].decode("utf-8", "replace"))
