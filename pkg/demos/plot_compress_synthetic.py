"""
Compressing a detector trained on synthetic events
==================================================

Train a small LSTM on the synthetic corpus, then compare post-mortem
quantization (PM), quantization training (QT), low-rank factorization and
their combination. The printed rows follow the usual results-table layout:
size, per-class AUC and EER with their averages. Lower is better.

Takes a few minutes on one core.
"""

import aedcompress as ac

cfg = ac.SynthConfig(seed=0)
train_set, val_set, test_set = ac.load_synthetic_splits(cfg)
print(f"{len(train_set)} training clips of {cfg.frames} frames x {cfg.dim} features")

model = ac.init_model(cfg.dim, hidden_size=16, num_layers=3, num_classes=cfg.classes, seed=0)
model, history = ac.train(model, train_set, val_set, ac.TrainConfig(seed=0))
print(f"baseline: {len(history.epochs)} epochs, best at epoch {history.best_epoch}")


def report(name, m):
    rep = ac.evaluate(ac.predict(m, test_set), test_set.labels, class_names=cfg.class_names,
                      params_mb=ac.size_report(m).total_mb)
    print(f"{name:18s} {rep.row()}")
    return rep


print(" " * 18, ac.evaluate(ac.predict(model, test_set), test_set.labels, class_names=cfg.class_names).header())
report("baseline", model)

# quantize after training, then fine-tune through the fake-quant path
finetune = ac.TrainConfig(epochs=20, seed=0)
for bits in (8, 4):
    pm = ac.quantize_model(model, bits)
    report(f"{bits}-bit PM", pm)
    qt, _ = ac.finetune_quantized(pm, train_set, val_set, finetune)
    report(f"{bits}-bit QT", qt)

# keep 60% of the squared singular-value mass in every layer
low, ranks = ac.factorize_model(model, tau=0.6, return_ranks=True)
print("ranks:", ranks)
report("tau=0.6", low)
low8 = ac.quantize_model(low, 8)
report("tau=0.6 8-bit PM", low8)
low8_qt, _ = ac.finetune_quantized(low8, train_set, val_set, finetune)
report("tau=0.6 8-bit QT", low8_qt)
