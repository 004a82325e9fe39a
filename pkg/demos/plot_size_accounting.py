"""
How big is the detector?
========================

Counting stored elements for the default 3 x 256 LSTM on 64-dimensional
features, then seeing what 8-bit and 4-bit codes and a low-rank
factorization do to the byte count.
"""

import numpy as np

import aedcompress as ac

# the default architecture: 64 inputs, three layers of 256 cells, 3 events
model = ac.init_model(input_size=64, hidden_size=256, num_layers=3, num_classes=3)
counts = ac.param_count(model)
for name in ("l0.w_x", "l0.w_h", "l1.w_x", "head.w", "total"):
    print(f"{name:8s} {counts[name]:>9,d}")

# 32-bit floats, megabytes of 2**20 bytes
full = ac.size_report(model)
print(f"\n32-bit model: {full.total_mb:.3f} MB")

# quantizing the LSTM weight matrices shrinks that payload by exactly n/32;
# biases and the small output layer stay at 32 bits
for bits in (8, 4):
    rep = ac.size_report(ac.quantize_model(model, bits))
    print(f"{bits}-bit weights: {rep.weight_mb:.3f} MB of weights "
          f"(ratio {rep.weight_bytes / full.weight_bytes}), {rep.total_mb:.3f} MB in total, "
          f"plus {rep.quant_overhead_bytes} bytes of scale/offset")

# A freshly initialized matrix has a flat spectrum, so tau = 0.6 keeps many
# directions. Trained weights are what make factorization pay off; here we
# fake a trained recurrent matrix as low-rank signal plus the init noise.
rng = np.random.default_rng(0)
for layer in range(3):
    w_h = model.params[f"l{layer}.w_h"]
    signal = rng.standard_normal((1024, 4)) @ rng.standard_normal((4, 256))
    model.params[f"l{layer}.w_h"] = w_h + 0.5 * signal / np.sqrt(256)

for tau in (1.0, 0.9, 0.6):
    low, ranks = ac.factorize_model(model, tau, return_ranks=True)
    rep8 = ac.size_report(ac.quantize_model(low, 8))
    print(f"\ntau={tau}: ranks {ranks}")
    print(f"  32-bit {ac.size_report(low).total_mb:.3f} MB, 8-bit weights {rep8.weight_mb:.3f} MB "
          f"({100 * rep8.weight_bytes / full.weight_bytes:.1f}% of the baseline weight payload)")
