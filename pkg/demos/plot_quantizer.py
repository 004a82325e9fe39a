"""
Min/max quantization, packing and the straight-through estimator
=================================================================

A small walk through what happens to one tensor.
"""

import numpy as np

import aedcompress as ac

rng = np.random.default_rng(1)
w = rng.normal(scale=0.1, size=12)

# codes live on a uniform grid spanning [min, max]; alpha is the span and
# beta the minimum
q = ac.quantize(w, 4)
print("codes :", q.codes)
print(f"alpha : {q.alpha:.5f}   beta : {q.beta:.5f}")

# the worst-case error is half a grid step
err = np.abs(ac.dequantize(q) - w).max()
print(f"max error {err:.5f} <= half step {q.alpha / (2 * 15):.5f}")

# fake quantization is quantize-then-dequantize, and applying it twice
# changes nothing
once = ac.fake_quant(w, 4)
print("idempotent:", np.array_equal(ac.fake_quant(once, 4), once))

# two 4-bit codes per byte, low nibble first
packed = ac.pack_codes(q.codes, 4)
print("packed bytes:", packed.hex(" "))
print("unpacked ok :", np.array_equal(ac.unpack_codes(packed, 4, q.codes.size), q.codes))

# Rounding has zero gradient almost everywhere. The straight-through
# estimator ignores it: the gradient with respect to the quantized value is
# handed to the full-precision master weight unchanged. Fitting y = q(w) x:
x = rng.standard_normal(256)
y = 0.37 * x
grid = np.array([-1.0, 1.0])  # fixes min/max so the weight sits on a [-1, 1] grid
master, lr = -0.8, 0.05
for step in range(60):
    wq = ac.fake_quant(np.append(grid, master), 4)[-1]
    grad = np.mean(2 * (wq * x - y) * x)
    master -= lr * ac.ste_backward(grad)
    if step % 15 == 0:
        print(f"step {step:2d}: master {master:+.4f} quantized {wq:+.4f}")
print(f"final quantized weight {ac.fake_quant(np.append(grid, master), 4)[-1]:+.4f} (grid step {2 / 15:.4f})")
