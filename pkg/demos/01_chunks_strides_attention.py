"""
Chunks, strides and difference attention
========================================

A video of T subsampled steps is cut two ways: m consecutive chunks (local
view) and m interleaved strides (global view).  Difference attention turns
feature changes into one scalar per step.
"""

import numpy as np

from mcsf.decomp import AttentionParams, decompose, difference_attention, reassemble, scatter

# 7 steps, 2 segments: the leftover step goes to the first chunk
dec = decompose(7, 2)
print("chunks :", [c.tolist() for c in dec.chunks])
print("strides:", [s.tolist() for s in dec.strides])

# per-segment values go back to temporal order exactly
values = np.arange(7) * 10
print("stride round trip:", reassemble(dec, scatter(dec, values, "stride"), "stride"))

# a feature sequence with one visual change after step 3
x = np.zeros((8, 3))
x[4:] = 1.0
params = AttentionParams(weights=np.ones((3, 3)), biases=np.zeros(3), deltas=(1, 2, 4))
print("attention:", difference_attention(x, params))
# steps 4..7 see the jump through different lags; the clamp at t=0 keeps d_0 = 0
