"""Long-term vs short-term inter-frame attention on a toy action sequence.

Run:  python3 demos/01_attention.py
"""

# %%
import numpy as np

from videocap.numerics import Tape, gradient_check
from videocap.temporal_attention import AttentionParams, WindowConfig, fuse_long_short, long_term_attention, short_term_attention

np.set_printoptions(precision=3, suppress=True)

# six frames of 4-d action features; frames 2-3 carry a short event
M = np.tile([1.0, 0.0, 0.0, 0.0], (6, 1))
M[2:4] += [0.0, 2.0, 0.0, 0.0]

long = AttentionParams.init(4, 3, 3, seed=0, prefix="long.")
short = AttentionParams.init(4, 3, 3, seed=1, prefix="short.")

# %% every frame looks at the whole clip
m_long, w_long = long_term_attention(M, long)
print("long-term weights\n", w_long.value)

# %% radius-1 window: weights beyond |i-j| > 1 are exactly zero
m_short, w_short = short_term_attention(M, short, WindowConfig(radius=1))
print("short-term weights\n", w_short.value)

# %% the fused features keep both views side by side
fused = fuse_long_short(m_long, m_short)
print("A_fused shape", fused.A_fused.shape)
print("long half == M_long:", np.array_equal(fused.long_block, m_long.value))

# %% gradients through the tape agree with central differences
def loss():
    a, _ = long_term_attention(M, long)
    b, _ = short_term_attention(M, short)
    return (fuse_long_short(a, b).A_fused ** 2).sum()

for name, err in gradient_check(loss, long.tensors() + short.tensors()).items():
    print(f"{name:10s} max rel err {err:.1e}")
