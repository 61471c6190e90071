# %% [markdown]
# # Dilated convolution, one tap at a time
#
# A dilated 3x3 kernel reads its nine taps `l` pixels apart. The weight
# count stays at nine while the window widens to `2l + 1`.

# %%
import numpy as np

from dilated_depth import ConvKernel, ConvSpec, conv2d_dilated

np.set_printoptions(linewidth=120)

# %% [markdown]
# Start with a ramp image and a kernel whose only non-zero tap is at
# offset t = (1, 0). True convolution sums `F(s) k(t)` over `s + l t = p`,
# so the output at `p` copies the input at `p - l t`: the ramp moves down
# by `l` rows and zeros enter from the padding.

# %%
y, x = np.mgrid[0:7, 0:7]
ramp = (7.0 * y + x).reshape(1, 1, 7, 7)
weights = np.zeros((1, 1, 3, 3))
weights[0, 0, 2, 1] = 1.0
kernel = ConvKernel(weights, np.zeros(1))

for l in (1, 2, 3):
    out = conv2d_dilated(ramp, kernel, ConvSpec(1, l, 1, None, 1, 1))
    print(f"dilation {l}:\n{out[0, 0].astype(int)}\n")

# %% [markdown]
# Which input pixels does one output pixel read? Push a single bright
# pixel through an all-ones kernel and look at the spread.

# %%
impulse = np.zeros((1, 1, 11, 11))
impulse[0, 0, 5, 5] = 1.0
ones = ConvKernel(np.ones((1, 1, 3, 3)), np.zeros(1))
for l in (1, 2, 4):
    spread = conv2d_dilated(impulse, ones, ConvSpec(1, l, 1, None, 1, 1))[0, 0]
    print(f"l={l}, window {2 * l + 1}x{2 * l + 1}")
    print("\n".join("".join("#" if v else "." for v in row) for row in spread), "\n")

# %% [markdown]
# Stacking dilations 1, 2, 4 fills the gaps: three 3x3 layers cover a
# 15x15 window with 27 weights, where undilated layers would cover 7x7.

# %%
x = np.zeros((1, 1, 19, 19))
x[0, 0, 9, 9] = 1.0
for l in (1, 2, 4):
    x = conv2d_dilated(x, ones, ConvSpec(1, l, 1, None, 1, 1))
print("\n".join("".join("#" if v else "." for v in row) for row in x[0, 0]))
