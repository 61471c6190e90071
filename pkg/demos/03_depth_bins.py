# %% [markdown]
# # Depth as classification over log-spaced bins
#
# Depth in [0.7, 10] m is split into `m` equal intervals of log depth.
# Training treats the bin index as a class label. At test time the
# network's softmax scores turn back into a depth in one of two ways:
#
# * **hard**: the centre of the most probable bin
# * **soft**: `exp(sum_j p_j w_j)`, where `w_j` is the log-depth centre of bin j

# %%
import numpy as np

from dilated_depth import depth_to_label, hard_threshold, make_bins, soft_weight_sum

bins = make_bins(0.7, 10.0, 50)
print(f"log-width {bins.delta:.5f}, first centres {np.round(bins.centers[:4], 4)}")

# %% [markdown]
# Quantisation alone costs the hard rule accuracy. Depths sampled
# uniformly in log space land anywhere inside their bin. The hard rule
# snaps them to the centre.

# %%
rng = np.random.default_rng(0)
depth = np.exp(rng.uniform(np.log(0.7), np.log(10.0), 10_000)).reshape(1, 1, 1, -1)
labels = depth_to_label(depth, bins).labels.ravel()
snapped = bins.centers[labels]
print(f"mean relative error of bin centres: {np.mean(np.abs(snapped - depth.ravel()) / depth.ravel()):.4f}")

# %% [markdown]
# A network that is unsure between neighbouring bins splits its mass.
# The soft rule then interpolates between the two bins, while the hard rule
# commits to one of them.

# %%
# halfway between the two bins in log space
true_depth = np.sqrt(bins.centers[20] * bins.centers[21])
for split in (0.5, 0.6, 0.8):
    p = np.zeros((1, 50, 1, 1))
    p[0, 20], p[0, 21] = split, 1 - split
    soft = soft_weight_sum(p, bins).values.item()
    hard = hard_threshold(p, bins).values.item()
    print(f"p20={split:.1f}: soft {soft:.4f}  hard {hard:.4f}  (depth {true_depth:.4f})")
