# %% [markdown]
# # Ablation: dilation and skip connections
#
# Three variants are trained on the same scenes with the same seed:
#
# * the full model
# * a variant without dilation, where the last two stages stride by 2
#   instead and fixed bilinear upsampling restores the resolution
# * a variant without the concatenated skip features
#
# At this scale the differences are small and noisy. The point is that each
# variant builds and trains. Expect about five minutes.

# %%
from dilated_depth.experiments import ablation

for name, result in ablation(seed=0).items():
    r = result.test["soft"]
    print(f"{name:<20} params {result.net.parameter_count:>7}  held-out rel {r.rel:.4f}  rms {r.rms:.4f}")
