# %% [markdown]
# # How many bins?
#
# Finer bins make exact-bin accuracy harder, but the depth error barely
# moves. Both runs share data and seed. About five minutes in total.

# %%
from dilated_depth.experiments import bin_sweep

results = bin_sweep((50, 200), seed=0)
print(f"{'bins':>5} {'pixel_acc':>10} {'rel':>8}   (held-out, soft)")
for m, result in results.items():
    r = result.test["soft"]
    print(f"{m:>5} {r.pixel_acc:>10.4f} {r.rel:>8.4f}")
