# %% [markdown]
# # Checking every backward pass
#
# Each layer's analytic gradient is compared against central differences
# with step 1e-5 in float64. The last line perturbs 20 random parameters of
# a complete toy network.

# %%
from dilated_depth.gradcheck import relative_error, run_suite

for result in run_suite(seed=0):
    print(result.line())

# %% [markdown]
# Relative error uses `max(|a|, |n|, 1e-5)` as the denominator. Some
# gradients are exactly zero, for example a convolution bias that feeds
# batch normalisation, because the mean subtraction cancels it. Without the
# floor, their round-off would count as 100% error.

# %%
print(relative_error(0.0, 3e-11))
