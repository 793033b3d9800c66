# %% [markdown]
# # Method sweep on a synthetic linear stack
#
# Three Gaussian layers, one channel per layer scaled 10x. Each cell
# quantizes the model, reconstructs it and runs the same input batch.

# %%
from ptqkit.harness import GAUSSIAN_ONLY, HEAVY_OUTLIER, method_sweep, trend_check

result = method_sweep(HEAVY_OUTLIER, ["lq", "aciq", "ocs_qa"], [8, 6, 4, 3, 2], seeds=20)
print(f"{'method':7s} " + " ".join(f"k={k:<9d}" for k in (8, 6, 4, 3, 2)))
for m in ("lq", "aciq", "ocs_qa"):
    print(f"{m:7s} " + " ".join(f"{result.mean(m, k):.3e}  " for k in (8, 6, 4, 3, 2)))

# %%
print(trend_check(result).to_text())

# %% [markdown]
# Without planted outliers the ACIQ/OCS ordering is only observed, not
# expected to follow the outlier case.

# %%
print(trend_check(method_sweep(GAUSSIAN_ONLY, ["lq", "aciq", "ocs_qa"], [2, 3, 4], seeds=10)).to_text())
