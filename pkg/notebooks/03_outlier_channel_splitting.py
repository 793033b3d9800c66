# %% [markdown]
# # Outlier channel splitting
#
# Duplicating an input channel and halving its weights leaves X @ W unchanged
# once the matching input column is duplicated too. Each split halves the
# largest magnitude, which shrinks the step for the whole tensor.

# %%
import numpy as np

from ptqkit import dequantize, fold, mse, quantize_lq, quantize_ocs
from ptqkit.ocs import expand_inputs, ocs_expand

rng = np.random.default_rng(0)
w = rng.standard_normal((256, 64))
w[17] *= 10
x = rng.standard_normal((8, 256))

w_split, smap = ocs_expand(w, 0.01, 4, mode="naive")
print("splits:", smap.events)
print("max |w| before/after:", np.abs(w).max(), np.abs(w_split).max())
print("product error:", np.abs(expand_inputs(x, smap) @ w_split - x @ w).max())

# %% [markdown]
# Quantization-aware splitting shifts the two halves by a quarter step in
# opposite directions, so values that would both round the same way land on
# neighbouring grid points instead.

# %%
for k in (2, 3, 4, 6):
    lq = mse(w, dequantize(quantize_lq(w, k)))
    naive = mse(w, fold(quantize_ocs(w, k, 0.01, mode="naive")))
    qa = mse(w, fold(quantize_ocs(w, k, 0.01, mode="qa")))
    print(f"k={k}  lq={lq:.4f}  ocs_naive={naive:.4f}  ocs_qa={qa:.4f}")
