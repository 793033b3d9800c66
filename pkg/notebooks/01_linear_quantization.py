# %% [markdown]
# # Symmetric linear quantization
#
# A k-bit grid holds the integers -(2^(k-1)-1) .. 2^(k-1)-1. The step is the
# tensor's max |x| divided by the largest code, so the extreme value lands
# exactly on the grid.

# %%
import numpy as np

from ptqkit import dequantize, mse, quantize_lq, sqnr_db

x = np.array([-1.0, -0.4, 0.0, 0.26, 1.0])
q = quantize_lq(x, 3)
print("codes", q.codes, "step", q.step)
print("x_hat", dequantize(q))

# %% [markdown]
# For values spread evenly inside each bin the error behaves like uniform
# noise with variance step^2 / 12.

# %%
rng = np.random.default_rng(0)
u = rng.uniform(-1, 1, 10**6)
for k in (2, 4, 6, 8):
    q = quantize_lq(u, k)
    print(f"k={k}  mse={mse(u, dequantize(q)):.3e}  step^2/12={q.step**2 / 12:.3e}  sqnr={sqnr_db(u, dequantize(q)):.1f} dB")

# %% [markdown]
# A single large value stretches the step for every other element. That is
# the problem clipping and channel splitting address.

# %%
g = rng.standard_normal(4096)
spiky = g.copy()
spiky[0] = 40.0
for name, v in (("gaussian", g), ("with outlier", spiky)):
    q = quantize_lq(v, 4)
    print(f"{name:13s} step={q.step:.3f}  mse={mse(v, dequantize(q)):.3e}")
