# %% [markdown]
# # Analytical clipping (ACIQ)
#
# Assuming Gaussian weights, the clip threshold alpha balances clipping error
# in the tails against rounding noise inside [-alpha, alpha]. The solver
# brackets the root of the derivative and bisects.

# %%
import numpy as np

from ptqkit import dequantize, mse, quantize_aciq, quantize_lq
from ptqkit.aciq import aciq_objective_derivative, solve_alpha

for k in (2, 3, 4, 8):
    sol = solve_alpha(1.0, k)
    print(f"k={k}  alpha/sigma={sol.alpha:.4f}  |f|={sol.residual:.1e}  iterations={sol.iterations}")

# %% [markdown]
# The derivative changes sign once across the bracket.

# %%
alphas = np.linspace(0.5, 5, 10)
print(np.round([aciq_objective_derivative(a, 1.0, 4) for a in alphas], 4))

# %% [markdown]
# Compare with a brute-force sweep of the clip threshold on sampled data.

# %%
rng = np.random.default_rng(0)
x = rng.standard_normal(200_000)
for k in (2, 3, 4):
    grid = np.linspace(0.5, 5, 91)
    errs = []
    for a in grid:
        step = a / (2 ** (k - 1) - 1)
        errs.append(np.mean((x - np.clip(np.round(x / step), -(2 ** (k - 1) - 1), 2 ** (k - 1) - 1) * step) ** 2))
    print(f"k={k}  sweep argmin={grid[int(np.argmin(errs))]:.2f}  solver={solve_alpha(1.0, k).alpha:.2f}")

# %%
for k in (2, 3, 4):
    print(f"k={k}  lq={mse(x, dequantize(quantize_lq(x, k))):.4f}  aciq={mse(x, dequantize(quantize_aciq(x, k))):.4f}")
