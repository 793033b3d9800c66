# %% [markdown]
# # Model size and ACE for the BERT family
#
# ACE weights each multiply-accumulate by the product of its operand widths.
# Weights are quantized; activations stay at 32 bits.

# %%
from ptqkit.cost import BERT_CONFIGS, ace, gen_bert_manifest, model_size, quantization_ratio

for name in BERT_CONFIGS:
    m = gen_bert_manifest(name)
    print(f"{name:7s} params={m.total_params / 1e6:7.2f}M  ratio={quantization_ratio(m):.4f}")

# %%
base = gen_bert_manifest("base")
print(f"{'bits':>4s} {'size MB':>9s} {'reduction':>9s} {'ACE':>14s}")
for k in (32, 8, 6, 4, 3, 2):
    s = model_size(base, k, ocs_ratio=0.01 if k < 32 else 0.0)
    a = ace(base, k, 32, 128)
    print(f"{k:4d} {s.total_bits / 8e6:9.1f} {s.reduction_factor:9.2f} {a.ace_total:14.3e}")
