"""Post-training weight quantization toolkit.

Symmetric linear quantization, analytical (ACIQ) clipping, and outlier
channel splitting, plus arithmetic-cost and model-size accounting over a
small binary tensor archive format.
"""

from ptqkit.tensor_store import Archive, TensorRecord, get_tensor, read_archive, write_archive
from ptqkit.quantizer import (
    QuantParams,
    QuantizedTensor,
    compute_step,
    dequantize,
    mse,
    quantize_lq,
    sqnr_db,
)
from ptqkit.aciq import ClipSolution, estimate_sigma, quantize_aciq, solve_alpha
from ptqkit.ocs import SplitMap, expand_inputs, fold, ocs_expand, quantize_ocs
from ptqkit.cost import ace, gen_bert_manifest, model_size, quantization_ratio
from ptqkit.pipeline import QuantPolicy, compare_archives, dequantize_archive, quantize_archive
from ptqkit.harness import SyntheticSpec, forward, gen_synthetic_model, method_sweep, trend_check

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "ClipSolution",
    "QuantParams",
    "QuantPolicy",
    "QuantizedTensor",
    "SplitMap",
    "SyntheticSpec",
    "TensorRecord",
    "ace",
    "compare_archives",
    "compute_step",
    "dequantize",
    "dequantize_archive",
    "estimate_sigma",
    "expand_inputs",
    "fold",
    "forward",
    "gen_bert_manifest",
    "gen_synthetic_model",
    "get_tensor",
    "method_sweep",
    "model_size",
    "mse",
    "ocs_expand",
    "quantization_ratio",
    "quantize_aciq",
    "quantize_archive",
    "quantize_lq",
    "quantize_ocs",
    "read_archive",
    "solve_alpha",
    "sqnr_db",
    "trend_check",
    "write_archive",
]
