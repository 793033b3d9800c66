"""Symmetric linear quantization onto a signed integer grid.

A k-bit tensor uses the codes -(2**(k-1) - 1) .. 2**(k-1) - 1, i.e. 2**k - 1
levels centred on zero, with one real-valued step per tensor.  The step is
held as a float32 value; dequantization multiplies in float64, which is exact
for codes of at most 8 bits, so re-quantizing a dequantized tensor recovers
the same step and codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from ptqkit.ocs import SplitMap

MIN_BITS = 2
MAX_BITS = 8
METHODS = ("lq", "aciq", "ocs_naive", "ocs_qa")


class QuantizationError(ValueError):
    pass


def check_bits(bits: int) -> int:
    if isinstance(bits, bool) or int(bits) != bits or not MIN_BITS <= bits <= MAX_BITS:
        raise QuantizationError(f"bit width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits!r}")
    return int(bits)


def qmax(bits: int) -> int:
    """Largest code magnitude for a k-bit symmetric grid."""
    return 2 ** (check_bits(bits) - 1) - 1


@dataclass(frozen=True)
class QuantParams:
    bits: int
    step: float
    scheme: str = "symmetric"
    clip_alpha: Optional[float] = None

    def __post_init__(self):
        check_bits(self.bits)
        if not (self.step >= 0 and math.isfinite(self.step)):
            raise QuantizationError(f"step must be finite and non-negative, got {self.step}")
        if self.scheme != "symmetric":
            raise QuantizationError(f"unsupported scheme {self.scheme!r}")
        if self.clip_alpha is not None and not self.clip_alpha > 0:
            raise QuantizationError("clip_alpha must be positive when present")

    @property
    def code_max(self) -> int:
        return qmax(self.bits)


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    name: str
    codes: np.ndarray
    params: QuantParams
    method: str
    original_shape: tuple[int, ...]
    split_map: Optional["SplitMap"] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise QuantizationError(f"unknown method {self.method!r}")
        codes = np.asarray(self.codes)
        if codes.size and int(np.max(np.abs(codes.astype(np.int64)))) > self.params.code_max:
            raise QuantizationError(f"{self.name!r}: codes outside the {self.params.bits}-bit grid")
        object.__setattr__(self, "codes", codes.astype(np.int8, copy=False))
        object.__setattr__(self, "original_shape", tuple(int(d) for d in self.original_shape))
        if self.method in ("lq", "aciq"):
            if self.split_map is not None:
                raise QuantizationError(f"{self.method} tensors carry no split map")
            if codes.shape != self.original_shape:
                raise QuantizationError("codes shape must equal original shape")

    @property
    def step(self) -> float:
        return self.params.step

    @property
    def bits(self) -> int:
        return self.params.bits


def compute_step(max_abs: float, bits: int) -> float:
    if not max_abs >= 0 or not math.isfinite(max_abs):
        raise QuantizationError(f"max_abs must be finite and non-negative, got {max_abs}")
    q = qmax(bits)
    return float(np.float32(max_abs / q))


def round_half_away(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    t = np.trunc(v)
    # np.rint breaks ties to even; redirect exact halves away from zero
    return np.where(np.abs(v - t) == 0.5, t + np.sign(v), np.rint(v))


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise QuantizationError("input contains NaN or Inf")
    return x


def quantize_codes(x: np.ndarray, step: float, bits: int) -> np.ndarray:
    """Round x / step onto the k-bit grid, saturating at the outermost codes."""
    q = qmax(bits)
    x = np.asarray(x, dtype=np.float64)
    if step == 0:
        return np.zeros(x.shape, dtype=np.int8)
    codes = np.clip(round_half_away(x / step), -q, q)
    return codes.astype(np.int8)


def quantize_lq(x: np.ndarray, bits: int, name: str = "") -> QuantizedTensor:
    x = _check_finite(x)
    max_abs = float(np.max(np.abs(x))) if x.size else 0.0
    step = compute_step(max_abs, bits)
    return QuantizedTensor(
        name=name,
        codes=quantize_codes(x, step, bits),
        params=QuantParams(bits=bits, step=step),
        method="lq",
        original_shape=x.shape,
    )


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """codes * step in float64, at the codes' shape (split tensors stay expanded)."""
    return q.codes.astype(np.float64) * q.params.step


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))


def sqnr_db(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Signal-to-quantization-noise ratio in dB; +inf when the reconstruction is exact."""
    err = mse(x, x_hat)
    if err == 0:
        return math.inf
    power = float(np.mean(np.asarray(x, dtype=np.float64) ** 2))
    if power == 0:
        return -math.inf
    return 10.0 * math.log10(power / err)
