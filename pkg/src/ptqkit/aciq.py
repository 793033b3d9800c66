"""Analytical clipping threshold for Gaussian-distributed weights.

The expected squared error of clip-then-quantize under N(0, sigma^2) has a
stationary point where

    alpha * (1 - erf(alpha / (sqrt(2) sigma)))
        - 2 sigma / sqrt(2 pi) * exp(-alpha^2 / (2 sigma^2))
        + 2 alpha / (3 * 2**(2k)) = 0

The left-hand side is negative near zero and grows linearly for large alpha,
so the root is bracketed on [1e-6 sigma, 20 sigma] and found by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ptqkit.quantizer import (
    QuantizationError,
    QuantizedTensor,
    QuantParams,
    _check_finite,
    check_bits,
    qmax,
    quantize_codes,
    quantize_lq,
)

BRACKET_LO = 1e-6
BRACKET_HI = 20.0
MAX_ITER = 200
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class NoSignChangeError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClipSolution:
    alpha: float
    sigma: float
    bits: int
    residual: float
    iterations: int
    bracket: tuple[float, float]
    """Final bisection interval; the objective has opposite signs at its ends."""


def estimate_sigma(x: np.ndarray) -> float:
    """Population standard deviation of all elements."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 elements to estimate sigma")
    if np.ptp(x) == 0:
        return 0.0
    return float(np.std(x))


def aciq_objective_derivative(alpha: float, sigma: float, bits: int) -> float:
    if not alpha > 0 or not sigma > 0:
        raise ValueError(f"alpha and sigma must be positive (alpha={alpha}, sigma={sigma})")
    check_bits(bits)
    tail = alpha * (1.0 - math.erf(alpha / (_SQRT2 * sigma)))
    density = 2.0 * sigma / _SQRT2PI * math.exp(-(alpha * alpha) / (2.0 * sigma * sigma))
    noise = 2.0 * alpha / (3.0 * 4.0**bits)
    return tail - density + noise


def solve_alpha(sigma: float, bits: int, tol: float | None = None) -> ClipSolution:
    """Bisect the derivative for the MSE-optimal clipping threshold.

    ``tol`` bounds the width of the final bracket and defaults to ``1e-8 * sigma``.
    Raises NoSignChangeError instead of clamping when the bracket holds no root.
    """
    if not sigma > 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    check_bits(bits)
    if tol is None:
        tol = 1e-8 * sigma
    if not tol > 0:
        raise ValueError("tol must be positive")

    def f(a):
        return aciq_objective_derivative(a, sigma, bits)

    lo, hi = BRACKET_LO * sigma, BRACKET_HI * sigma
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0:
        raise NoSignChangeError(f"no sign change on [{lo:g}, {hi:g}] (f={f_lo:g}, {f_hi:g})")

    it = 0
    while hi - lo > tol and it < MAX_ITER:
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        it += 1
        if f_mid == 0:
            lo = hi = mid
            break
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid

    alpha = 0.5 * (lo + hi)
    return ClipSolution(
        alpha=alpha,
        sigma=float(sigma),
        bits=bits,
        residual=abs(f(alpha)),
        iterations=it,
        bracket=(lo, hi),
    )


@dataclass(frozen=True, eq=False)
class AciqTensor(QuantizedTensor):
    """Quantized tensor that also keeps the clipping solve behind its step."""

    solution: ClipSolution | None = None


def quantize_aciq(x: np.ndarray, bits: int, name: str = "") -> QuantizedTensor:
    """Clip to +-alpha then quantize with step alpha / (2**(k-1) - 1).

    A constant tensor has no spread to fit; it falls back to plain LQ and the
    result carries method ``"lq"`` so callers can flag it.
    """
    x = _check_finite(x)
    sigma = estimate_sigma(x)
    if sigma == 0:
        return quantize_lq(x, bits, name=name)
    sol = solve_alpha(sigma, bits)
    step = float(np.float32(sol.alpha / qmax(bits)))
    clipped = np.clip(np.asarray(x, dtype=np.float64), -sol.alpha, sol.alpha)
    return AciqTensor(
        name=name,
        codes=quantize_codes(clipped, step, bits),
        params=QuantParams(bits=bits, step=step, clip_alpha=sol.alpha),
        method="aciq",
        original_shape=x.shape,
        solution=sol,
    )


__all__ = [
    "AciqTensor",
    "ClipSolution",
    "NoSignChangeError",
    "QuantizationError",
    "aciq_objective_derivative",
    "estimate_sigma",
    "quantize_aciq",
    "solve_alpha",
]
