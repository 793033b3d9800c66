"""Outlier channel splitting.

A weight W of shape (h, d) used as Y = X @ W keeps its output when an input
channel (row) j is replaced by two rows summing to W[j] and the input column
X[:, j] is duplicated.  Splitting the row holding the largest magnitude halves
that magnitude, which shrinks the quantization step for the whole tensor.

Splits are greedy: each one re-selects the current outlier row, so a single
dominant row can be split several times.  Every split appends the new row at
the end, and the SplitMap records (source, new) pairs in order so expansion,
input duplication and folding replay the same sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ptqkit.quantizer import (
    QuantizedTensor,
    QuantParams,
    _check_finite,
    compute_step,
    dequantize,
    quantize_codes,
)

MODES = ("naive", "qa")


class SplitMapError(ValueError):
    pass


@dataclass(frozen=True)
class SplitMap:
    original_channels: int
    events: tuple[tuple[int, int], ...] = ()
    axis: int = 0
    mode: str = "naive"
    step: float | None = field(default=None, compare=False)
    """Final quantization step, filled in once the expanded tensor is quantized."""

    def __post_init__(self):
        if self.mode not in MODES:
            raise SplitMapError(f"unknown split mode {self.mode!r}")
        events = tuple((int(s), int(n)) for s, n in self.events)
        count = self.original_channels
        for src, new in events:
            if not 0 <= src < count or new != count:
                raise SplitMapError(f"split event ({src}, {new}) invalid with {count} channels")
            count += 1
        object.__setattr__(self, "events", events)

    @property
    def final_channels(self) -> int:
        return self.original_channels + len(self.events)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "mode": self.mode,
            "original_channels": self.original_channels,
            "events": [list(e) for e in self.events],
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SplitMap:
        return cls(
            original_channels=int(d["original_channels"]),
            events=tuple(tuple(e) for e in d["events"]),
            axis=int(d.get("axis", 0)),
            mode=d.get("mode", "naive"),
            step=d.get("step"),
        )


def _as_channels(w: np.ndarray, axis: int) -> np.ndarray:
    """View w as a 2-D (channels, rest) array with the split axis first."""
    w = np.moveaxis(np.asarray(w), axis, 0)
    return w.reshape(w.shape[0], -1)


def num_splits(ratio: float, channels: int) -> int:
    if not 0 <= ratio <= 1:
        raise ValueError(f"expansion ratio must lie in [0, 1], got {ratio}")
    # decimal reading of the ratio so 0.01 * 300 gives 3, not 4
    return math.ceil(Fraction(str(ratio)) * channels)


def select_outlier_channel(w: np.ndarray, axis: int = 0) -> int:
    """Index of the channel whose largest |element| is largest (lowest index on ties)."""
    w = np.asarray(w)
    if w.size == 0 or w.ndim == 0:
        raise ValueError("cannot select a channel from an empty tensor")
    peaks = np.max(np.abs(_as_channels(w, axis)), axis=1)
    return int(np.argmax(peaks))


def _check_idx(w: np.ndarray, idx: int) -> None:
    if not 0 <= idx < w.shape[0]:
        raise IndexError(f"channel {idx} out of range for {w.shape[0]} channels")


def split_channel_naive(w: np.ndarray, idx: int) -> np.ndarray:
    w = np.asarray(w)
    _check_idx(w, idx)
    half = w[idx] / 2
    out = np.concatenate([w, half[None]], axis=0)
    out[idx] = half
    return out


def split_channel_qa(w: np.ndarray, idx: int, step: float) -> np.ndarray:
    """Split into w/2 - step/4 and w/2 + step/4 (half a grid step apart, summing to w)."""
    w = np.asarray(w)
    _check_idx(w, idx)
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    half = w[idx] / 2
    out = np.concatenate([w, (half + step / 4)[None]], axis=0)
    out[idx] = half - step / 4
    return out


def ocs_expand(
    w: np.ndarray, ratio: float, bits: int, mode: str = "naive", axis: int = 0
) -> tuple[np.ndarray, SplitMap]:
    """Split ceil(ratio * h) outlier channels of w along ``axis``.

    For ``mode="qa"`` the offsets need the quantization step, which depends on
    the post-split range: a naive pass fixes the event sequence and a
    provisional step, then the same events are replayed with offset halves.
    """
    if mode not in MODES:
        raise ValueError(f"unknown split mode {mode!r}")
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0 or w.shape[axis] < 1:
        raise ValueError("need at least one channel to split")
    moved = np.moveaxis(w, axis, 0)
    rest = moved.shape[1:]
    cur = moved.reshape(moved.shape[0], -1).copy()
    h = cur.shape[0]

    events = []
    for _ in range(num_splits(ratio, h)):
        idx = select_outlier_channel(cur)
        events.append((idx, cur.shape[0]))
        cur = split_channel_naive(cur, idx)

    if mode == "qa" and events:
        provisional = compute_step(float(np.max(np.abs(cur))), bits)
        if provisional > 0:
            cur = moved.reshape(h, -1).copy()
            for idx, _ in events:
                cur = split_channel_qa(cur, idx, provisional)

    expanded = np.moveaxis(cur.reshape((cur.shape[0],) + rest), 0, axis)
    return expanded, SplitMap(original_channels=h, events=tuple(events), axis=axis, mode=mode)


def fold_array(x: np.ndarray, split_map: SplitMap) -> np.ndarray:
    """Sum split channels back into their sources, restoring the original channel count."""
    x = np.asarray(x)
    axis = split_map.axis
    if x.ndim == 0 or x.shape[axis] != split_map.final_channels:
        raise SplitMapError(
            f"tensor has {x.shape[axis] if x.ndim else 0} channels, split map expects {split_map.final_channels}"
        )
    moved = np.moveaxis(x, axis, 0)
    rest = moved.shape[1:]
    cur = moved.reshape(moved.shape[0], -1).copy()
    for src, new in reversed(split_map.events):
        cur[src] += cur[new]
        cur = cur[:new]
    return np.moveaxis(cur.reshape((cur.shape[0],) + rest), 0, axis)


def fold(q: QuantizedTensor) -> np.ndarray:
    if q.split_map is None:
        raise SplitMapError(f"{q.name!r} has no split map")
    out = fold_array(dequantize(q), q.split_map)
    if out.shape != q.original_shape:
        raise SplitMapError(f"folded shape {out.shape} != original shape {q.original_shape}")
    return out


def expand_inputs(x: np.ndarray, split_map: SplitMap) -> np.ndarray:
    """Duplicate input columns so that expand_inputs(x) @ W_split == x @ W."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != split_map.original_channels:
        raise SplitMapError(f"expected inputs with {split_map.original_channels} columns, got shape {x.shape}")
    cols = list(range(split_map.original_channels))
    for src, _ in split_map.events:
        cols.append(cols[src])
    return x[:, cols]


def quantize_ocs(
    x: np.ndarray, bits: int, ratio: float = 0.01, mode: str = "qa", name: str = "", axis: int = 0
) -> QuantizedTensor:
    """Expand outlier channels, then quantize the expanded tensor with plain symmetric LQ."""
    x = _check_finite(x)
    expanded, smap = ocs_expand(x, ratio, bits, mode, axis=axis)
    step = compute_step(float(np.max(np.abs(expanded))) if expanded.size else 0.0, bits)
    smap = SplitMap(smap.original_channels, smap.events, smap.axis, smap.mode, step=step)
    return QuantizedTensor(
        name=name,
        codes=quantize_codes(expanded, step, bits),
        params=QuantParams(bits=bits, step=step),
        method=f"ocs_{mode}",
        original_shape=x.shape,
        split_map=smap,
    )


__all__ = [
    "SplitMap",
    "SplitMapError",
    "expand_inputs",
    "fold",
    "fold_array",
    "num_splits",
    "ocs_expand",
    "quantize_ocs",
    "select_outlier_channel",
    "split_channel_naive",
    "split_channel_qa",
]
