"""Apply a quantization policy to every tensor of an archive.

Quantized tensors are stored as int8 records named ``<name>.codes``; their
step, bit width, method, clipping solve and split map live in the archive
metadata under ``ptq.tensors.<name>``.  Everything the policy leaves alone is
copied verbatim.
"""

from __future__ import annotations

import csv
import fnmatch
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ptqkit.aciq import quantize_aciq
from ptqkit.cost import STEP_BITS
from ptqkit.ocs import SplitMap, fold, quantize_ocs
from ptqkit.quantizer import (
    METHODS,
    QuantizedTensor,
    QuantParams,
    check_bits,
    dequantize,
    mse,
    quantize_lq,
    sqnr_db,
)
from ptqkit.tensor_store import Archive, ArchiveError, TensorRecord, dump_metadata

DEFAULT_SKIP = ("*classifier*", "*cls*", "*head*")
CODES_SUFFIX = ".codes"
FORMAT_TAG = "ptq-quantized/1"


class PipelineError(RuntimeError):
    pass


class MetadataMismatchError(ArchiveError):
    pass


@dataclass(frozen=True)
class QuantPolicy:
    method: str
    bits: int
    ocs_ratio: float = 0.01
    skip_patterns: tuple[str, ...] = DEFAULT_SKIP
    min_elements: int = 1024

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        check_bits(self.bits)
        if not 0 <= self.ocs_ratio <= 1:
            raise ValueError("ocs_ratio must lie in [0, 1]")
        object.__setattr__(self, "skip_patterns", tuple(self.skip_patterns))

    def classify(self, rec: TensorRecord) -> str:
        """One of "quantized", "skipped" (name pattern) or "ineligible" (rank, size, dtype)."""
        if any(fnmatch.fnmatchcase(rec.name, p) for p in self.skip_patterns):
            return "skipped"
        if rec.dtype != np.float32 or len(rec.shape) < 2 or rec.data.size < self.min_elements:
            return "ineligible"
        return "quantized"


@dataclass
class ReportEntry:
    name: str
    status: str
    dtype: str
    shape: list
    element_count: int
    size_bits: float
    method: Optional[str] = None
    bits: Optional[int] = None
    step: Optional[float] = None
    clip_alpha: Optional[float] = None
    sigma: Optional[float] = None
    split_count: Optional[int] = None
    mse: float = 0.0
    sqnr_db: float = math.inf

    @property
    def quantized(self) -> bool:
        return self.status == "quantized"


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


@dataclass
class Report:
    entries: list[ReportEntry]
    ocs_ratio: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def total_elements(self) -> int:
        return sum(e.element_count for e in self.entries)

    @property
    def quantization_ratio(self) -> float:
        total = self.total_elements
        return sum(e.element_count for e in self.entries if e.quantized) / total if total else 0.0

    @property
    def size_bits(self) -> float:
        return sum(e.size_bits for e in self.entries)

    @property
    def baseline_bits(self) -> int:
        return sum(e.element_count * np.dtype(e.dtype).itemsize * 8 for e in self.entries)

    @property
    def reduction_factor(self) -> float:
        return self.baseline_bits / self.size_bits if self.size_bits else 1.0

    @property
    def mean_mse(self) -> float:
        q = [e.mse for e in self.entries if e.quantized]
        return float(np.mean(q)) if q else 0.0

    def entry(self, name: str) -> ReportEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "tensors": [{k: _jsonable(v) for k, v in asdict(e).items()} for e in self.entries],
            "aggregate": {
                "quantization_ratio": self.quantization_ratio,
                "size_bits": self.size_bits,
                "baseline_bits": self.baseline_bits,
                "reduction_factor": self.reduction_factor,
                "mean_mse": self.mean_mse,
            },
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    CSV_FIELDS = ("name", "status", "method", "bits", "step", "clip_alpha", "split_count", "mse", "sqnr_db", "element_count", "size_bits")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for e in self.entries:
            w.writerow({k: ("" if v is None else v) for k, v in asdict(e).items()})
        return buf.getvalue()


def analytic_bits(n: int, bits: int, method: str, ocs_ratio: float) -> float:
    overhead = ocs_ratio if method.startswith("ocs") else 0.0
    return n * bits * (1 + overhead) + STEP_BITS


def quantize_tensor(x: np.ndarray, policy: QuantPolicy, name: str = "") -> QuantizedTensor:
    if policy.method == "lq":
        return quantize_lq(x, policy.bits, name=name)
    if policy.method == "aciq":
        return quantize_aciq(x, policy.bits, name=name)
    return quantize_ocs(x, policy.bits, policy.ocs_ratio, mode=policy.method[4:], name=name)


def reconstruct(q: QuantizedTensor) -> np.ndarray:
    """Dequantized float32 tensor at the original shape (split tensors folded)."""
    out = fold(q) if q.split_map is not None else dequantize(q)
    return out.astype(np.float32)


def _tensor_meta(q: QuantizedTensor) -> dict:
    meta = {
        "status": "quantized",
        "method": q.method,
        "bits": q.bits,
        "step": q.step,
        "original_shape": list(q.original_shape),
        "codes": q.name + CODES_SUFFIX,
    }
    if q.params.clip_alpha is not None:
        meta["clip_alpha"] = q.params.clip_alpha
    sol = getattr(q, "solution", None)
    if sol is not None:
        meta.update(sigma=sol.sigma, residual=sol.residual, iterations=sol.iterations)
    if q.split_map is not None:
        meta["split_map"] = q.split_map.to_dict()
    return meta


def _worker_count(workers: Optional[int]) -> int:
    if workers is None:
        env = os.environ.get("PTQ_THREADS")
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("worker count must be a positive integer")
    return workers


def quantize_archive(archive: Archive, policy: QuantPolicy, workers: Optional[int] = None) -> tuple[Archive, Report]:
    """Quantize every eligible, non-skipped float32 tensor.

    Any per-tensor failure aborts the whole call with the tensor's name; no
    partially quantized archive is ever returned.
    """

    def process(rec: TensorRecord):
        status = policy.classify(rec)
        entry = ReportEntry(
            name=rec.name,
            status=status,
            dtype=str(rec.dtype),
            shape=list(rec.shape),
            element_count=int(rec.data.size),
            size_bits=float(rec.data.size * rec.dtype.itemsize * 8),
        )
        if status != "quantized":
            return [rec], {"status": status}, entry, None
        try:
            q = quantize_tensor(rec.data, policy, name=rec.name)
            x_hat = reconstruct(q)
        except Exception as e:
            raise PipelineError(f"failed to quantize {rec.name!r}: {e}") from e
        warning = None
        if policy.method == "aciq" and q.method == "lq":
            warning = f"{rec.name}: constant tensor, ACIQ fell back to plain LQ"
        entry.method = q.method
        entry.bits = q.bits
        entry.step = q.step
        entry.clip_alpha = q.params.clip_alpha
        sol = getattr(q, "solution", None)
        entry.sigma = sol.sigma if sol is not None else None
        entry.split_count = len(q.split_map.events) if q.split_map is not None else None
        entry.mse = mse(rec.data, x_hat)
        entry.sqnr_db = sqnr_db(rec.data, x_hat)
        entry.size_bits = analytic_bits(rec.data.size, q.bits, q.method, policy.ocs_ratio)
        return [TensorRecord(rec.name + CODES_SUFFIX, q.codes)], _tensor_meta(q), entry, warning

    n = _worker_count(workers)
    if n == 1:
        results = [process(r) for r in archive.records]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(process, archive.records))

    records, tensors_meta, entries, warnings = [], {}, [], []
    for rec, (out, meta, entry, warning) in zip(archive.records, results):
        records.extend(out)
        tensors_meta[rec.name] = meta
        entries.append(entry)
        if warning:
            warnings.append(warning)

    metadata = {
        "ptq": {
            "format": FORMAT_TAG,
            "policy": {**asdict(policy), "skip_patterns": list(policy.skip_patterns)},
            "order": archive.names,
            "tensors": tensors_meta,
        },
        "source_metadata": archive.metadata,
    }
    ocs_ratio = policy.ocs_ratio if policy.method.startswith("ocs") else 0.0
    return Archive(tuple(records), dump_metadata(metadata)), Report(entries, ocs_ratio, warnings)


def load_quantized(qarchive: Archive, name: str) -> QuantizedTensor:
    """Rebuild one QuantizedTensor from a quantized archive."""
    ptq = _ptq_meta(qarchive)
    meta = ptq["tensors"].get(name)
    if meta is None or meta.get("status") != "quantized":
        raise MetadataMismatchError(f"{name!r} is not a quantized tensor in this archive")
    codes_name = meta["codes"]
    if codes_name not in qarchive:
        raise MetadataMismatchError(f"codes record {codes_name!r} missing")
    codes = qarchive[codes_name]
    smap = SplitMap.from_dict(meta["split_map"]) if "split_map" in meta else None
    expected = tuple(meta["original_shape"])
    if smap is not None:
        expected = expected[: smap.axis] + (smap.final_channels,) + expected[smap.axis + 1 :]
    if codes.shape != expected:
        raise MetadataMismatchError(f"{name!r}: codes shape {codes.shape} does not match metadata {expected}")
    try:
        return QuantizedTensor(
            name=name,
            codes=codes,
            params=QuantParams(bits=meta["bits"], step=meta["step"], clip_alpha=meta.get("clip_alpha")),
            method=meta["method"],
            original_shape=tuple(meta["original_shape"]),
            split_map=smap,
        )
    except ValueError as e:
        raise MetadataMismatchError(f"{name!r}: {e}") from e


def _ptq_meta(qarchive: Archive) -> dict:
    try:
        ptq = qarchive.meta()["ptq"]
    except (ValueError, KeyError, TypeError):
        raise MetadataMismatchError("archive carries no quantization metadata") from None
    if ptq.get("format") != FORMAT_TAG:
        raise MetadataMismatchError(f"unsupported quantization metadata format {ptq.get('format')!r}")
    return ptq


def is_quantized_archive(archive: Archive) -> bool:
    try:
        _ptq_meta(archive)
    except MetadataMismatchError:
        return False
    return True


def dequantize_archive(qarchive: Archive) -> Archive:
    ptq = _ptq_meta(qarchive)
    records = []
    for name in ptq["order"]:
        meta = ptq["tensors"].get(name)
        if meta is None:
            raise MetadataMismatchError(f"no metadata for tensor {name!r}")
        if meta["status"] == "quantized":
            records.append(TensorRecord(name, reconstruct(load_quantized(qarchive, name))))
        else:
            if name not in qarchive:
                raise MetadataMismatchError(f"passthrough tensor {name!r} missing")
            records.append(qarchive.records[qarchive._index[name]])
    return Archive(tuple(records), qarchive.meta().get("source_metadata", ""))


@dataclass
class Comparison:
    rows: list[tuple[str, float, float]]

    @property
    def mean_mse(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else 0.0

    @property
    def mean_sqnr_db(self) -> float:
        finite = [r[2] for r in self.rows if math.isfinite(r[2])]
        if not finite:
            return math.inf
        return float(np.mean(finite))

    def as_dict(self) -> dict:
        return {name: {"mse": m, "sqnr_db": s} for name, m, s in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "mse", "sqnr_db"])
        for name, m, s in self.rows:
            w.writerow([name, repr(m), repr(s)])
        return buf.getvalue()


def compare_archives(a: Archive, b: Archive) -> Comparison:
    if sorted(a.names) != sorted(b.names):
        missing = sorted(set(a.names) ^ set(b.names))
        raise ValueError(f"archives hold different tensors: {missing}")
    rows = []
    for rec in a.records:
        other = b[rec.name]
        if rec.shape != other.shape:
            raise ValueError(f"shape mismatch for {rec.name!r}: {rec.shape} vs {other.shape}")
        rows.append((rec.name, mse(rec.data, other), sqnr_db(rec.data, other)))
    return Comparison(rows)


__all__ = [
    "CODES_SUFFIX",
    "DEFAULT_SKIP",
    "Comparison",
    "MetadataMismatchError",
    "PipelineError",
    "QuantPolicy",
    "Report",
    "ReportEntry",
    "compare_archives",
    "dequantize_archive",
    "is_quantized_archive",
    "load_quantized",
    "quantize_archive",
    "quantize_tensor",
    "reconstruct",
]
