"""Synthetic linear stacks for comparing quantization methods.

Each model is a chain of Gaussian weight matrices W_i of shape (in, out)
with a few input channels (rows) scaled up to act as outliers.  The forward
pass is X -> relu(X W_1) -> ... -> X W_n in float32.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from ptqkit.cost import ModelManifest, ace, matmul
from ptqkit.pipeline import QuantPolicy, dequantize_archive, quantize_archive
from ptqkit.tensor_store import Archive, TensorRecord, dump_metadata

PASSTHROUGH_BITS = 32
SWEEP_FIELDS = ("method", "bits", "seed", "weight_mse", "output_rel_err", "size_bits", "ace")
_LAYER_RE = re.compile(r"^layer(\d+)\.weight$")


class InsufficientCoverageError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    layer_dims: tuple[tuple[int, int], ...] = ((256, 256), (256, 256), (256, 128))
    weight_sigma: float = 0.05
    outlier_channels_per_layer: int = 0
    outlier_scale: float = 1.0
    seed: int = 0
    input_rows: int = 32

    def __post_init__(self):
        dims = tuple((int(a), int(b)) for a, b in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if not dims:
            raise ValueError("need at least one layer")
        for i, (a, b) in enumerate(dims):
            if a < 1 or b < 1:
                raise ValueError(f"layer {i} has non-positive dims {a}x{b}")
            if i and dims[i - 1][1] != a:
                raise ValueError(f"layer dims do not chain at layer {i}: {dims[i - 1][1]} != {a}")
            if self.outlier_channels_per_layer > a:
                raise ValueError(f"layer {i}: {self.outlier_channels_per_layer} outlier channels exceed in-dim {a}")
        if not self.weight_sigma > 0:
            raise ValueError("weight_sigma must be positive")
        if self.outlier_channels_per_layer < 0 or self.input_rows < 1:
            raise ValueError("invalid outlier count or input rows")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = [list(p) for p in self.layer_dims]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "layer_dims" in known:
            known["layer_dims"] = tuple(tuple(p) for p in known["layer_dims"])
        return cls(**known)


# Gaussian bulk with one row per layer scaled 10x
HEAVY_OUTLIER = SyntheticSpec(outlier_channels_per_layer=1, outlier_scale=10.0)
GAUSSIAN_ONLY = SyntheticSpec()


def _streams(spec: SyntheticSpec) -> list[np.random.Generator]:
    # one independent stream per layer plus one for the input batch
    children = np.random.SeedSequence(spec.seed).spawn(len(spec.layer_dims) + 1)
    return [np.random.default_rng(c) for c in children]


def gen_synthetic_model(spec: SyntheticSpec) -> Archive:
    streams = _streams(spec)
    arrays = {}
    planted = {}
    for i, (d_in, d_out) in enumerate(spec.layer_dims):
        rng = streams[i]
        w = rng.normal(0.0, spec.weight_sigma, size=(d_in, d_out))
        rows = sorted(int(r) for r in rng.choice(d_in, size=spec.outlier_channels_per_layer, replace=False))
        w[rows] *= spec.outlier_scale
        arrays[f"layer{i}.weight"] = w.astype(np.float32)
        planted[f"layer{i}.weight"] = rows
    meta = {"synthetic_spec": spec.to_dict(), "outlier_channels": planted}
    return Archive(tuple(TensorRecord(k, v) for k, v in arrays.items()), dump_metadata(meta))


def input_batch(spec: SyntheticSpec) -> np.ndarray:
    rng = _streams(spec)[-1]
    return rng.standard_normal((spec.input_rows, spec.layer_dims[0][0])).astype(np.float32)


def layer_weights(weights: Archive) -> list[np.ndarray]:
    found = []
    for rec in weights.records:
        m = _LAYER_RE.match(rec.name)
        if m:
            found.append((int(m.group(1)), rec.data))
    found.sort(key=lambda t: t[0])
    if [i for i, _ in found] != list(range(len(found))) or not found:
        raise ValueError("archive must hold layer0.weight, layer1.weight, ... without gaps")
    return [w for _, w in found]


def forward(weights: Archive, x: np.ndarray) -> np.ndarray:
    ws = layer_weights(weights)
    h = np.asarray(x, dtype=np.float32)
    for i, w in enumerate(ws):
        if w.ndim != 2 or h.shape[-1] != w.shape[0]:
            raise ValueError(f"layer {i}: cannot multiply {h.shape} by {w.shape}")
        h = h @ w
        if i < len(ws) - 1:
            h = np.maximum(h, 0)
    return h


def synthetic_manifest(spec: SyntheticSpec) -> ModelManifest:
    layers = [matmul(f"layer{i}.weight", a, b, bias=False) for i, (a, b) in enumerate(spec.layer_dims)]
    return ModelManifest("synthetic", tuple(layers))


@dataclass(frozen=True)
class SweepRow:
    method: str
    bits: int
    seed: int
    weight_mse: float
    output_rel_err: float
    size_bits: float
    ace: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    seeds: list[int] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for r in self.rows:
            w.writerow([r.method, r.bits, r.seed, repr(r.weight_mse), repr(r.output_rel_err), repr(r.size_bits), r.ace])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> SweepResult:
        rows = []
        for d in csv.DictReader(io.StringIO(text)):
            rows.append(
                SweepRow(
                    d["method"], int(d["bits"]), int(d["seed"]), float(d["weight_mse"]),
                    float(d["output_rel_err"]), float(d["size_bits"]), int(d["ace"]),
                )
            )
        return cls(rows, sorted({r.seed for r in rows}))

    def mean(self, method: str, bits: int, metric: str = "weight_mse") -> float:
        vals = [getattr(r, metric) for r in self.rows if r.method == method and r.bits == bits]
        if not vals:
            raise KeyError((method, bits))
        return float(np.mean(vals))


def _rel_err(y: np.ndarray, y_ref: np.ndarray) -> float:
    ref = float(np.linalg.norm(y_ref.astype(np.float64)))
    diff = float(np.linalg.norm(y.astype(np.float64) - y_ref.astype(np.float64)))
    return diff / ref if ref else diff


def method_sweep(
    spec: SyntheticSpec,
    methods: Sequence[str],
    bits_list: Sequence[int],
    seeds: int,
    ocs_ratio: float = 0.01,
) -> SweepResult:
    """Quantize, dequantize and evaluate every (method, bits, seed) cell.

    Seeds run from ``spec.seed`` to ``spec.seed + seeds - 1``.  A bit width of
    32 is the unquantized control.
    """
    if not methods or not bits_list or seeds < 1:
        raise ValueError("need at least one method, one bit width and one seed")
    manifest = synthetic_manifest(spec)
    rows = []
    seed_list = [spec.seed + s for s in range(seeds)]
    for seed in seed_list:
        sp = replace(spec, seed=seed)
        model = gen_synthetic_model(sp)
        x = input_batch(sp)
        y_ref = forward(model, x)
        baseline_bits = float(sum(r.data.size * 32 for r in model.records))
        for method in methods:
            for bits in bits_list:
                if bits == PASSTHROUGH_BITS:
                    rows.append(
                        SweepRow(method, bits, seed, 0.0, 0.0, baseline_bits,
                                 ace(manifest, PASSTHROUGH_BITS, 32, sp.input_rows).ace_total)
                    )
                    continue
                policy = QuantPolicy(method, bits, ocs_ratio=ocs_ratio, skip_patterns=())
                qarch, report = quantize_archive(model, policy)
                deq = dequantize_archive(qarch)
                weight_mse = float(np.mean([e.mse for e in report.entries if e.quantized]))
                rows.append(
                    SweepRow(
                        method, bits, seed, weight_mse, _rel_err(forward(deq, x), y_ref),
                        report.size_bits, ace(manifest, bits, 32, sp.input_rows).ace_total,
                    )
                )
    order_m = {m: i for i, m in enumerate(methods)}
    order_b = {b: i for i, b in enumerate(bits_list)}
    rows.sort(key=lambda r: (order_m[r.method], order_b[r.bits], r.seed))
    return SweepResult(rows, seed_list)


@dataclass
class BitVerdict:
    bits: int
    means: dict
    ordering_holds: bool
    lq_worst: bool
    margin_aciq_minus_ocs: float
    margin_lq_minus_aciq: float
    margin_lq_minus_best_other: float


@dataclass
class TrendVerdict:
    vacuous: bool
    seed_count: int
    ocs_method: Optional[str] = None
    per_bits: list[BitVerdict] = field(default_factory=list)
    note: str = ""

    @property
    def ordering_holds(self) -> Optional[bool]:
        """(a): mean weight MSE ordered OCS <= ACIQ <= LQ at every checked bit width."""
        return None if self.vacuous else all(v.ordering_holds for v in self.per_bits)

    @property
    def lq_worst(self) -> Optional[bool]:
        """(b): LQ has strictly the largest mean weight MSE at every checked bit width."""
        return None if self.vacuous else all(v.lq_worst for v in self.per_bits)

    def to_dict(self) -> dict:
        return {
            "vacuous": self.vacuous,
            "seed_count": self.seed_count,
            "ocs_method": self.ocs_method,
            "ordering_ocs_le_aciq_le_lq": self.ordering_holds,
            "lq_strictly_worst": self.lq_worst,
            "per_bits": [asdict(v) for v in self.per_bits],
            "note": self.note,
        }

    def to_text(self) -> str:
        if self.vacuous:
            return f"vacuous: {self.note}"
        lines = [f"seeds={self.seed_count} ocs_method={self.ocs_method}"]
        for v in self.per_bits:
            m = v.means
            lines.append(
                f"k={v.bits}: lq={m['lq']:.4e} aciq={m['aciq']:.4e} ocs={m['ocs']:.4e} "
                f"ordering={'PASS' if v.ordering_holds else 'FAIL'} "
                f"(aciq-ocs={v.margin_aciq_minus_ocs:+.3e}, lq-aciq={v.margin_lq_minus_aciq:+.3e}) "
                f"lq_worst={'PASS' if v.lq_worst else 'FAIL'} (margin {v.margin_lq_minus_best_other:+.3e})"
            )
        lines.append(f"(a) OCS <= ACIQ <= LQ: {self.ordering_holds}")
        lines.append(f"(b) LQ strictly worst: {self.lq_worst}")
        return "\n".join(lines)


def trend_check(result: SweepResult, bits: Iterable[int] = (2, 3, 4)) -> TrendVerdict:
    bits = tuple(bits)
    seeds = sorted({r.seed for r in result.rows})
    quantized_rows = [r for r in result.rows if r.bits != PASSTHROUGH_BITS]
    if not quantized_rows:
        return TrendVerdict(vacuous=True, seed_count=len(seeds), note="only unquantized control rows; no degradation anywhere")

    methods = {r.method for r in quantized_rows}
    ocs = "ocs_qa" if "ocs_qa" in methods else "ocs_naive" if "ocs_naive" in methods else None
    wanted = {"lq": "lq", "aciq": "aciq", "ocs": ocs}
    present = {(r.method, r.bits) for r in quantized_rows}
    missing = [(m, k) for k in bits for m in wanted.values() if m is None or (m, k) not in present]
    if missing:
        raise InsufficientCoverageError(f"sweep lacks (method, bits) cells {missing}")

    verdicts = []
    for k in bits:
        means = {label: result.mean(m, k) for label, m in wanted.items()}
        lq, ac, oc = means["lq"], means["aciq"], means["ocs"]
        verdicts.append(
            BitVerdict(
                bits=k,
                means=means,
                ordering_holds=oc <= ac <= lq,
                lq_worst=lq > ac and lq > oc,
                margin_aciq_minus_ocs=ac - oc,
                margin_lq_minus_aciq=lq - ac,
                margin_lq_minus_best_other=lq - max(ac, oc),
            )
        )
    return TrendVerdict(vacuous=False, seed_count=len(seeds), ocs_method=ocs, per_bits=verdicts)


def spec_from_json(text: str) -> SyntheticSpec:
    return SyntheticSpec.from_dict(json.loads(text))


__all__ = [
    "GAUSSIAN_ONLY",
    "HEAVY_OUTLIER",
    "InsufficientCoverageError",
    "SweepResult",
    "SweepRow",
    "SyntheticSpec",
    "TrendVerdict",
    "forward",
    "gen_synthetic_model",
    "input_batch",
    "method_sweep",
    "spec_from_json",
    "synthetic_manifest",
    "trend_check",
]
