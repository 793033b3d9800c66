"""Inference-cost and model-size accounting.

ACE (arithmetic computation effort) weights every multiply-accumulate by the
product of its operand bit widths: ACE = sum over (i, j) of n_ij * i * j.
Only matmuls with a weight operand are counted by default; embedding lookups
contribute no MACs.
"""

from __future__ import annotations

import csv
import fnmatch
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence, Union

FULL_BITS = 32
STEP_BITS = 32
KINDS = ("matmul", "embedding", "other")

# (encoder layers, hidden size); intermediate = 4 * hidden
BERT_CONFIGS = {
    "tiny": (2, 128),
    "mini": (4, 256),
    "small": (4, 512),
    "medium": (8, 512),
    "base": (12, 768),
    "large": (24, 1024),
}
BERT_VOCAB = 30522
BERT_MAX_POSITIONS = 512
BERT_TYPE_VOCAB = 2
NUM_LABELS = 2


class MissingBitsError(KeyError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_dim: int
    out_dim: int
    weight_param_count: int
    bias_param_count: int = 0
    quantize_flag: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "matmul" and self.weight_param_count != self.in_dim * self.out_dim:
            raise ValueError(f"{self.name}: matmul weight count must equal in_dim * out_dim")

    @property
    def param_count(self) -> int:
        return self.weight_param_count + self.bias_param_count


def matmul(name: str, h: int, d: int, bias: bool = True, quantize: bool = True) -> LayerSpec:
    return LayerSpec(name, "matmul", h, d, h * d, d if bias else 0, quantize)


@dataclass(frozen=True)
class ModelManifest:
    config_name: str
    layers: tuple[LayerSpec, ...]
    attention: tuple[int, ...] = ()
    """Hidden width of each self-attention block (for optional activation-by-activation MACs)."""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "attention", tuple(self.attention))
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names in manifest")

    @property
    def total_params(self) -> int:
        return sum(l.param_count for l in self.layers)

    def to_dict(self) -> dict:
        return {
            "config_name": self.config_name,
            "attention": list(self.attention),
            "layers": [asdict(l) for l in self.layers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelManifest:
        layers = []
        for l in d["layers"]:
            kind = l["kind"]
            in_dim, out_dim = int(l["in_dim"]), int(l["out_dim"])
            default_w = in_dim * out_dim if kind in ("matmul", "embedding") else None
            w = l.get("weight_param_count", default_w)
            if w is None:
                raise ValueError(f"layer {l['name']!r} of kind {kind!r} needs weight_param_count")
            layers.append(
                LayerSpec(
                    name=l["name"],
                    kind=kind,
                    in_dim=in_dim,
                    out_dim=out_dim,
                    weight_param_count=int(w),
                    bias_param_count=int(l.get("bias_param_count", 0)),
                    quantize_flag=bool(l.get("quantize_flag", True)),
                )
            )
        return cls(d["config_name"], tuple(layers), tuple(d.get("attention", ())))

    @classmethod
    def from_json(cls, text: str) -> ModelManifest:
        return cls.from_dict(json.loads(text))


def gen_bert_manifest(config: str, num_labels: int = NUM_LABELS) -> ModelManifest:
    """Layer inventory of a standard BERT encoder plus pooler and a classifier head."""
    try:
        n_layers, h = BERT_CONFIGS[config]
    except KeyError:
        raise ValueError(f"unknown BERT config {config!r}; choose from {sorted(BERT_CONFIGS)}") from None
    ffn = 4 * h

    def norm(name):
        return LayerSpec(name, "other", h, h, h, h, quantize_flag=False)

    layers = [
        LayerSpec("embeddings.word_embeddings", "embedding", BERT_VOCAB, h, BERT_VOCAB * h),
        LayerSpec("embeddings.position_embeddings", "embedding", BERT_MAX_POSITIONS, h, BERT_MAX_POSITIONS * h),
        LayerSpec("embeddings.token_type_embeddings", "embedding", BERT_TYPE_VOCAB, h, BERT_TYPE_VOCAB * h),
        norm("embeddings.LayerNorm"),
    ]
    for i in range(n_layers):
        p = f"encoder.layer.{i}"
        layers += [
            matmul(f"{p}.attention.self.query", h, h),
            matmul(f"{p}.attention.self.key", h, h),
            matmul(f"{p}.attention.self.value", h, h),
            matmul(f"{p}.attention.output.dense", h, h),
            norm(f"{p}.attention.output.LayerNorm"),
            matmul(f"{p}.intermediate.dense", h, ffn),
            matmul(f"{p}.output.dense", ffn, h),
            norm(f"{p}.output.LayerNorm"),
        ]
    layers.append(matmul("pooler.dense", h, h))
    layers.append(matmul("classifier", h, num_labels, quantize=False))
    return ModelManifest(f"bert-{config}", tuple(layers), attention=(h,) * n_layers)


def _matches(name: str, patterns: Iterable[str]) -> bool:
    return any(fnmatch.fnmatchcase(name, p) for p in patterns)


def is_quantized(layer: LayerSpec, skip: Iterable[str] = ()) -> bool:
    return layer.quantize_flag and not _matches(layer.name, skip)


def quantization_ratio(manifest: ModelManifest, skip: Iterable[str] = ()) -> float:
    """Quantized weight count over total parameter count."""
    if not manifest.layers:
        raise ValueError("empty manifest")
    skip = tuple(skip)
    total = manifest.total_params
    if total == 0:
        raise ValueError("manifest has no parameters")
    quantized = sum(l.weight_param_count for l in manifest.layers if is_quantized(l, skip))
    return quantized / total


@dataclass(frozen=True)
class SizeReport:
    quantized_bits: float
    unquantized_bits: int
    step_overhead_bits: int
    baseline_bits: int

    @property
    def total_bits(self) -> float:
        return self.quantized_bits + self.unquantized_bits + self.step_overhead_bits

    @property
    def reduction_factor(self) -> float:
        return self.baseline_bits / self.total_bits


BitsSpec = Union[int, Mapping[str, int]]


def _layer_bits(layer: LayerSpec, bits: BitsSpec, skip: Sequence[str]) -> int:
    """Weight bit width of one layer; FULL_BITS means stored unquantized."""
    if not is_quantized(layer, skip):
        if isinstance(bits, Mapping):
            return int(bits.get(layer.name, FULL_BITS))
        return FULL_BITS
    if isinstance(bits, Mapping):
        if layer.name not in bits:
            raise MissingBitsError(f"no weight bit width given for quantized layer {layer.name!r}")
        return int(bits[layer.name])
    return int(bits)


def _check_weight_bits(k: int, name: str) -> None:
    # analytic accounting accepts any width; only [2, 8] is realizable by the quantizers
    if not 1 <= k <= FULL_BITS:
        raise ValueError(f"{name}: weight bits must lie in [1, {FULL_BITS}], got {k}")


def model_size(
    manifest: ModelManifest, bits: BitsSpec, ocs_ratio: float = 0.0, skip: Iterable[str] = ()
) -> SizeReport:
    """Representational size in bits.

    Each quantized weight costs k bits, times (1 + r) when outlier splitting
    adds channels, plus one 32-bit step per quantized tensor.  Everything
    else, biases included, stays at 32 bits.  A width of 32 means the layer is
    left unquantized and carries no step.
    """
    skip = tuple(skip)
    if not 0 <= ocs_ratio <= 1:
        raise ValueError("ocs_ratio must lie in [0, 1]")
    q_bits = 0.0
    plain = 0
    steps = 0
    for layer in manifest.layers:
        k = _layer_bits(layer, bits, skip)
        _check_weight_bits(k, layer.name)
        plain += layer.bias_param_count * FULL_BITS
        if k == FULL_BITS:
            plain += layer.weight_param_count * FULL_BITS
        else:
            q_bits += layer.weight_param_count * k * (1 + ocs_ratio)
            steps += STEP_BITS
    return SizeReport(q_bits, plain, steps, manifest.total_params * FULL_BITS)


@dataclass(frozen=True)
class CostReport:
    config_name: str
    ace_total: int
    mac_total: int
    model_size_bits: float
    size_reduction_factor: float
    quantization_ratio: float
    mac_groups: dict = field(default_factory=dict)
    """(weight_bits, act_bits) -> MAC count."""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mac_groups"] = [{"i": i, "j": j, "macs": n} for (i, j), n in sorted(self.mac_groups.items())]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def layer_macs(layer: LayerSpec, seq_len: int) -> int:
    if layer.kind != "matmul":
        return 0
    return seq_len * layer.in_dim * layer.out_dim


def ace(
    manifest: ModelManifest,
    weight_bits: BitsSpec,
    act_bits: int = FULL_BITS,
    seq_len: int = 128,
    *,
    include_attention: bool = False,
    ocs_ratio: float = 0.0,
    skip: Iterable[str] = (),
) -> CostReport:
    if not 1 <= act_bits <= FULL_BITS:
        raise ValueError(f"activation bits must lie in [1, 32], got {act_bits}")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    skip = tuple(skip)
    groups: dict[tuple[int, int], int] = {}
    for layer in manifest.layers:
        n = layer_macs(layer, seq_len)
        if n == 0:
            continue
        i = _layer_bits(layer, weight_bits, skip)
        _check_weight_bits(i, layer.name)
        groups[(i, act_bits)] = groups.get((i, act_bits), 0) + n
    if include_attention:
        for h in manifest.attention:
            # scores Q K^T and context P V, each l * l * h MACs
            groups[(act_bits, act_bits)] = groups.get((act_bits, act_bits), 0) + 2 * seq_len * seq_len * h

    size = model_size(manifest, weight_bits, ocs_ratio=ocs_ratio, skip=skip)
    return CostReport(
        config_name=manifest.config_name,
        ace_total=sum(n * i * j for (i, j), n in groups.items()),
        mac_total=sum(groups.values()),
        model_size_bits=size.total_bits,
        size_reduction_factor=size.reduction_factor,
        quantization_ratio=quantization_ratio(manifest, skip),
        mac_groups=groups,
    )


CSV_FIELDS = ("config", "bits", "size_bits", "ace", "ratio")


def cost_rows_csv(rows: Iterable[tuple[int, CostReport]]) -> str:
    """CSV with one (config, bits, size_bits, ace, ratio) row per (bits, report) pair."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for bits, rep in rows:
        w.writerow([rep.config_name, bits, repr(float(rep.model_size_bits)), rep.ace_total, repr(rep.quantization_ratio)])
    return buf.getvalue()
