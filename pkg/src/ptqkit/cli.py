"""Command-line entry point: ``ptqkit <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Output files are written to a temporary sibling and renamed on success.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from ptqkit import cost
from ptqkit.harness import HEAVY_OUTLIER, SyntheticSpec, gen_synthetic_model, method_sweep, trend_check
from ptqkit.pipeline import (
    DEFAULT_SKIP,
    PipelineError,
    QuantPolicy,
    compare_archives,
    dequantize_archive,
    is_quantized_archive,
    quantize_archive,
)
from ptqkit.quantizer import MAX_BITS, METHODS, MIN_BITS
from ptqkit.tensor_store import ArchiveError, load, write_archive

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def atomic_write(path: str | Path, data: bytes | str) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _load(path):
    try:
        return load(path)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror or e}") from e
    except ArchiveError as e:
        raise DataError(f"{path}: {e}") from e


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _method_list(text: str) -> list[str]:
    methods = [t.strip() for t in text.split(",") if t.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return methods


def _load_spec(path) -> SyntheticSpec:
    if path is None:
        return HEAVY_OUTLIER
    try:
        return SyntheticSpec.from_dict(json.loads(Path(path).read_text()))
    except OSError as e:
        raise DataError(f"cannot read spec {path}: {e.strerror or e}") from e
    except (ValueError, TypeError, KeyError) as e:
        raise DataError(f"malformed spec {path}: {e}") from e


def cmd_gen(args) -> int:
    spec = _load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    atomic_write(args.out, write_archive(gen_synthetic_model(spec)))
    print(f"wrote {args.out}: {len(spec.layer_dims)} layers, seed {spec.seed}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    arch = _load(args.path)
    quantized = is_quantized_archive(arch)
    meta = arch.meta() if arch.metadata else {}
    tensors_meta = meta.get("ptq", {}).get("tensors", {}) if quantized else {}
    codes_of = {m["codes"]: n for n, m in tensors_meta.items() if m.get("status") == "quantized"}

    header = f"{'name':40s} {'dtype':8s} {'shape':18s} {'min':>11s} {'max':>11s} {'sigma':>11s}"
    if quantized:
        header += f" {'method':10s} {'bits':>4s} {'step':>11s}"
    print(header)
    for rec in arch.records:
        x = rec.data.astype(np.float64)
        lo, hi, sd = (x.min(), x.max(), x.std()) if x.size else (float("nan"),) * 3
        line = f"{rec.name:40s} {str(rec.dtype):8s} {str(list(rec.shape)):18s} {lo:11.4g} {hi:11.4g} {sd:11.4g}"
        if quantized:
            tm = tensors_meta.get(codes_of.get(rec.name, rec.name), {})
            if tm.get("status") == "quantized":
                line += f" {tm['method']:10s} {tm['bits']:4d} {tm['step']:11.4g}"
            else:
                line += f" {tm.get('status', '-'):10s}"
        print(line)
    if quantized:
        pol = meta["ptq"]["policy"]
        print(f"# quantized archive: method={pol['method']} bits={pol['bits']} ocs_ratio={pol['ocs_ratio']}")
    else:
        print(f"# metadata: {len(arch.metadata.encode('utf-8'))} bytes")
    return EXIT_OK


def cmd_quantize(args) -> int:
    arch = _load(args.input)
    skip = tuple(args.skip) if args.skip is not None else DEFAULT_SKIP
    try:
        policy = QuantPolicy(args.method, args.bits, ocs_ratio=args.ocs_ratio, skip_patterns=skip)
    except ValueError as e:
        raise UsageError(str(e)) from e
    try:
        qarch, report = quantize_archive(arch, policy)
    except PipelineError as e:
        raise DataError(str(e)) from e
    data = write_archive(qarch)
    if args.report:
        text = report.to_csv() if str(args.report).endswith(".csv") else report.to_json()
        atomic_write(args.report, text)
    atomic_write(args.output, data)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(
        f"mean_mse={report.mean_mse:.6e} quantization_ratio={report.quantization_ratio:.6f} "
        f"size_reduction={report.reduction_factor:.4f}"
    )
    return EXIT_OK


def cmd_dequantize(args) -> int:
    qarch = _load(args.input)
    try:
        arch = dequantize_archive(qarch)
    except ArchiveError as e:
        raise DataError(f"{args.input}: {e}") from e
    atomic_write(args.output, write_archive(arch))
    print(f"wrote {args.output}: {len(arch)} tensors")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = _load(args.a), _load(args.b)
    try:
        table = compare_archives(a, b)
    except ValueError as e:
        raise DataError(str(e)) from e
    print(f"{'name':40s} {'mse':>13s} {'sqnr_db':>10s}")
    for name, m, s in table.rows:
        print(f"{name:40s} {m:13.6e} {s:10.3f}")
    print(f"{'# mean':40s} {table.mean_mse:13.6e} {table.mean_sqnr_db:10.3f}")
    if args.out:
        atomic_write(args.out, table.to_csv())
    return EXIT_OK


def cmd_ace(args) -> int:
    if args.manifest:
        try:
            manifest = cost.ModelManifest.from_json(Path(args.manifest).read_text())
        except OSError as e:
            raise DataError(f"cannot read manifest {args.manifest}: {e.strerror or e}") from e
        except (ValueError, KeyError, TypeError) as e:
            raise DataError(f"malformed manifest {args.manifest}: {e}") from e
    else:
        manifest = cost.gen_bert_manifest(args.config)
    rows = []
    for bits in args.weight_bits:
        try:
            rep = cost.ace(
                manifest, bits, args.act_bits, args.seq_len,
                include_attention=args.include_attention, ocs_ratio=args.ocs_ratio,
            )
        except ValueError as e:
            raise UsageError(str(e)) from e
        rows.append((bits, rep))
    print(f"{'config':14s} {'bits':>4s} {'ace':>20s} {'macs':>16s} {'size_bits':>16s} {'reduction':>9s} {'ratio':>8s}")
    for bits, rep in rows:
        print(
            f"{rep.config_name:14s} {bits:4d} {rep.ace_total:20d} {rep.mac_total:16d} "
            f"{rep.model_size_bits:16.0f} {rep.size_reduction_factor:9.4f} {rep.quantization_ratio:8.5f}"
        )
    if args.out:
        atomic_write(args.out, cost.cost_rows_csv(rows))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if not 0 <= args.ocs_ratio <= 1:
        raise UsageError("--ocs-ratio must lie in [0, 1]")
    result = method_sweep(spec, args.methods, args.bits, args.seeds, ocs_ratio=args.ocs_ratio)
    atomic_write(args.out, result.to_csv())
    print(f"wrote {args.out}: {len(result.rows)} rows")
    if args.trend:
        verdict = trend_check(result)
        print(verdict.to_text())
        if args.trend_out:
            atomic_write(args.trend_out, json.dumps(verdict.to_dict(), indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ptqkit", description="Post-training weight quantization toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic linear-stack model")
    g.add_argument("out")
    g.add_argument("--spec", help="synthetic spec JSON (default: heavy-outlier spec)")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("inspect", help="list tensors in an archive")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)

    q = sub.add_parser("quantize", help="quantize an archive")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--method", required=True, choices=METHODS)
    q.add_argument("--bits", required=True, type=int, choices=range(MIN_BITS, MAX_BITS + 1), metavar=f"{{{MIN_BITS}..{MAX_BITS}}}")
    q.add_argument("--ocs-ratio", type=float, default=0.01)
    q.add_argument("--skip", action="append", metavar="PATTERN", help="glob of tensor names to leave unquantized (repeatable)")
    q.add_argument("--report", help="report path (.json, or .csv for one row per tensor)")
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="reconstruct float32 tensors from a quantized archive")
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(func=cmd_dequantize)

    c = sub.add_parser("compare", help="per-tensor MSE and SQNR between two archives")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", help="CSV output path")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("ace", help="arithmetic computation effort and model size")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--config", choices=sorted(cost.BERT_CONFIGS))
    a.add_argument("--weight-bits", type=_int_list, default=[32], help="comma-separated weight bit widths")
    a.add_argument("--act-bits", type=int, default=32)
    a.add_argument("--seq-len", type=int, default=128)
    a.add_argument("--ocs-ratio", type=float, default=0.0)
    a.add_argument("--include-attention", action="store_true")
    a.add_argument("--out", help="CSV output path")
    a.set_defaults(func=cmd_ace)

    s = sub.add_parser("sweep", help="method x bits x seed sweep on synthetic models")
    s.add_argument("--spec")
    s.add_argument("--methods", type=_method_list, default=["lq", "aciq", "ocs_qa"])
    s.add_argument("--bits", type=_int_list, default=[8, 6, 4, 3, 2])
    s.add_argument("--seeds", type=int, default=100)
    s.add_argument("--seed", type=int, help="first seed (overrides the --spec file)")
    s.add_argument("--ocs-ratio", type=float, default=0.01)
    s.add_argument("--out", required=True)
    s.add_argument("--trend", action="store_true", help="print method-ranking verdicts")
    s.add_argument("--trend-out", help="write verdicts as JSON")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "bits", None) is not None and args.command == "sweep":
            bad = [b for b in args.bits if b != 32 and not MIN_BITS <= b <= MAX_BITS]
            if bad or args.seeds < 1:
                raise UsageError(f"sweep bits must lie in [{MIN_BITS}, {MAX_BITS}] or be 32, seeds >= 1")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
