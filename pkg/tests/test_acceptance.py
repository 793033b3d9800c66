"""Acceptance suite: one PASS/FAIL line per criterion, printed in the pytest summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from conftest import random_archive
from oracles import ace_by_enumeration, sweep_argmin
from ptqkit.aciq import solve_alpha
from ptqkit.cli import main
from ptqkit.cost import ace, gen_bert_manifest, model_size, quantization_ratio
from ptqkit.harness import HEAVY_OUTLIER, SweepResult, method_sweep, trend_check
from ptqkit.ocs import expand_inputs, fold_array, ocs_expand, split_channel_qa
from ptqkit.pipeline import QuantPolicy, quantize_archive
from ptqkit.quantizer import dequantize, qmax, quantize_lq
from ptqkit.tensor_store import (
    Archive,
    BadMagicError,
    ExtentError,
    TruncatedError,
    load,
    read_archive,
    write_archive,
)


def _lq_case(seed):
    rng = np.random.default_rng(seed)
    bits = int(rng.integers(2, 9))
    shape = tuple(int(d) for d in rng.integers(1, 40, size=int(rng.integers(1, 3))))
    x = (rng.standard_normal(shape) * 10.0 ** rng.uniform(-3, 3)).astype(np.float32)
    q = quantize_lq(x, bits)
    x_hat = dequantize(q)
    failures = []
    grid = x_hat / q.step
    if not (np.array_equal(grid, np.round(grid)) and np.abs(q.codes.astype(int)).max() <= qmax(bits)):
        failures.append("grid")
    if np.abs(x - x_hat).max() > q.step / 2 * (1 + 1e-6):
        failures.append("bound")
    q2 = quantize_lq(x_hat, bits)
    if not (q2.step == q.step and np.array_equal(q2.codes, q.codes)):
        failures.append("idempotence")
    qn = quantize_lq(-x, bits)
    if not (qn.step == q.step and np.array_equal(qn.codes, -q.codes)):
        failures.append("sign")
    z = quantize_lq(np.zeros(shape, np.float32), bits)
    if z.codes.any() or dequantize(z).any():
        failures.append("zero")
    return failures


def test_c1_lq_correctness_suite(verdict):
    t0 = time.perf_counter()
    bad = {}
    for seed in range(1000):
        for f in _lq_case(seed):
            bad.setdefault(f, []).append(seed)
    dt = time.perf_counter() - t0
    verdict("C1 LQ correctness", not bad and dt < 60, f"1000 tensors, failures={ {k: len(v) for k, v in bad.items()} }, {dt:.1f}s (< 60s)")


def test_c2_lq_noise_floor(verdict):
    x = np.random.default_rng(0).uniform(-1, 1, 10**6)
    q = quantize_lq(x, 8)
    measured = float(np.mean((x - dequantize(q)) ** 2))
    predicted = q.step**2 / 12
    rel = abs(measured / predicted - 1)
    verdict("C2 LQ noise floor", rel <= 0.05, f"mse={measured:.4e} step^2/12={predicted:.4e} rel.err={rel:.2%} (<= 5%)")


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
def test_c3_aciq_vs_sweep(verdict, bits):
    sol = solve_alpha(1.0, bits)
    oracle = sweep_argmin(bits)
    rel = abs(sol.alpha / oracle - 1)
    equiv = max(abs(solve_alpha(c, bits).alpha / (c * sol.alpha) - 1) for c in (0.1, 3, 100))
    ok = rel <= 0.05 and sol.residual <= 1e-8 and equiv <= 1e-6
    verdict(
        f"C3 ACIQ k={bits}",
        ok,
        f"alpha*={sol.alpha:.4f} sweep={oracle:.4f} rel={rel:.2%} (<= 5%), "
        f"|f|={sol.residual:.1e} (<= 1e-8), equivariance={equiv:.1e} (<= 1e-6)",
    )


def test_c4_ocs_algebra(verdict):
    rng = np.random.default_rng(0)
    worst_equiv = 0.0
    worst_fold = 0.0
    for _ in range(100):
        h, d = int(rng.integers(2, 200)), int(rng.integers(1, 64))
        w = rng.standard_normal((h, d))
        w[int(rng.integers(h))] *= 10
        x = rng.standard_normal((4, h))
        for mode in ("naive", "qa"):
            e, smap = ocs_expand(w, 0.01, int(rng.integers(2, 9)), mode)
            y = x @ w
            worst_equiv = max(worst_equiv, float(np.abs(expand_inputs(x, smap) @ e - y).max() / np.abs(y).max()))
            back = fold_array(e, smap)
            if mode == "naive" and not np.array_equal(back, w):
                worst_fold = np.inf
            worst_fold = max(worst_fold, float(np.abs(back - w).max() / np.abs(w).max()))
            if smap.final_channels != h + int(np.ceil(0.01 * h)):
                worst_equiv = np.inf
    halves_exact = True
    for wv in rng.uniform(-5, 5, 1000):
        step = float(rng.uniform(0.01, 1))
        s = split_channel_qa(np.array([[wv]]), 0, step)
        lo, hi = s[0, 0], s[1, 0]
        halves_exact &= bool(np.float64(lo) + np.float64(hi) == wv or abs(lo + hi - wv) <= 2 * np.spacing(abs(wv) + step))
    ok = worst_equiv <= 1e-5 and worst_fold <= 1e-15 and halves_exact
    verdict(
        "C4 OCS algebra",
        ok,
        f"equivalence rel.err={worst_equiv:.1e} (<= 1e-5), fold∘expand rel.err={worst_fold:.1e}, "
        f"qa halves sum={'exact' if halves_exact else 'INEXACT'}, channels=h+ceil(0.01h)",
    )


def test_c5_method_ranking_trend(verdict, tmp_path):
    t0 = time.perf_counter()
    result = method_sweep(HEAVY_OUTLIER, ["lq", "aciq", "ocs_qa"], [2, 3, 4], 100)
    dt = time.perf_counter() - t0
    (tmp_path / "trend.csv").write_text(result.to_csv())
    v = trend_check(result)
    per = "; ".join(
        f"k={b.bits} ocs={b.means['ocs']:.3e} aciq={b.means['aciq']:.3e} lq={b.means['lq']:.3e} "
        f"[aciq-ocs={b.margin_aciq_minus_ocs:+.2e} lq-aciq={b.margin_lq_minus_aciq:+.2e}]"
        for b in v.per_bits
    )
    ok = bool(v.ordering_holds and v.lq_worst and dt < 600)
    verdict(
        "C5 method ranking",
        ok,
        f"(a) OCS<=ACIQ<=LQ {v.ordering_holds}, (b) LQ strictly worst {v.lq_worst}, "
        f"seeds={v.seed_count}, {dt:.0f}s (< 600s); {per}",
    )


def test_c6_analytic_size(verdict):
    rep = model_size(gen_bert_manifest("base"), 3, ocs_ratio=0.01)
    verdict("C6 analytic size", 9 <= rep.reduction_factor <= 11, f"BERT-Base k=3 r=0.01 reduction={rep.reduction_factor:.3f}x (in [9, 11])")


def test_c7_quantization_ratio(verdict):
    r = quantization_ratio(gen_bert_manifest("base"))
    gap = abs(r - 0.996)
    verdict("C7 quantization ratio", r >= 0.985 and gap <= 0.011, f"ratio={r:.5f} (>= 0.985), |ratio-0.996|={gap * 100:.2f}pp (<= 1.1pp)")


def test_c8_ace(verdict):
    m = gen_bert_manifest("base")
    got = ace(m, 3, 32, 128).ace_total
    want = ace_by_enumeration(12, 768, 128, 3)
    a8 = ace(m, {l.name: 8 for l in m.layers}, 32, 128).ace_total
    a32 = ace(m, {l.name: 32 for l in m.layers}, 32, 128).ace_total
    ok = got == want and a8 * 4 == a32
    verdict("C8 ACE", ok, f"toolkit={got} oracle={want} (exact), ACE(8)/ACE(32)={a8 / a32} (= 0.25 exactly)")


def test_c9_serialization(verdict):
    identical = 0
    for seed in range(100):
        a = random_archive(seed)
        if seed % 2:
            # quantized archives carry codes plus split-map metadata
            w = np.random.default_rng(seed).standard_normal((64, 48)).astype(np.float32)
            a, _ = quantize_archive(Archive.from_arrays({"w": w, "classifier": w[:4]}), QuantPolicy("ocs_qa", 3, ocs_ratio=0.05))
        blob = write_archive(a)
        if write_archive(read_archive(blob)) == blob and read_archive(blob).records == a.records:
            identical += 1

    blob = write_archive(random_archive(7))
    errors = {}
    try:
        read_archive(b"XXXX" + blob[4:])
    except BadMagicError:
        errors["magic"] = True
    try:
        read_archive(blob[:-1])
    except TruncatedError:
        errors["truncation"] = True
    two = write_archive(Archive.from_arrays({"a": np.ones(4, np.int32), "b": np.ones(4, np.int32)}))
    # point b's offset (last u64 pair of the index) back at a's bytes
    idx_end = two.index(b"b") + 1 + 2 + 8
    forged = two[:idx_end] + (8).to_bytes(8, "little") + two[idx_end + 8 :]
    try:
        read_archive(forged)
    except ExtentError:
        errors["overlap"] = True
    ok = identical == 100 and len(errors) == 3
    verdict("C9 serialization", ok, f"byte-identical round trips {identical}/100, corruption errors raised: {sorted(errors)}")


def test_c10_cli_end_to_end(verdict, tmp_path):
    t0 = time.perf_counter()
    model = tmp_path / "model.ptqt"
    problems = []
    if main(["gen", str(model)]) != 0:
        problems.append("gen")
    for method in ("lq", "aciq", "ocs_qa"):
        for bits in (8, 6, 4, 3, 2):
            q, d = tmp_path / f"{method}{bits}.q", tmp_path / f"{method}{bits}.d"
            rc = [
                main(["quantize", str(model), str(q), "--method", method, "--bits", str(bits)]),
                main(["dequantize", str(q), str(d)]),
                main(["compare", str(model), str(d), "--out", str(tmp_path / f"{method}{bits}.csv")]),
            ]
            if any(rc) or load(d).names != load(model).names:
                problems.append(f"{method}@{bits}")
    sweep = tmp_path / "sweep.csv"
    seeds = 10
    if main(["sweep", "--out", str(sweep), "--seeds", str(seeds)]) != 0:
        problems.append("sweep")
    res = SweepResult.from_csv(sweep.read_text())
    if len(res.rows) != 3 * 5 * seeds:
        problems.append(f"rows={len(res.rows)}")
    for method in ("lq", "aciq", "ocs_qa"):
        errs = [res.mean(method, k, "output_rel_err") for k in (2, 3, 4, 6, 8)]
        sizes = [res.mean(method, k, "size_bits") for k in (2, 3, 4, 6, 8)]
        if any(a < b for a, b in zip(errs, errs[1:])) or any(a >= b for a, b in zip(sizes, sizes[1:])):
            problems.append(f"monotonicity:{method}")
    dt = time.perf_counter() - t0
    verdict("C10 CLI end-to-end", not problems and dt < 900, f"15 quantize/dequantize/compare runs + {seeds}-seed sweep, problems={problems}, {dt:.0f}s (< 900s)")
