"""Acceptance gate: one PASS/FAIL line per criterion, printed in the terminal summary."""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from csasr import checks
from csasr.config import CsaConfig, TrainConfig, TransformerConfig, toy_model_config
from csasr.csa import attention_gates, channel_attention, init_csa_block, spatial_attention
from csasr.dataset import make_splits, scan_dataset
from csasr.imaging import psnr, ssim
from csasr.network import build_model, forward, l1_loss
from csasr.params import to_tensors
from csasr.smoke import overfit
from csasr.tensor import Tape, Tensor, backward, pixel_shuffle, pixel_unshuffle, softmax_last_axis
from csasr.trainer import evaluate, resume, split_items, train
from csasr.transformer import (
    TokenSequence,
    decoder_stack,
    encoder_stack,
    init_attention,
    init_decoder_stack,
    init_encoder_stack,
    init_sgfn,
    multi_head_attention,
    sgfn,
)

import test_csa
import test_transformer
from test_trainer import RandomCrops

RESULTS: list[str] = []


def record(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_c1_gradient_checks():
    start = time.perf_counter()
    ops = checks.op_reports() + checks.block_reports()
    model = checks.model_report()
    elapsed = time.perf_counter() - start
    for r in ops + [model]:
        print(r.line())
    worst_op = max(r.max_rel_err for r in ops)
    ok = all(r.passed and r.tol <= 1e-4 for r in ops) and model.passed and model.tol <= 1e-3 and elapsed < 120
    assert record(1, "gradient checks", ok,
                  f"{len(ops)} ops/blocks max rel err {worst_op:.2e} (< 1e-4), "
                  f"full model {model.max_rel_err:.2e} (< 1e-3), {elapsed:.0f}s (< 120s)")


def test_c2_shape_contract():
    got = {}
    for s in (2, 3, 4):
        cfg = toy_model_config(s)
        got[s] = forward(Tensor(np.zeros((1, 3, 48, 48), dtype=np.float32)), cfg, build_model(cfg)).shape
    want = {2: (1, 3, 96, 96), 3: (1, 3, 144, 144), 4: (1, 3, 192, 192)}
    assert record(2, "shape contract", got == want, f"{got}")


def test_c3_equation_oracles(f64):
    worst = {"channel_attention": 0.0, "spatial_attention": 0.0, "sgfn": 0.0}
    cfg = test_transformer.CFG
    for seed in range(12):
        r = np.random.default_rng(1000 + seed)
        c = int(r.integers(2, 9))
        p = test_csa.random_block(seed, c)
        f = r.standard_normal((2, c, 5, 6))
        worst["channel_attention"] = max(worst["channel_attention"], float(np.abs(
            channel_attention(Tensor(f), to_tensors(p)).data - test_csa.ref_channel_gate(f, p)).max()))
        worst["spatial_attention"] = max(worst["spatial_attention"], float(np.abs(
            spatial_attention(Tensor(f), to_tensors(p)).data - test_csa.ref_spatial_gate(f, p)).max()))
        grid = (int(r.integers(1, 4)), int(r.integers(1, 4)))
        q = test_transformer.jitter(init_sgfn(r, cfg, np.float64), seed)
        x = r.standard_normal((2, grid[0] * grid[1], cfg.embed_dim))
        worst["sgfn"] = max(worst["sgfn"], float(np.abs(
            sgfn(Tensor(x), grid, cfg, to_tensors(q)).data - test_transformer.ref_sgfn(x, grid, q)).max()))
    ok = all(v < 1e-6 for v in worst.values())
    assert record(3, "equation oracles (12 random inputs each)", ok,
                  ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (< 1e-6)")


def test_c4_invariants(f64):
    r = np.random.default_rng(0)
    failures = []
    for seed in range(20):
        p = init_csa_block(np.random.default_rng(seed), CsaConfig(channels=8, reduction=4), np.float64)
        gates, _ = attention_gates(Tensor(r.standard_normal((2, 8, 6, 6))), to_tensors(p))
        if not all(((g.data > 0) & (g.data < 1)).all() for g in (gates.m_c, gates.m_s)):
            failures.append("gate range")
    cfg = TransformerConfig(patch_h=2, patch_w=2, embed_dim=8, num_heads=2)
    ap = to_tensors(init_attention(r, 8, np.float64))
    _, w = multi_head_attention(Tensor(r.standard_normal((2, 5, 8))), Tensor(r.standard_normal((2, 7, 8))), cfg, ap,
                                return_weights=True)
    sm = softmax_last_axis(Tensor(30 * r.standard_normal((50, 9)))).data
    row_err = max(np.abs(w.data.sum(-1) - 1).max(), np.abs(sm.sum(-1) - 1).max())
    if row_err > 1e-5:
        failures.append("softmax rows")

    x = r.standard_normal((2, 4, 8))
    seq = TokenSequence(Tensor(x), (2, 2), (1, 4, 4), (2, 2))
    enc = to_tensors(test_transformer._zero_outputs(test_transformer.jitter(init_encoder_stack(r, cfg, np.float64), 1)))
    dec = to_tensors(test_transformer._zero_outputs(test_transformer.jitter(init_decoder_stack(r, cfg, np.float64), 2)))
    mem = TokenSequence(Tensor(r.standard_normal((2, 3, 8))), (1, 3), (1, 2, 6), (2, 2))
    ident = max(np.abs(encoder_stack(seq, cfg, enc).tokens.data - x).max(),
                np.abs(decoder_stack(seq, mem, cfg, dec).tokens.data - x).max())
    if ident > 1e-6:
        failures.append("zeroed projections identity")

    y = r.standard_normal((2, 36, 3, 5))
    if not np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(y), 3), 3).data, y):
        failures.append("pixel_shuffle round trip")

    mcfg = toy_model_config(2)
    params = build_model(mcfg, seed=1, dtype="float64")
    with Tape() as tape:
        loss = l1_loss(forward(Tensor(r.random((1, 3, 8, 8))), mcfg, params), Tensor(r.random((1, 3, 16, 16))))
    backward(loss, tape)
    no_grad = [k for k, v in params.items() if v.grad is None]
    if no_grad:
        failures.append(f"missing gradients {no_grad}")
    assert record(4, "invariant suite", not failures,
                  f"softmax row err {row_err:.1e}, identity err {ident:.1e}, "
                  f"{len(params) - len(no_grad)}/{len(params)} params with gradients"
                  + (f"; failed: {failures}" if failures else ""))


def test_c5_metric_oracles():
    a = np.zeros((3, 16, 16))
    p = psnr(a, a + 1, peak=255.0)
    x = np.random.default_rng(0).random((3, 16, 16))
    same = ssim(x, x)
    const = ssim(np.full((3, 16, 16), 0.5), np.full((3, 16, 16), 0.25))
    ok = abs(p - 48.1308) <= 1e-3 and same == 1.0 and abs(const - 0.8001) <= 1e-3
    assert record(5, "metric oracles", ok, f"PSNR {p:.4f} dB, SSIM(a,a) {same!r}, constant-image SSIM {const:.5f}")


def test_c6_overfit_smoke():
    res = overfit(toy_model_config(2), TrainConfig(lr=1e-4, beta1=0.9, beta2=0.99), max_steps=2000)
    ok = res.steps <= 2000 and res.loss_ratio < 0.1 and res.psnr_gain >= 3.0 and res.seconds < 600
    assert record(6, "overfit smoke", ok,
                  f"{res.steps} steps, loss {res.initial_loss:.4f} -> {res.final_loss:.4f} (ratio {res.loss_ratio:.3f} < 0.1), "
                  f"SR {res.sr_psnr:.2f} dB vs bicubic {res.bicubic_psnr:.2f} dB (gain {res.psnr_gain:.2f} >= 3), "
                  f"{res.seconds:.0f}s")


def test_c7_determinism(tmp_path):
    m = toy_model_config(2)
    cfg = TrainConfig(lr=1e-3, seed=21)
    a = train(m, cfg, RandomCrops(), epochs=4, iters_per_epoch=3)
    b = train(m, cfg, RandomCrops(), epochs=4, iters_per_epoch=3)
    same = a.losses == b.losses
    train(m, cfg, RandomCrops(), epochs=2, iters_per_epoch=3, out_dir=tmp_path)
    state, _ = resume(tmp_path / "last.ckpt", m)
    rest = train(m, cfg, RandomCrops(), epochs=4, iters_per_epoch=3, state=state)
    resumed = rest.losses == a.losses[6:]
    assert record(7, "determinism", same and resumed,
                  f"repeat run bit-identical: {same}; resume at epoch 2 matches uninterrupted: {resumed}")


@pytest.mark.skipif(not os.environ.get("UCMERCED_ROOT"), reason="set UCMERCED_ROOT to the UCMerced Images directory")
def test_c8_ucmerced_bicubic_baseline():
    start = time.perf_counter()
    index = scan_dataset(Path(os.environ["UCMERCED_ROOT"]))
    spec = make_splits(index, seed=0)
    report = evaluate(None, toy_model_config(3), split_items(index, spec.test), 3, mode="bicubic")
    elapsed = time.perf_counter() - start
    ok = len(spec.test) == 1050 and abs(report.mean_psnr - 27.46) <= 0.3 and elapsed < 600
    assert record(8, "UCMerced x3 bicubic baseline", ok,
                  f"{len(spec.test)} test images, mean PSNR {report.mean_psnr:.3f} dB (27.46 +/- 0.3), {elapsed:.0f}s")


@pytest.mark.skip(reason="exploratory long run, not gated; see scripts/long_run.py")
def test_c9_long_run():
    pass
