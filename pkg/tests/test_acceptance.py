"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`.  The two training-based
criteria share session-scoped fixtures; the full suite is sized for a single
desk-scale machine.
"""

import math
import time

import numpy as np
import pytest
import torch

from conftest import TINY_CODEC, TINY_PREEDIT, random_image
from lvcodec.codec import CodecConfig, VariableRateCodec
from lvcodec.evalkit import (
    RAPoint,
    bd_rate,
    complexity_report,
    extractor_complexity,
    pareto_front,
)
from lvcodec.losses import default_presets
from lvcodec.pipeline import build_pipeline, load_checkpoint
from lvcodec.tokens import soft_rank, rank_loss
from lvcodec.toydata import make_toy_images
from lvcodec.trainer import TrainConfig, evaluate, mean_bpp, run_stage, smoothed
from test_tokens import separated_matrix

torch.set_num_threads(1)


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" - {detail}" if detail else ""), flush=True)
    assert ok, f"{name}: {detail}"


# --- shared training fixtures --------------------------------------------------


@pytest.fixture(scope="session")
def acceptance_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_data")
    make_toy_images(root / "train", 200, size=(160, 160), seed=1)
    make_toy_images(root / "held", 16, size=(128, 128), seed=2)
    return root


@pytest.fixture(scope="session")
def held_images(acceptance_data):
    from lvcodec.trainer import list_image_files, load_image

    return [
        torch.from_numpy(np.moveaxis(load_image(p), -1, 0).copy())
        for p in list_image_files(acceptance_data / "held")
    ]


@pytest.fixture(scope="session")
def stage1_2k(acceptance_data, tmp_path_factory):
    """2k-iteration tiny stage-1 run for the rate-fidelity criterion."""
    out = tmp_path_factory.mktemp("stage1_2k")
    cfg = TrainConfig(stage=1, dataset_path=str(acceptance_data / "train"),
                      iterations=2000, batch_size=4, crop_size=64,
                      codec=TINY_CODEC, preedit=TINY_PREEDIT,
                      out_dir=str(out), seed=21)
    return run_stage(cfg)


@pytest.fixture(scope="session")
def three_stage(acceptance_data, tmp_path_factory):
    """Pinned smoke schedule: 500/300/300 iterations at 128x128 crops."""
    out = tmp_path_factory.mktemp("three_stage")
    t0 = time.time()
    common = dict(dataset_path=str(acceptance_data / "train"), batch_size=8,
                  crop_size=128, out_dir=str(out), seed=7)
    r1 = run_stage(TrainConfig(stage=1, iterations=500, codec=TINY_CODEC,
                               preedit=TINY_PREEDIT, **common))
    r2 = run_stage(TrainConfig(stage=2, iterations=300, **common),
                   init_checkpoint=r1.checkpoint_path)
    r3 = run_stage(TrainConfig(stage=3, iterations=300, **common),
                   init_checkpoint=r2.checkpoint_path)
    elapsed = time.time() - t0
    return r1, r2, r3, elapsed


# --- criteria ------------------------------------------------------------------


def test_codec_losslessness():
    """100 random images, all 6 q: integer latents and reconstructions exact."""
    torch.manual_seed(0)
    codec = VariableRateCodec(CodecConfig(**TINY_CODEC))
    codec.eval()
    rng = np.random.default_rng(2024)
    t0 = time.time()
    checked = 0
    for i in range(100):
        h = int(rng.integers(64, 129))
        w = int(rng.integers(64, 129))
        img = random_image(rng, h, w)
        for q in range(codec.config.q_levels):
            enc_pack = codec.latents(img, q)
            bs = codec.compress(img, q)
            dec_pack = codec.decompress_latents(bs)
            assert torch.equal(enc_pack.y, dec_pack.y), f"y mismatch img {i} q {q}"
            assert torch.equal(enc_pack.z, dec_pack.z), f"z mismatch img {i} q {q}"
            rec, q_out = codec.decompress(bs)
            direct = codec.direct_synthesis(img, q)
            assert q_out == q
            assert torch.equal(rec, direct), f"recon mismatch img {i} q {q}"
            checked += 1
    elapsed = time.time() - t0
    report(
        "codec losslessness (100 images x 6 q)",
        checked == 600 and elapsed < 300,
        f"{checked} round trips exact, {elapsed:.1f}s (< 300s)",
    )


def test_rate_estimate_fidelity(stage1_2k, held_images):
    """|estimated - actual| / actual <= 5% averaged over 16 images."""
    pipeline = stage1_2k.pipeline
    pipeline.eval()
    codec = pipeline.codec
    gaps = []
    for img in held_images:
        q = int(torch.randint(0, codec.config.q_levels, (1,),
                              generator=torch.Generator().manual_seed(len(gaps)))
                .item())
        with torch.no_grad():
            out = codec(img.unsqueeze(0), q, quant="round")
        est = float(out["bits_y"] + out["bits_z"])
        bs = codec.compress(img, q)
        actual = 8 * (len(bs.z_bytes) + len(bs.y_bytes))
        gaps.append(abs(est - actual) / actual)
    mean_gap = float(np.mean(gaps))
    report(
        "rate-estimate fidelity after 2k-iteration stage-1",
        mean_gap <= 0.05,
        f"mean relative gap {mean_gap:.4f} over {len(gaps)} images (<= 0.05)",
    )


def test_rank_loss_gradient_check():
    """Autodiff vs central differences on 20 separated 8x16 pairs."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        t_d = torch.from_numpy(separated_matrix(rng, 8, 16)).requires_grad_(True)
        t_gt = torch.from_numpy(separated_matrix(rng, 8, 16))
        rank_loss(t_gt, t_d).backward()
        grad = t_d.grad.detach().numpy()
        fd = np.zeros_like(grad)
        eps = 1e-5
        base = t_d.detach().clone()
        for r in range(8):
            for c in range(16):
                plus = base.clone()
                plus[r, c] += eps
                minus = base.clone()
                minus[r, c] -= eps
                fd[r, c] = ((rank_loss(t_gt, plus) - rank_loss(t_gt, minus))
                            .item() / (2 * eps))
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
    report(
        "rank-loss gradient check (20 pairs, 8x16)",
        worst < 1e-4,
        f"worst norm-wise relative error {worst:.2e} (< 1e-4)",
    )


def test_soft_rank_invariants():
    """Bounds r/2 <= soft_rank <= r and orthogonal invariance within 1e-6."""
    rng = np.random.default_rng(9)
    worst_dev = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 16))
        n = int(rng.integers(2, 24))
        m = rng.normal(size=(d, n)) * rng.uniform(0.1, 5.0)
        r = min(d, n)
        v = soft_rank(torch.from_numpy(m)).item()
        assert r / 2 <= v <= r, f"bounds violated: {v} for r={r}"
        u = np.linalg.qr(rng.normal(size=(d, d)))[0]
        w = np.linalg.qr(rng.normal(size=(n, n)))[0]
        v_rot = soft_rank(torch.from_numpy(u @ m @ w)).item()
        worst_dev = max(worst_dev, abs(v_rot - v))
    zero = soft_rank(torch.zeros(4, 8)).item()
    report(
        "soft-rank bounds and orthogonal invariance (100 matrices)",
        worst_dev <= 1e-6 and zero == pytest.approx(2.0, abs=1e-9),
        f"max rotation deviation {worst_dev:.2e} (<= 1e-6); zero matrix -> {zero}",
    )


def test_bd_rate_oracle():
    """Identical curves -> 0.00%; half-rate -> -50% +- 0.1; affine invariance."""
    rates = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
    anchor = [RAPoint(r, 30 + 8 * math.log2(r)) for r in rates]
    identical = bd_rate(anchor, anchor)
    half = bd_rate(anchor, [RAPoint(p.rate / 2, p.metric) for p in anchor])
    test_curve = [RAPoint(p.rate * 0.75, p.metric + 0.8) for p in anchor]
    base = bd_rate(anchor, test_curve)
    affine_dev = 0.0
    for a, b in ((2.0, 5.0), (0.25, -3.0), (40.0, 1000.0)):
        relabeled = bd_rate(
            [RAPoint(p.rate, a * p.metric + b) for p in anchor],
            [RAPoint(p.rate, a * p.metric + b) for p in test_curve],
        )
        affine_dev = max(affine_dev, abs(relabeled - base))
    report(
        "BD-rate oracle",
        abs(identical) < 1e-9 and abs(half + 50.0) <= 0.1 and affine_dev <= 0.1,
        f"identical {identical:.2e}%, half-rate {half:.3f}%, "
        f"affine deviation {affine_dev:.2e}pp",
    )


def test_pareto_properties():
    """Subset, mutual nondominance, nondecreasing metric: 1000 random sets."""
    rng = np.random.default_rng(12)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        pts = [RAPoint(float(r), float(m))
               for r, m in zip(rng.uniform(0.01, 10, n), rng.normal(0, 5, n))]
        front = pareto_front(pts)
        assert all(p in pts for p in front), "output not a subset"
        for i, p in enumerate(front):
            for j, q in enumerate(front):
                if i != j:
                    dominates = (q.rate <= p.rate and q.metric >= p.metric
                                 and (q.rate < p.rate or q.metric > p.metric))
                    assert not dominates, "dominated point kept"
        rates = [p.rate for p in front]
        metrics = [p.metric for p in front]
        assert rates == sorted(rates)
        assert all(a <= b for a, b in zip(metrics, metrics[1:]))
    report("pareto-front properties (1000 random point sets)", True,
           "subset, mutually nondominated, metric nondecreasing")


def test_three_stage_smoke(three_stage, held_images):
    r1, r2, r3, elapsed = three_stage
    presets = default_presets(6)

    # stage 1: smoothed loss drops by at least 30%
    totals = [h["total"] for h in r1.history]
    sm = smoothed(totals, window=50)
    first, last = float(np.mean(totals[:50])), sm[-1]
    drop_ok = last <= 0.7 * first
    report("smoke stage-1 loss drop >= 30%", drop_ok,
           f"smoothed {first:.3f} -> {last:.3f} (ratio {last / first:.3f})")

    # stage 2: codec weights bit-identical to the stage-1 checkpoint
    stage1_pipe, _, _, _ = load_checkpoint(r1.checkpoint_path)
    frozen = all(
        torch.equal(a, b)
        for (_, a), (_, b) in zip(stage1_pipe.codec.state_dict().items(),
                                  r2.pipeline.codec.state_dict().items())
    )
    report("smoke stage-2 codec frozen bit-exactly", frozen,
           f"{len(list(r2.pipeline.codec.state_dict()))} tensors compared")

    # stage 3: monotone rate ladder on the held-out set
    pipe = r3.pipeline
    bpps = [mean_bpp(pipe, held_images, q) for q in range(6)]
    inversions = [
        (q, (bpps[q + 1] - bpps[q]) / bpps[q])
        for q in range(5) if bpps[q + 1] > bpps[q]
    ]
    ladder_ok = len(inversions) <= 1 and all(size <= 0.02 for _, size in inversions)
    report(
        "smoke bpp monotone across q (<= 1 adjacent inversion <= 2%)",
        ladder_ok,
        "ladder " + " ".join(f"{b:.4f}" for b in bpps) +
        f"; inversions {[(q, round(s * 100, 2)) for q, s in inversions]}%",
    )

    # trained pre-editor reacts to the q index (adaptation is active)
    probe = held_images[0]
    with torch.no_grad():
        tokens = pipe.extractor.extract(probe)
        diff = (pipe.preedit(probe, tokens, 0)
                - pipe.preedit(probe, tokens, 5)).abs().mean().item()
    report("smoke pre-edit differs between q=0 and q=5", diff > 0,
           f"mean abs difference {diff:.2e}")

    # full pipeline beats (or ties) the no-pre-edit pipeline at equal q
    margins = []
    for q in range(6):
        on = evaluate(pipe, held_images, q, presets[q], use_preedit=True)
        off = evaluate(pipe, held_images, q, presets[q], use_preedit=False)
        margins.append((q, on["total"], off["total"]))
    preedit_ok = all(on_t <= off_t for _, on_t, off_t in margins)
    report(
        "smoke pre-edit total loss <= no-pre-edit at equal q",
        preedit_ok,
        "; ".join(f"q{q}: {on_t:.3f} vs {off_t:.3f}" for q, on_t, off_t in margins),
    )

    report("smoke runtime < 30 min", elapsed < 1800, f"{elapsed / 60:.1f} min")


def test_complexity_report_runs():
    """Default-config report prints FLOPs/params/time beside reference values."""
    torch.manual_seed(0)
    pipeline = build_pipeline()  # default widths
    probe = torch.rand(1, 3, 256, 256)
    q = 0
    with torch.no_grad():
        y = pipeline.codec.g_enc(probe, q)
        z = pipeline.codec.h_enc(y, q)
    tokens = pipeline.extractor.extract(probe)

    reports = {
        "token_extractor": extractor_complexity(pipeline.extractor),
        "preedit": complexity_report(pipeline.preedit, (probe, tokens, q)),
    }
    enc = complexity_report(pipeline.codec.g_enc, (probe, q))
    henc = complexity_report(pipeline.codec.h_enc, (y, q))
    dec = complexity_report(pipeline.codec.g_dec, (torch.round(y), q))
    hdec = complexity_report(pipeline.codec.h_dec, (torch.round(z), q))
    reference = {
        "token_extractor": (365.8, 85.64),
        "preedit": (2.420, 23.51),
        "encoder": (12.22, 30.97),
        "decoder": (12.11, 30.45),
    }
    rows = {
        "token_extractor": reports["token_extractor"],
        "preedit": reports["preedit"],
        "encoder": None,
        "decoder": None,
    }
    print()
    for name in ("token_extractor", "preedit"):
        rep = rows[name]
        ref_g, ref_m = reference[name]
        print(f"    {name:<16} {rep.gflops:9.3f} GFLOPs {rep.params_m:8.3f} M "
              f"{rep.time_s:.4f} s   (reference {ref_g} G / {ref_m} M)")
    for name, (a, b) in (("encoder", (enc, henc)), ("decoder", (dec, hdec))):
        gflops = (a.flops + b.flops) / 1e9
        params = (a.params + b.params) / 1e6
        ref_g, ref_m = reference[name]
        print(f"    {name:<16} {gflops:9.3f} GFLOPs {params:8.3f} M "
              f"{a.time_s + b.time_s:.4f} s   (reference {ref_g} G / {ref_m} M)")
    ok = all(r.flops > 0 and r.params > 0 and r.time_s > 0
             for r in (reports["preedit"], enc, henc, dec, hdec))
    report("complexity report on the default config", ok,
           "informational comparison printed")
