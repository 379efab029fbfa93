"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 5-9 and 11 use the trained checkpoints in ``artifacts/`` (trained
on first use, see conftest). Run with ``pytest tests/test_acceptance.py -v``;
the criterion lines are printed even under output capture.
"""
import json
import time

import numpy as np
import pytest

from spritemotion import diffusion, evaluation
from spritemotion.cli import main as cli_main
from spritemotion.core.random import RandomSource
from spritemotion.experiment import training_seconds
from spritemotion.gradsuite import run_gradient_suite
from spritemotion.motion import MotionSequence
from spritemotion.pipeline import MeanMode
from spritemotion.storage import (
    ChecksumError,
    ConfigMismatchError,
    TruncatedPayloadError,
    load_checkpoint,
    read_motion_file,
    save_checkpoint,
    write_motion_file,
)

TRAIN_BUDGET_S = 3600.0


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
        assert ok, detail

    return emit


def test_criterion_01_gradient_suite(report):
    ok, seconds, summary = run_gradient_suite(tolerance=1e-5)
    report(1, ok and seconds < 300, f"all blocks within 1e-5 relative error: {ok}; {seconds:.1f}s (< 300s)")


def test_criterion_02_gaussian_oracle(report):
    sched = diffusion.linear_beta_schedule()
    start = time.perf_counter()
    out = diffusion.sample_loop(diffusion.gaussian_optimal_eps(sched, 2.0), None, None, sched, sched.T,
                                RandomSource(11), (10_000, 1))
    seconds = time.perf_counter() - start
    mean, std = float(out.mean()), float(out.std())
    ok = abs(mean) <= 0.05 and abs(std - 2.0) <= 0.05 * 2.0 and seconds < 120
    report(2, ok, f"10^4 chains: mean {mean:+.4f} (|.|<=0.05), std {std:.4f} (2 +- 5%), {seconds:.1f}s")


def test_criterion_03_forward_normalization(report):
    sched = diffusion.linear_beta_schedule()
    rng = RandomSource(21)
    x0 = rng.normal((100_000, 20))
    xt = diffusion.forward_diffuse(x0, sched.T - 1, rng.normal(x0.shape), sched)
    var = xt.var(axis=0)
    ok = bool(np.all(np.abs(var - 1.0) <= 0.03))
    report(3, ok, f"per-coordinate variance at t=T-1 in [{var.min():.4f}, {var.max():.4f}] (1 +- 3%)")


class _Cond:
    def __init__(self, tag="c"):
        self.tag = tag

    def masked(self, active):
        return _Cond("c")

    def null(self):
        return _Cond("null")


def test_criterion_04_cfg_identities(report):
    rng = RandomSource(4)
    ec, eu = rng.normal((8, 20)), rng.normal((8, 20))

    def model(x, t, cond):
        return ec if cond.tag == "c" else eu

    x = np.zeros((8, 20))
    e0 = diffusion.cfg_epsilon(model, x, 3, _Cond(), diffusion.GuidanceSpec(0.0))
    e1 = diffusion.cfg_epsilon(model, x, 3, _Cond(), diffusion.GuidanceSpec(1.0))
    bitwise = np.array_equal(e0, eu) and np.array_equal(e1, ec)
    worst = 0.0
    for s in (0.25, 0.5, 2.0, 3.5, 7.0):
        es = diffusion.cfg_epsilon(model, x, 3, _Cond(), diffusion.GuidanceSpec(s))
        worst = max(worst, float(np.abs(es - (e0 + s * (e1 - e0))).max()))
    ok = bitwise and worst <= 1e-13
    report(4, ok, f"s=0/s=1 bitwise: {bitwise}; max affine residual {worst:.1e}")


def test_criterion_05_stage1_desk_run(report, trained_stage1, cfg, artifacts_dir):
    r = evaluation.stage1_report(trained_stage1, evaluation.heldout_clips(cfg))
    seconds = training_seconds(artifacts_dir / "stage1.ckpt")
    ok = (r.cross_frame_psnr >= 28.0 and r.max_abs_code < 1.0 and r.stability <= 0.10
          and seconds is not None and seconds <= TRAIN_BUDGET_S)
    report(5, ok, f"held-out PSNR {r.cross_frame_psnr:.2f} dB (>=28), max|code| {r.max_abs_code:.4f} (<1), "
                  f"stability {r.stability:.4f} (<=0.10), training {seconds}s (<=3600)")


@pytest.fixture(scope="module")
def sweep(trained_pipeline, cfg):
    return evaluation.sigma_sweep(trained_pipeline, cfg)


def test_criterion_06_lip_sync_trend(report, sweep, artifacts_dir):
    by = {r.sigma: r for r in sweep}
    seconds = training_seconds(artifacts_dir / "stage2.ckpt")
    s3, s9 = by[0.3].sync, by[0.9].sync
    ok = s3 >= 0.6 and s3 >= s9 and seconds is not None and seconds <= TRAIN_BUDGET_S
    report(6, ok, f"sync(0.3) {s3:.4f} (>=0.6), sync(0.9) {s9:.4f} (<= sync(0.3)), training {seconds}s")


def test_criterion_07_motion_degree_monotone(report, sweep, cfg):
    realized = [r.realized_sigma for r in sweep]
    ok = [r.sigma for r in sweep] == [0.3, 0.6, 0.9] and cfg.bench.sweep_seeds >= 32
    ok = ok and all(a < b for a, b in zip(realized, realized[1:]))
    report(7, ok, f"realized sigma over {cfg.bench.sweep_seeds} seeds: "
                  + ", ".join(f"{r.sigma}->{r.realized_sigma:.4f}" for r in sweep))


def test_criterion_08_steps_tradeoff(report, trained_pipeline, cfg):
    bench = evaluation.steps_bench(trained_pipeline, cfg)
    fps = [r.fps for r in bench.rows]
    _, _, r2 = bench.linear_fit()
    q = {r.steps: r.quality for r in bench.rows}
    ok = all(a > b for a, b in zip(fps, fps[1:])) and r2 >= 0.98 and q[200] <= q[50]
    report(8, ok, "fps " + ", ".join(f"{r.steps}:{r.fps:.1f}" for r in bench.rows)
                  + f"; R^2 {r2:.4f} (>=0.98); mmd(200) {q[200]:.4f} <= mmd(50) {q[50]:.4f}")


def test_criterion_09_mean_mode_contract(report, trained_pipeline, cfg):
    gap = evaluation.mean_mode_gap(trained_pipeline, cfg, n_seeds=16, chunks=4)
    closer = all(h < l for h, l in zip(gap["hint"][2:], gap["last"][2:]))
    reqs, _, _ = evaluation.make_requests(cfg, 2, 3 * cfg.data.n_frames, 0.3, 50)

    def run(mode):
        for r in reqs:
            r.mean_mode = mode
        return np.stack([s.frames for s in trained_pipeline.generate_batch(reqs)[0]])

    bitwise = (np.array_equal(run(MeanMode.interpolate(0.0)), run(MeanMode.hint()))
               and np.array_equal(run(MeanMode.interpolate(1.0)), run(MeanMode.last_frame())))
    ok = closer and bitwise
    report(9, ok, "||mean - m'|| per chunk, hint " + str(np.round(gap["hint"], 3).tolist())
                  + " vs last " + str(np.round(gap["last"], 3).tolist()) + f"; interpolate endpoints bitwise: {bitwise}")


def test_criterion_10_persistence(report, tmp_path):
    rng = RandomSource(10)
    params = {"a.weight": rng.normal((7, 5)).astype(np.float32), "b.bias": rng.normal(3).astype(np.float32)}
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(params, {"width": 5}, ckpt)
    back, config = load_checkpoint(ckpt, {"width": 5})
    ckpt_ok = config == {"width": 5} and all(np.array_equal(back[k], v) for k, v in params.items())

    seq = MotionSequence(rng.uniform((33, 20)) * 2 - 1)
    mpath = tmp_path / "m.ifmm"
    write_motion_file(seq, mpath, frame_rate=25)
    motion_ok = np.array_equal(read_motion_file(mpath).frames, seq.frames.astype(np.float32))

    faults = []
    raw = bytearray(ckpt.read_bytes())
    raw[-1] ^= 0xFF
    bad = tmp_path / "flipped.ckpt"
    bad.write_bytes(bytes(raw))
    try:
        load_checkpoint(bad)
    except ChecksumError as e:
        faults.append("b.bias" in str(e))
    try:
        load_checkpoint(ckpt, {"width": 6})
    except ConfigMismatchError as e:
        faults.append("width" in str(e))
    short = tmp_path / "short.ifmm"
    short.write_bytes(mpath.read_bytes()[:-4])
    try:
        read_motion_file(short)
    except TruncatedPayloadError:
        faults.append(True)
    ok = ckpt_ok and motion_ok and faults == [True, True, True]
    report(10, ok, f"checkpoint round-trip {ckpt_ok}, motion file round-trip {motion_ok}, "
                   f"named faults (checksum, config, truncation) {faults}")


def test_criterion_11_end_to_end_determinism(report, trained_pipeline, artifacts_dir, tmp_path):
    config = tmp_path / "default.json"
    config.write_text("{}")
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli_main(["generate", "--config", str(config), "--out", str(out), "--seed", "5",
                         "--stage1", str(artifacts_dir / "stage1.ckpt"), "--stage2", str(artifacts_dir / "stage2.ckpt"),
                         "--mean-mode", "last", "--length", "80"])
        files = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
        outputs.append((code, {str(f): (out / f).read_bytes() for f in files}))
    (c1, f1), (c2, f2) = outputs
    ok = c1 == c2 == 0 and f1 == f2 and "motion.ifmm" in f1 and len(f1) == 83
    n_chunks = len(json.loads(f1["chunks.json"])) if "chunks.json" in f1 else 0
    report(11, ok, f"two generate runs, {len(f1)} files each, {n_chunks} chunks: bit-identical {f1 == f2}")
