import json

import numpy as np
import pytest

from spritemotion.cli import main
from spritemotion.storage import read_motion_file

TINY = {
    "seed": 3,
    "schedule": {"T": 100, "beta_start": 1e-3, "beta_end": 0.2},
    "data": {"n_frames": 8, "train_identities": [0, 6], "test_identities": [800, 803],
             "stage1_clips_per_identity": 1, "stage2_clips_per_identity": 2},
    "stage1": {"hidden": [32, 16, 8], "motion_hidden": [16], "latent_dim": 8, "batch": 8, "steps": 15},
    "stage2": {"depth": 1, "width": 16, "heads": 2, "time_dim": 8, "batch": 4, "steps": 8},
    "inference": {"steps": 5},
    "bench": {"steps_list": [2, 4, 8], "trials": 1, "quality_samples": 4, "quality_steps": [2, 8], "sweep_sigmas": [0.3, 0.9],
              "sweep_seeds": 2},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    out = root / "run"
    assert main(["train-stage1", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["train-stage2", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def _args(cfg, out, *extra):
    return [*extra, "--config", str(cfg), "--out", str(out)]


def test_missing_config_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["generate"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_flag(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["teleport", "--config", "x.json"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["generate", "--config", "x.json", "--warp", "9"])
    assert e.value.code == 2


def test_bad_config_fails_with_one_line(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"stage1": {"hiden": [4, 4, 4]}}))
    assert main(_args(bad, tmp_path / "o", "train-stage1")) == 1
    err = capsys.readouterr().err.strip()
    assert "\n" not in err and "hiden" in err
    assert main(_args(tmp_path / "absent.json", tmp_path / "o", "train-stage1")) == 1


def test_missing_checkpoint_fails_cleanly(workspace, tmp_path, capsys):
    cfg, _ = workspace
    assert main(_args(cfg, tmp_path / "empty", "generate")) == 1
    assert capsys.readouterr().err.count("\n") == 1


def test_train_stage2_is_bitwise_reproducible(workspace, tmp_path):
    cfg, out = workspace
    blobs = []
    for name in ("a", "b"):
        target = tmp_path / name
        assert main(_args(cfg, target, "train-stage2", "--seed", "7", "--stage1", str(out / "stage1.ckpt"))) == 0
        blobs.append((target / "stage2.ckpt").read_bytes())
    assert blobs[0] == blobs[1]


def test_generate_writes_outputs_and_is_deterministic(workspace, tmp_path):
    cfg, out = workspace
    ckpts = ["--stage1", str(out / "stage1.ckpt"), "--stage2", str(out / "stage2.ckpt")]
    runs = []
    for name in ("a", "b"):
        target = tmp_path / name
        code = main(_args(cfg, target, "generate", "--seed", "4", "--length", "20", "--mean-mode", "last",
                          "--sigma", "0.6", *ckpts))
        assert code == 0
        runs.append(target)
    seq = read_motion_file(runs[0] / "motion.ifmm")
    assert seq.frames.shape == (20, 20)
    chunks = json.loads((runs[0] / "chunks.json").read_text())
    assert [c["length"] for c in chunks] == [8, 8, 4]
    assert all(c["sigma_condition"] == 0.6 for c in chunks)
    frames = sorted(p.name for p in (runs[0] / "frames").iterdir())
    assert len(frames) == 21 and frames[-1] == "truth.json"
    for rel in ["motion.ifmm", "chunks.json", *(f"frames/{f}" for f in frames)]:
        assert (runs[0] / rel).read_bytes() == (runs[1] / rel).read_bytes(), rel


def test_generate_rejects_bad_knobs(workspace, capsys):
    cfg, out = workspace
    assert main(_args(cfg, out, "generate", "--mean-mode", "interp:2")) == 1
    assert main(_args(cfg, out, "generate", "--sigma", "1.5")) == 1
    assert main(_args(cfg, out, "generate", "--steps", "1000")) == 1
    capsys.readouterr()


def test_gen_data_exports_clips(workspace, tmp_path):
    cfg, _ = workspace
    assert main(_args(cfg, tmp_path, "gen-data", "--split", "train", "--count", "2")) == 0
    dirs = sorted((tmp_path / "data" / "train").iterdir())
    assert [d.name for d in dirs] == ["id0000_m3", "id0001_m3"]
    truth = json.loads((dirs[0] / "truth.json").read_text())
    assert len(truth["apertures"]) == 8


def test_bench_sweep_and_eval_write_reports(workspace):
    cfg, out = workspace
    assert main(_args(cfg, out, "bench-steps")) == 0
    bench = json.loads((out / "bench_steps.json").read_text())
    assert [r["steps"] for r in bench["rows"]] == [2, 4, 8]
    assert [r["quality"] is None for r in bench["rows"]] == [False, True, False]
    assert main(_args(cfg, out, "sweep-sigma")) == 0
    sweep = json.loads((out / "sweep_sigma.json").read_text())
    assert [r["sigma"] for r in sweep] == [0.3, 0.9]
    assert all(np.isfinite(r["realized_sigma"]) and r["mmd"] >= 0 for r in sweep)
    assert main(_args(cfg, out, "eval")) == 0
    report = json.loads((out / "eval.json").read_text())
    assert set(report) == {"stage1", "heldout_eps_mse", "mean_mode_gap"}
