"""``spritemotion`` command-line entry point.

Every subcommand takes ``--config PATH`` (required), ``--seed`` and
``--out DIR``. Failures exit 1 with a one-line ``error:`` diagnostic; usage
errors exit 2 (argparse).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import evaluation, synth
from .config import Config, ConfigError, load_config
from .experiment import load_pipeline, stage1_recipe, stage2_recipe, write_recipe, write_timing
from .gradsuite import run_gradient_suite
from .pipeline import GenerationRequest, MeanMode
from .storage import CheckpointError, MotionFileError, write_motion_file
from .training import (
    build_stage2_data,
    load_stage1,
    save_stage1,
    save_stage2,
    stage1_config,
    train_stage1,
    train_stage2,
)

log = logging.getLogger("spritemotion")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _ckpt(args, name: str) -> Path:
    given = getattr(args, name.replace(".ckpt", ""), None)
    return Path(given) if given else args.out / name


def _pipeline(args, cfg: Config):
    return load_pipeline(_ckpt(args, "stage1.ckpt"), _ckpt(args, "stage2.ckpt"), cfg)


def cmd_gen_data(args, cfg: Config) -> None:
    lo, hi = cfg.data.test_identities if args.split == "test" else cfg.data.train_identities
    count = min(args.count, hi - lo)
    root = args.out / "data" / args.split
    for ident in range(lo, lo + count):
        clip = synth.clip_for(ident, args.seed, cfg.data.n_frames)
        synth.export_clip(clip, str(root / f"id{ident:04d}_m{args.seed}"))
    print(f"wrote {count} clips to {root}")


def cmd_train_stage1(args, cfg: Config) -> None:
    if args.steps is not None:
        cfg.stage1.steps = args.steps
    start = time.perf_counter()
    model = train_stage1(cfg, args.seed)
    path = args.out / "stage1.ckpt"
    save_stage1(model, path)
    write_timing(path, time.perf_counter() - start)
    write_recipe(path, stage1_recipe(cfg, args.seed))
    print(f"wrote {path}")


def cmd_train_stage2(args, cfg: Config) -> None:
    if args.steps is not None:
        cfg.stage2.steps = args.steps
    stage1 = load_stage1(_ckpt(args, "stage1.ckpt"), stage1_config(cfg))
    start = time.perf_counter()
    data = build_stage2_data(cfg, stage1)
    model = train_stage2(cfg, data, args.seed)
    path = args.out / "stage2.ckpt"
    save_stage2(model, data.normalizer, cfg, path)
    write_timing(path, time.perf_counter() - start)
    write_recipe(path, stage2_recipe(cfg, args.seed))
    print(f"wrote {path}")


def cmd_generate(args, cfg: Config) -> None:
    pipe = _pipeline(args, cfg)
    identity_seed = cfg.data.test_identities[0] if args.identity is None else args.identity
    length = 2 * cfg.data.n_frames if args.length is None else args.length
    # the driving speech is the synthetic track of a held-out clip of this identity
    clip = synth.clip_for(identity_seed, evaluation.EVAL_MOTION_SEED + args.seed, max(length, 1))
    image = evaluation.neutral_image(clip.identity)
    request = GenerationRequest(
        image, clip.track.features[:length],
        mean_mode=MeanMode.parse(args.mean_mode or cfg.inference.mean_mode),
        sigma_target="auto" if args.sigma is None else args.sigma,
        guidance_scale=cfg.inference.guidance_scale if args.scale is None else args.scale,
        steps=cfg.inference.steps if args.steps is None else args.steps,
        seed=args.seed,
    )
    seq = pipe.generate_motion_sequence(request)
    video = pipe.render_video(image, seq)
    write_motion_file(seq, args.out / "motion.ifmm", frame_rate=cfg.data.fps)
    frames = args.out / "frames"
    # rendered frames with the driving track and the source clip's ground truth alongside
    rendered = synth.ClipSample(video, clip.track.slice(0, length), clip.poses[:length],
                                clip.apertures[:length], clip.identity)
    synth.export_clip(rendered, str(frames))
    _write_json(args.out / "chunks.json", [c.to_dict() for c in pipe.last_chunks])
    sigma = pipe.realized_sigma(seq) if len(seq) else 0.0
    print(f"wrote {len(seq)} frames to {args.out}; realized sigma {sigma:.4f}")


def cmd_bench_steps(args, cfg: Config) -> None:
    pipe = _pipeline(args, cfg)
    report = evaluation.steps_bench(pipe, cfg, with_quality=not args.no_quality)
    (args.out / "bench_steps.json").write_text(report.to_json() + "\n")
    print(report.to_table())


def cmd_sweep_sigma(args, cfg: Config) -> None:
    pipe = _pipeline(args, cfg)
    rows = evaluation.sigma_sweep(pipe, cfg, with_sync=not args.no_sync)
    _write_json(args.out / "sweep_sigma.json", [r.to_dict() for r in rows])
    for r in rows:
        print(f"sigma {r.sigma:.2f}  realized {r.realized_sigma:.4f}  sync {r.sync:.3f}  mmd {r.mmd:.4f}")


def cmd_grad_check(args, cfg: Config) -> None:
    ok, seconds, summary = run_gradient_suite(args.tolerance, args.seed)
    print(summary)
    print(f"{'passed' if ok else 'FAILED'} in {seconds:.1f}s")
    if not ok:
        raise RuntimeError("gradient check failed")


def cmd_eval(args, cfg: Config) -> None:
    pipe = _pipeline(args, cfg)
    clips = evaluation.heldout_clips(cfg)
    report = {
        "stage1": evaluation.stage1_report(pipe.stage1, clips).to_dict(),
        "heldout_eps_mse": evaluation.heldout_eps_mse(pipe, cfg),
        "mean_mode_gap": evaluation.mean_mode_gap(pipe, cfg),
    }
    _write_json(args.out / "eval.json", report)
    print(json.dumps(report, indent=2))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "generate": cmd_generate,
    "bench-steps": cmd_bench_steps,
    "sweep-sigma": cmd_sweep_sigma,
    "grad-check": cmd_grad_check,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ckpts = argparse.ArgumentParser(add_help=False)
    ckpts.add_argument("--stage1", help="stage-1 checkpoint (default OUT/stage1.ckpt)")
    ckpts.add_argument("--stage2", help="stage-2 checkpoint (default OUT/stage2.ckpt)")

    parser = argparse.ArgumentParser(prog="spritemotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common], help="export synthetic clips as PGM frames + truth.json")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--count", type=int, default=4, help="number of identities")

    p = sub.add_parser("train-stage1", parents=[common], help="train the frame disentangler")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("train-stage2", parents=[common, ckpts], help="train the motion generator")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("generate", parents=[common, ckpts], help="generate motion and frames for one identity")
    p.add_argument("--mean-mode", default=None, help="hint, last or interp:LAMBDA")
    p.add_argument("--sigma", type=float, default=None, help="motion std target in [0, 1] (default auto)")
    p.add_argument("--steps", type=int, default=None, help="sampling steps")
    p.add_argument("--scale", type=float, default=None, help="guidance scale")
    p.add_argument("--identity", type=int, default=None, help="identity seed")
    p.add_argument("--length", type=int, default=None, help="frames to generate")

    p = sub.add_parser("bench-steps", parents=[common, ckpts], help="fps and quality versus sampling steps")
    p.add_argument("--no-quality", action="store_true", help="timing only")

    p = sub.add_parser("sweep-sigma", parents=[common, ckpts], help="realized motion std and sync versus sigma")
    p.add_argument("--no-sync", action="store_true", help="skip rendering and sync measurement")

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of every block")
    p.add_argument("--tolerance", type=float, default=1e-5)

    sub.add_parser("eval", parents=[common, ckpts], help="held-out stage-1 and stage-2 report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        args.out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(cfg.workers):
            COMMANDS[args.command](args, cfg)
    except (ConfigError, CheckpointError, MotionFileError, OSError, ValueError, RuntimeError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"spritemotion {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
