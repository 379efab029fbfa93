"""Desk-scale training runs for both stages, driven by a Config."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffusion, synth
from .config import Config
from .core.random import RandomSource
from .generator import GeneratorConfig, GeneratorTrainer, MotionGenerator
from .pipeline import MotionNormalizer
from .stage1 import Disentangler, Stage1Config, Stage1Trainer, extract_motion_sequence
from .storage import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


def stage1_config(cfg: Config) -> Stage1Config:
    s = cfg.stage1
    return Stage1Config(hidden=tuple(s.hidden), motion_hidden=tuple(s.motion_hidden),
                        latent_dim=s.latent_dim, head_scale=s.head_scale)


def generator_config(cfg: Config) -> GeneratorConfig:
    s = cfg.stage2
    return GeneratorConfig(depth=s.depth, width=s.width, heads=s.heads, speech_dim=cfg.data.speech_dim,
                           n_frames=cfg.data.n_frames, time_dim=s.time_dim, mlp_ratio=s.mlp_ratio)


def noise_schedule(cfg: Config) -> diffusion.NoiseSchedule:
    s = cfg.schedule
    return diffusion.linear_beta_schedule(s.T, s.beta_start, s.beta_end)


def clip_bank(identities, clips_per_identity: int, n_frames: int, motion_offset: int = 0) -> list:
    """Clips for every identity seed in ``identities`` with motion seeds offset.., offset+k-1."""
    return [synth.clip_for(i, motion_offset + m, n_frames) for i in identities for m in range(clips_per_identity)]


def _pair_batch(clips, rng: RandomSource, batch: int, n_frames: int):
    ci = rng.integers(len(clips), batch)
    fa = rng.integers(n_frames, batch)
    fm = rng.integers(n_frames, batch)
    app = np.stack([clips[c].frames[i] for c, i in zip(ci, fa)])
    mot = np.stack([clips[c].frames[i] for c, i in zip(ci, fm)])
    return app, mot


def train_stage1(cfg: Config, seed: int | None = None, steps: int | None = None, clips=None,
                 callback=None) -> Disentangler:
    """Inter-frame reconstruction on training identities; deterministic given (cfg, seed)."""
    seed = cfg.seed if seed is None else seed
    steps = cfg.stage1.steps if steps is None else steps
    n = cfg.data.n_frames
    if clips is None:
        clips = clip_bank(range(*cfg.data.train_identities), cfg.data.stage1_clips_per_identity, n)
    rng = RandomSource(seed)
    model = Disentangler(stage1_config(cfg), rng.spawn(1))
    model.set_output_level(float(np.mean([c.frames.mean() for c in clips])))
    trainer = Stage1Trainer(model, lr=cfg.stage1.lr, grad_clip=cfg.stage1.grad_clip,
                            appearance_decay=cfg.stage1.appearance_decay, total_steps=steps,
                            lr_final=cfg.stage1.lr_final)
    batches = rng.spawn(2)
    running = []
    for step in range(1, steps + 1):
        app, mot = _pair_batch(clips, batches, cfg.stage1.batch, n)
        running.append(trainer.train_reconstruction_step(app, mot))
        if step % 1000 == 0 or step == steps:
            log.info("stage1 step %d loss %.5f", step, float(np.mean(running)))
            if callback is not None:
                callback(step, float(np.mean(running)), model)
            running = []
    return model


def save_stage1(model: Disentangler, path) -> None:
    save_checkpoint(model.parameters(), model.config.to_dict(), path, kind="stage1")


def load_stage1(path, expected: Stage1Config | None = None) -> Disentangler:
    params, stored = load_checkpoint(path, None if expected is None else expected.to_dict())
    model = Disentangler(Stage1Config.from_dict(stored), RandomSource(0))
    model.load_state_dict(params)
    return model


@dataclass
class Stage2Data:
    """Standardized motion windows with their speech features and source clips."""

    motion: np.ndarray  # (n_clips, N_f, 20) standardized codes
    speech: np.ndarray  # (n_clips, N_f, d_a)
    normalizer: MotionNormalizer
    clips: list


def encode_clips(stage1: Disentangler, clips, batch: int = 2048) -> np.ndarray:
    """-> (n_clips, n_frames, 20) raw motion codes."""
    frames = np.concatenate([c.frames for c in clips])
    codes = np.concatenate([extract_motion_sequence(stage1, frames[i : i + batch])
                            for i in range(0, len(frames), batch)])
    return codes.reshape(len(clips), -1, codes.shape[-1])


def build_stage2_data(cfg: Config, stage1: Disentangler, identities=None, clips_per_identity=None,
                      motion_offset: int = 100, normalizer=None) -> Stage2Data:
    identities = range(*cfg.data.train_identities) if identities is None else identities
    k = cfg.data.stage2_clips_per_identity if clips_per_identity is None else clips_per_identity
    clips = clip_bank(identities, k, cfg.data.n_frames, motion_offset)
    codes = encode_clips(stage1, clips)
    if normalizer is None:
        fitted = MotionNormalizer.fit(codes)
        # round to the checkpoint precision so fresh and reloaded pipelines agree bitwise
        normalizer = MotionNormalizer(fitted.mean.astype(np.float32).astype(np.float64),
                                      fitted.std.astype(np.float32).astype(np.float64))
    speech = np.stack([c.track.features for c in clips])
    return Stage2Data(normalizer.apply(codes), speech, normalizer, clips)


def train_stage2(cfg: Config, data: Stage2Data, seed: int | None = None, steps: int | None = None,
                 callback=None) -> MotionGenerator:
    """epsilon-prediction training on standardized windows; deterministic given (cfg, data, seed)."""
    seed = cfg.seed if seed is None else seed
    steps = cfg.stage2.steps if steps is None else steps
    rng = RandomSource(seed)
    model = MotionGenerator(generator_config(cfg), rng.spawn(11))
    trainer = GeneratorTrainer(model, noise_schedule(cfg), lr=cfg.stage2.lr, dropout=cfg.stage2.dropout,
                               grad_clip=cfg.stage2.grad_clip)
    batches, noise = rng.spawn(12), rng.spawn(13)
    running = []
    for step in range(1, steps + 1):
        idx = batches.integers(len(data.motion), cfg.stage2.batch)
        running.append(trainer.train_step(data.motion[idx], data.speech[idx], noise))
        if step % 500 == 0 or step == steps:
            log.info("stage2 step %d loss %.4f", step, float(np.mean(running)))
            if callback is not None:
                callback(step, float(np.mean(running)), model)
            running = []
    return model


def save_stage2(model: MotionGenerator, normalizer, cfg: Config, path) -> None:
    params = dict(model.parameters())
    params["normalizer.mean"] = normalizer.mean
    params["normalizer.std"] = normalizer.std
    meta = {"generator": model.config.to_dict(), "schedule": dict(vars(cfg.schedule))}
    save_checkpoint(params, meta, path, kind="stage2")


def load_stage2(path, expected: dict | None = None):
    """-> (generator, normalizer, schedule)."""
    params, meta = load_checkpoint(path, expected)
    try:
        gcfg = GeneratorConfig(**meta["generator"])
        sched = diffusion.linear_beta_schedule(**meta["schedule"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"stage-2 checkpoint config unusable: {e}") from None
    normalizer = MotionNormalizer(params.pop("normalizer.mean").astype(np.float64),
                                  params.pop("normalizer.std").astype(np.float64))
    model = MotionGenerator(gcfg, RandomSource(0))
    model.load_state_dict(params)
    return model, normalizer, sched


def stage2_meta(cfg: Config) -> dict:
    return {"generator": generator_config(cfg).to_dict(), "schedule": dict(vars(cfg.schedule))}
