"""Evaluation runs shared by the CLI and the acceptance suite."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import diffusion, metrics, synth
from .config import Config
from .core.random import RandomSource
from .core.tensor import no_grad
from .motion import ConditionSet, batch_motion_stats
from .pipeline import GenerationRequest, MeanMode, TalkingHeadPipeline
from .stage1 import Disentangler, appearance_stability
from .training import encode_clips

# motion seeds for held-out material, kept apart from the training seeds
EVAL_MOTION_SEED = 500


def neutral_image(identity: synth.SpriteIdentity) -> np.ndarray:
    """Frontal, closed-mouth frame used as the identity image."""
    return synth.render_sprite_frame(identity, (0.0, 0.0, 0.0), 0.0)


def heldout_clips(cfg: Config, count: int | None = None, n_frames: int | None = None, motion_seed: int = 0):
    lo, hi = cfg.data.test_identities
    ids = range(lo, hi if count is None else min(hi, lo + count))
    return [synth.clip_for(i, motion_seed, n_frames or cfg.data.n_frames) for i in ids]


@dataclass
class Stage1Report:
    cross_frame_psnr: float
    autoencode_psnr: float
    stability: float
    max_abs_code: float
    cross_frame_mse: float
    mean_frame_mse: float

    def to_dict(self) -> dict:
        return asdict(self)


def stage1_report(model: Disentangler, clips, seed: int = 99) -> Stage1Report:
    """Cross-frame PSNR over one random (appearance, motion) frame pair per clip."""
    rng = RandomSource(seed)
    n = len(clips[0].frames)
    pick = rng.integers(n, (len(clips), 2))
    app = np.stack([c.frames[i] for c, (i, _) in zip(clips, pick)])
    mot = np.stack([c.frames[j] for c, (_, j) in zip(clips, pick)])
    with no_grad():
        cross = model.reconstruct(app, mot).data.reshape(mot.shape).astype(np.float64)
        auto = model.reconstruct(mot, mot).data.reshape(mot.shape).astype(np.float64)
        codes = np.concatenate([model.motion(c.frames).data for c in clips])
    cross_mse = float(np.mean((cross - mot) ** 2))
    mean_frames = np.stack([c.frames.mean(axis=0) for c in clips])
    return Stage1Report(
        cross_frame_psnr=metrics.psnr(cross, mot),
        autoencode_psnr=metrics.psnr(auto, mot),
        stability=appearance_stability(model, [c.frames for c in clips]),
        max_abs_code=float(np.abs(codes).max()),
        cross_frame_mse=cross_mse,
        mean_frame_mse=float(np.mean((mean_frames - mot) ** 2)),
    )


def heldout_eps_mse(pipeline: TalkingHeadPipeline, cfg: Config, count: int = 64, seed: int = 3) -> float:
    """epsilon-prediction MSE of the generator on held-out windows (all conditions present)."""
    clips = heldout_clips(cfg, count, motion_seed=EVAL_MOTION_SEED)
    x0 = pipeline.normalizer.apply(encode_clips(pipeline.stage1, clips))
    speech = np.stack([c.track.features for c in clips])
    mu, sigma = batch_motion_stats(x0)
    rng = RandomSource(seed)
    t = rng.integers(pipeline.sched.T, len(x0))
    eps = rng.normal(x0.shape)
    x_t = diffusion.forward_diffuse(x0, t, eps, pipeline.sched)
    pred = pipeline.generator(x_t, t, ConditionSet(speech, mu, sigma))
    return float(np.mean((pred - eps) ** 2))


def _eval_material(cfg: Config, n: int, length: int, offset: int = 0):
    """Held-out identities with speech tracks: (identity, image, features, envelope) per item."""
    lo, hi = cfg.data.test_identities
    out = []
    for k in range(n):
        ident_seed = lo + (offset + k) % (hi - lo)
        clip = synth.clip_for(ident_seed, EVAL_MOTION_SEED + offset + k, length)
        out.append((clip.identity, neutral_image(clip.identity), clip.track.features, clip.track.envelope))
    return out


def make_requests(cfg: Config, n: int, length: int, sigma, steps: int, mean_mode=None,
                  scale: float | None = None, seed_offset: int = 0):
    """-> (requests, identities, envelopes); request ``k`` uses seed ``seed_offset + k``."""
    material = _eval_material(cfg, n, length)
    scale = cfg.inference.guidance_scale if scale is None else scale
    mode = MeanMode.parse(cfg.inference.mean_mode) if mean_mode is None else mean_mode
    reqs = [GenerationRequest(img, feats, mode, sigma, scale, steps, seed_offset + k)
            for k, (_, img, feats, _) in enumerate(material)]
    return reqs, [m[0] for m in material], [m[3] for m in material]


def _batched(pipeline, requests, batch: int = 32):
    seqs = []
    for i in range(0, len(requests), batch):
        seqs.extend(pipeline.generate_batch(requests[i : i + batch])[0])
    return seqs


def sigma_sweep(pipeline: TalkingHeadPipeline, cfg: Config, sigmas=None, n_seeds: int | None = None,
                length: int | None = None, steps: int | None = None,
                with_sync: bool = True) -> list[metrics.SweepRow]:
    """Realized sigma, sync proxy and MMD to real held-out clips for each commanded sigma."""
    sigmas = cfg.bench.sweep_sigmas if sigmas is None else sigmas
    n_seeds = cfg.bench.sweep_seeds if n_seeds is None else n_seeds
    length = 2 * cfg.data.n_frames if length is None else length
    steps = cfg.inference.steps if steps is None else steps
    _, idents, envs = make_requests(cfg, n_seeds, length, cfg.inference.sigma_default, steps)
    reference = reference_windows(pipeline, cfg, cfg.bench.quality_samples, length)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", metrics.DegenerateVarianceWarning)
        return metrics.motion_degree_sweep(
            pipeline, lambda s: make_requests(cfg, n_seeds, length, float(s), steps)[0],
            sigmas, reference, idents if with_sync else None, envs if with_sync else None)


def mean_mode_gap(pipeline: TalkingHeadPipeline, cfg: Config, n_seeds: int = 16, chunks: int = 4,
                  steps: int | None = None, sigma=None) -> dict:
    """Per chunk: mean over seeds of ||temporal mean - m'|| for Hint and LastFrame modes.

    Distances are measured in the generator's standardized space.
    """
    nf = cfg.data.n_frames
    steps = cfg.inference.steps if steps is None else steps
    sigma = cfg.inference.sigma_default if sigma is None else sigma
    out = {}
    for name, mode in (("hint", MeanMode.hint()), ("last", MeanMode.last_frame())):
        reqs, _, _ = make_requests(cfg, n_seeds, chunks * nf, sigma, steps, mean_mode=mode)
        seqs = _batched(pipeline, reqs)
        dists = np.zeros((n_seeds, chunks))
        for i, (r, s) in enumerate(zip(reqs, seqs)):
            hint = pipeline.normalizer.apply(pipeline.motion_hint(r.identity_image))
            z = pipeline.standardized(s)
            for k in range(chunks):
                dists[i, k] = np.linalg.norm(z[k * nf : (k + 1) * nf].mean(axis=0) - hint)
        out[name] = dists.mean(axis=0).tolist()
    return out


def reference_windows(pipeline: TalkingHeadPipeline, cfg: Config, count: int,
                      n_frames: int | None = None) -> list[np.ndarray]:
    """Raw motion codes of real held-out clips (motion seeds apart from the generation material)."""
    clips = heldout_clips(cfg, count, n_frames, motion_seed=EVAL_MOTION_SEED + 1)
    return list(encode_clips(pipeline.stage1, clips))


def matched_requests(pipeline: TalkingHeadPipeline, clips, codes, steps: int, scale: float) -> list[GenerationRequest]:
    """One request per real clip, conditioned like that clip.

    Each uses the clip's speech, its first frame as identity image (so m' is
    the opening pose) and the clip's own realized sigma, so generated and real
    sets differ only through the sampler and the model. ``codes`` are the
    clips' raw motion codes.
    """
    return [GenerationRequest(c.frames[0], c.track.features, MeanMode.hint(), pipeline.realized_sigma(z),
                              scale, steps, k)
            for k, (c, z) in enumerate(zip(clips, codes))]


def quality_at_steps(pipeline: TalkingHeadPipeline, cfg: Config, steps: int, n: int | None = None,
                     clips=None) -> float:
    """MMD between real held-out windows and samples generated under their own conditions."""
    if clips is None:
        n = cfg.bench.quality_samples if n is None else n
        clips = heldout_clips(cfg, n, motion_seed=EVAL_MOTION_SEED + 1)
    reference = encode_clips(pipeline.stage1, clips)
    seqs = _batched(pipeline, matched_requests(pipeline, clips, reference, steps, cfg.inference.guidance_scale))
    return metrics.mmd_quality([pipeline.standardized(s) for s in seqs],
                               [pipeline.standardized(z) for z in reference])


def steps_bench(pipeline: TalkingHeadPipeline, cfg: Config, steps_list=None, trials: int | None = None,
                with_quality: bool = True) -> metrics.BenchReport:
    steps_list = cfg.bench.steps_list if steps_list is None else steps_list
    trials = cfg.bench.trials if trials is None else trials
    nf = cfg.data.n_frames

    def request(steps):
        reqs, _, _ = make_requests(cfg, 1, nf, cfg.inference.sigma_default, steps)
        return reqs[0]

    clips = heldout_clips(cfg, cfg.bench.quality_samples, motion_seed=EVAL_MOTION_SEED + 1)

    def quality(steps):
        return quality_at_steps(pipeline, cfg, steps, clips=clips) if steps in cfg.bench.quality_steps else None

    quality_fn = quality if with_quality else None
    return metrics.steps_benchmark(pipeline, request, steps_list, trials, quality_fn)
