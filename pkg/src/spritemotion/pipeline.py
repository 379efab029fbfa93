"""Inference: identity image + speech features -> motion sequence -> frames.

Long inputs are generated window by window (N_f frames, no overlap). Each
window's motion-mean condition comes from the mean mode: the identity's own
motion hint, the last frame of the previous window, or a blend of the two.

The generator works on per-dimension standardized motion codes; the
``MotionNormalizer`` stored with the stage-2 checkpoint maps between that
space and raw stage-1 codes. Mean and sigma conditions live in the
standardized space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffusion
from .core.random import RandomSource
from .core.tensor import no_grad
from .generator import MotionGenerator
from .motion import MOTION_DIM, ConditionSet, MotionSequence, compute_motion_stats
from .stage1 import Disentangler

log = logging.getLogger(__name__)

AUTO_SIGMA = 0.15
# generated codes are clipped to the stage-1 code range (-1, 1), strictly inside
CODE_LIMIT = 0.999
DEFAULT_SCALE = 2.0


@dataclass(frozen=True)
class MeanMode:
    """``hint`` (λ=0), ``last`` (λ=1) or ``interp`` with blend weight λ."""

    kind: str = "hint"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("hint", "last", "interp"):
            raise ValueError(f"unknown mean mode {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"interpolation weight must lie in [0, 1], got {self.lam}")

    @classmethod
    def hint(cls) -> "MeanMode":
        return cls("hint", 0.0)

    @classmethod
    def last_frame(cls) -> "MeanMode":
        return cls("last", 1.0)

    @classmethod
    def interpolate(cls, lam: float) -> "MeanMode":
        return cls("interp", float(lam))

    @classmethod
    def parse(cls, text: str) -> "MeanMode":
        """``hint``, ``last`` or ``interp:λ``."""
        if text == "hint":
            return cls.hint()
        if text == "last":
            return cls.last_frame()
        if text.startswith("interp:"):
            try:
                lam = float(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad interpolation weight in {text!r}") from None
            return cls.interpolate(lam)
        raise ValueError(f"unknown mean mode {text!r}; use hint, last or interp:λ")

    def __str__(self) -> str:
        return f"interp:{self.lam}" if self.kind == "interp" else self.kind


def resolve_mean_mode(mode: MeanMode, hint, previous_last=None) -> np.ndarray:
    """Motion-mean condition for the next window.

    Without a previous window, ``last`` falls back to the hint (and so does
    any interpolation).
    """
    if hint is None:
        raise ValueError("mean mode needs the motion hint")
    hint = np.asarray(hint, dtype=np.float64)
    if previous_last is None or mode.kind == "hint":
        return hint
    prev = np.asarray(previous_last, dtype=np.float64)
    if prev.shape != hint.shape:
        raise ValueError(f"previous frame shape {prev.shape} vs hint {hint.shape}")
    if mode.kind == "last":
        return prev
    # keep the endpoints exact
    if mode.lam == 0.0:
        return hint
    if mode.lam == 1.0:
        return prev
    return (1.0 - mode.lam) * hint + mode.lam * prev


@dataclass(frozen=True)
class MotionNormalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frames: np.ndarray, floor: float = 1e-3) -> "MotionNormalizer":
        flat = np.asarray(frames, dtype=np.float64).reshape(-1, MOTION_DIM)
        return cls(flat.mean(axis=0), np.maximum(flat.std(axis=0), floor))

    def apply(self, codes) -> np.ndarray:
        return (np.asarray(codes, dtype=np.float64) - self.mean) / self.std

    def invert(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class GenerationRequest:
    identity_image: np.ndarray
    speech: np.ndarray  # (L, d_a) speech features
    mean_mode: MeanMode = field(default_factory=MeanMode.hint)
    sigma_target: float | str = "auto"
    guidance_scale: float = DEFAULT_SCALE
    steps: int = 200
    seed: int = 0

    def __post_init__(self):
        self.speech = np.asarray(self.speech, dtype=np.float64)
        if self.speech.ndim != 2:
            raise ValueError(f"speech must be (L, d_a), got shape {self.speech.shape}")
        if self.sigma_target != "auto" and not 0.0 <= float(self.sigma_target) <= 1.0:
            raise ValueError(f"sigma_target must be 'auto' or lie in [0, 1], got {self.sigma_target}")
        if self.guidance_scale < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.guidance_scale}")
        if isinstance(self.mean_mode, str):
            self.mean_mode = MeanMode.parse(self.mean_mode)

    @property
    def sigma(self) -> float:
        return AUTO_SIGMA if self.sigma_target == "auto" else float(self.sigma_target)


@dataclass
class ChunkRecord:
    index: int
    start: int
    length: int
    mean_condition: np.ndarray
    sigma_condition: float

    def to_dict(self) -> dict:
        return {"index": self.index, "start": self.start, "length": self.length,
                "mean_condition": [float(v) for v in self.mean_condition], "sigma_condition": self.sigma_condition}


class TalkingHeadPipeline:
    """Frozen stage-1 and stage-2 models plus the noise schedule."""

    def __init__(self, stage1: Disentangler | None, generator: MotionGenerator | None,
                 normalizer: MotionNormalizer | None, sched: diffusion.NoiseSchedule):
        self.stage1 = stage1
        self.generator = generator
        self.normalizer = normalizer
        self.sched = sched

    def _require(self, stage2: bool = True) -> None:
        if self.stage1 is None:
            raise RuntimeError("stage-1 checkpoint not loaded")
        if stage2 and (self.generator is None or self.normalizer is None):
            raise RuntimeError("stage-2 checkpoint not loaded")

    @property
    def n_frames(self) -> int:
        return self.generator.config.n_frames

    def motion_hint(self, identity_image) -> np.ndarray:
        """m' = motion code of the identity image (raw code space)."""
        self._require(stage2=False)
        with no_grad():
            return self.stage1.motion(identity_image).data[0].astype(np.float64)

    def _project_to_codes(self, z: np.ndarray) -> np.ndarray:
        """Clip standardized samples so the raw codes lie inside the tanh range.

        Guidance extrapolates past the conditional prediction; without the
        clip a LastFrame hand-off feeds that overshoot into the next chunk's
        mean condition and the chain diverges.
        """
        raw = np.clip(self.normalizer.invert(z), -CODE_LIMIT, CODE_LIMIT)
        return self.normalizer.apply(raw)

    def generate_batch(self, requests: list[GenerationRequest]) -> tuple[list[MotionSequence], list[list[ChunkRecord]]]:
        """Generate several requests together; they must share L, steps and scale.

        Every request draws noise only from its own seed, so its result does
        not depend on which other requests share the batch (up to BLAS
        blocking in the model's matmuls).
        """
        self._require()
        if not requests:
            return [], []
        first = requests[0]
        L = len(first.speech)
        for r in requests:
            if len(r.speech) != L or r.steps != first.steps or r.guidance_scale != first.guidance_scale:
                raise ValueError("batched requests must share speech length, steps and guidance scale")
            if r.speech.shape[1] != self.generator.config.speech_dim:
                raise ValueError(f"speech dim {r.speech.shape[1]} != {self.generator.config.speech_dim}")
        if not 1 <= first.steps <= self.sched.T:
            raise ValueError(f"steps must lie in [1, {self.sched.T}], got {first.steps}")
        b, nf = len(requests), self.n_frames
        hints = self.normalizer.apply(np.stack([self.motion_hint(r.identity_image) for r in requests]))
        sigmas = np.array([r.sigma for r in requests])
        rngs = [RandomSource(r.seed) for r in requests]
        guidance = diffusion.GuidanceSpec(first.guidance_scale)
        out = np.zeros((b, L, MOTION_DIM))
        logs = [[] for _ in requests]
        prev_last = [None] * b
        n_chunks = -(-L // nf)
        for k in range(n_chunks):
            start = k * nf
            length = min(nf, L - start)
            speech = np.stack([_pad_window(r.speech[start : start + length], nf) for r in requests])
            means = np.stack([resolve_mean_mode(r.mean_mode, hints[i], prev_last[i]) for i, r in enumerate(requests)])
            cond = ConditionSet(speech, means, sigmas)
            chunk_rngs = [rng.spawn(k) for rng in rngs]
            z = diffusion.sample_loop(self.generator, cond, guidance, self.sched, first.steps, chunk_rngs,
                                      (b, nf, MOTION_DIM))
            z = self._project_to_codes(z)
            for i in range(b):
                out[i, start : start + length] = z[i, :length]
                prev_last[i] = z[i, length - 1]
                logs[i].append(ChunkRecord(k, start, length, means[i].copy(), float(sigmas[i])))
                log.debug("request %d chunk %d mean=%s sigma=%.3f", i, k, np.round(means[i], 3), sigmas[i])
        seqs = [MotionSequence(self.normalizer.invert(out[i])) for i in range(b)]
        return seqs, logs

    def generate_motion_sequence(self, request: GenerationRequest) -> MotionSequence:
        seqs, logs = self.generate_batch([request])
        self.last_chunks = logs[0]
        return seqs[0]

    def render_video(self, identity_image, seq) -> np.ndarray:
        """Decode every motion frame against one appearance encoding -> (L, 32, 32)."""
        self._require(stage2=False)
        frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
        n = self.stage1.config.image_size
        if len(frames) == 0:
            return np.zeros((0, n, n))
        if frames.ndim != 2 or frames.shape[1] != self.stage1.config.motion_dim:
            raise ValueError(f"motion frames must be (L, {self.stage1.config.motion_dim}), got {frames.shape}")
        with no_grad():
            app = self.stage1.appearance(identity_image)
            pixels = self.stage1.decode(app, frames).data
        return pixels.reshape(-1, n, n).astype(np.float64)

    def standardized(self, seq) -> np.ndarray:
        frames = seq.frames if isinstance(seq, MotionSequence) else seq
        return self.normalizer.apply(frames)

    def realized_sigma(self, seq) -> float:
        """m_sigma of a generated sequence, measured in the generator's space."""
        return compute_motion_stats(self.standardized(seq))[1]


def _pad_window(speech: np.ndarray, n: int) -> np.ndarray:
    """Repeat the final frame so the window has exactly ``n`` frames."""
    if len(speech) == n:
        return speech
    return np.concatenate([speech, np.repeat(speech[-1:], n - len(speech), axis=0)])
