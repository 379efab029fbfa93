"""Motion sequences, their temporal statistics, and the condition bundle."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MOTION_DIM = 20
SLOTS = ("speech", "mean", "std")


@dataclass
class MotionSequence:
    frames: np.ndarray  # (n, 20)
    frame_rate: int = 25

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64).reshape(-1, MOTION_DIM)

    def __len__(self) -> int:
        return len(self.frames)


def compute_motion_stats(seq) -> tuple[np.ndarray, float]:
    """Per-dimension temporal mean, and RMS of per-dimension stds clamped to [0, 1]."""
    frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    if len(frames) == 0:
        raise ValueError("motion statistics need at least one frame")
    # shifted by the first frame so a constant sequence gives exactly (c, 0)
    centred = frames - frames[0]
    offset = centred.mean(axis=0)
    mu = frames[0] + offset
    sigma = float(np.sqrt(np.mean(((centred - offset) ** 2).mean(axis=0))))
    return mu, min(max(sigma, 0.0), 1.0)


def batch_motion_stats(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``compute_motion_stats`` over a (B, n, 20) batch."""
    frames = np.asarray(frames, dtype=np.float64)
    centred = frames - frames[:, :1]
    offset = centred.mean(axis=1)
    mu = frames[:, 0] + offset
    sigma = np.clip(np.sqrt(((centred - offset[:, None]) ** 2).mean(axis=1).mean(axis=1)), 0.0, 1.0)
    return mu, sigma


@dataclass
class ConditionSet:
    """Batched conditions: speech (B, n, d_a), mean (B, 20), std (B,).

    ``present`` maps each slot name to a (B,) bool array; an absent slot is
    replaced by its learned null embedding inside the generator.
    """

    speech: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    present: dict = field(default=None)

    def __post_init__(self):
        self.speech = np.asarray(self.speech, dtype=np.float64)
        if self.speech.ndim == 2:
            self.speech = self.speech[None]
        b = self.speech.shape[0]
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(b, -1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(b)
        if np.any((self.std < 0) | (self.std > 1)):
            raise ValueError("motion std condition must lie in [0, 1]")
        if self.present is None:
            self.present = {s: np.ones(b, dtype=bool) for s in SLOTS}
        else:
            self.present = {s: np.broadcast_to(np.asarray(self.present.get(s, True), dtype=bool), (b,)).copy() for s in SLOTS}

    @property
    def batch(self) -> int:
        return self.speech.shape[0]

    @property
    def n_frames(self) -> int:
        return self.speech.shape[1]

    def masked(self, active) -> "ConditionSet":
        return replace(self, present={s: self.present[s] & (s in active) for s in SLOTS})

    def null(self) -> "ConditionSet":
        return replace(self, present={s: np.zeros(self.batch, dtype=bool) for s in SLOTS})

    def with_dropout(self, drop: dict) -> "ConditionSet":
        return replace(self, present={s: self.present[s] & ~np.asarray(drop[s]) for s in SLOTS})
