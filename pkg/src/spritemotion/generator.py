"""Transformer ε-predictor over noised motion sequences.

Conditioning runs through two paths. A per-sequence global embedding (time,
motion mean, motion std, pooled speech) regresses a scale/shift applied to
the hidden stream at the top of every block. Per-frame speech embeddings are
concatenated with the noised motion frame, projected and added residually
inside every block.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import diffusion
from .core import tensor as T
from .core.nn import Adam, LayerNorm, Linear, Module, Param
from .core.random import RandomSource
from .core.tensor import Tensor, no_grad
from .motion import MOTION_DIM, SLOTS, ConditionSet, batch_motion_stats


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 4
    width: int = 128
    heads: int = 4
    motion_dim: int = MOTION_DIM
    speech_dim: int = 8
    n_frames: int = 32
    time_dim: int = 64
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding, (B,) -> (B, dim): [cos(t f_k), sin(t f_k)], f_k = 10000^(-k/(dim/2))."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


class Attention(Module):
    def __init__(self, width: int, heads: int, rng: RandomSource):
        self.heads = heads
        self.qkv = Linear(width, 3 * width, rng)
        self.proj = Linear(width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, w = x.shape
        h = self.heads
        dh = w // h
        qkv = self.qkv(x).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = T.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)), axis=-1)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, w)
        return self.proj(y)


class MLP(Module):
    def __init__(self, width: int, hidden: int, rng: RandomSource):
        self.fc1 = Linear(width, hidden, rng)
        self.fc2 = Linear(hidden, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class Block(Module):
    def __init__(self, cfg: GeneratorConfig, rng: RandomSource):
        w = cfg.width
        self.width = w
        self.modulation = Linear(w, 2 * w, zero=True)
        self.concat_proj = Linear(w + cfg.motion_dim, w, zero=True)
        self.norm1 = LayerNorm(w)
        self.attn = Attention(w, cfg.heads, rng)
        self.norm2 = LayerNorm(w)
        self.mlp = MLP(w, cfg.mlp_ratio * w, rng)

    def __call__(self, hidden: Tensor, global_emb: Tensor, per_frame_speech: Tensor, noised: Tensor) -> Tensor:
        if hidden.ndim != 3 or hidden.shape[-1] != self.width:
            raise T.ShapeError(f"block expects (B, N, {self.width}) hidden, got {hidden.shape}")
        if per_frame_speech.shape != hidden.shape:
            raise T.ShapeError(f"per-frame speech {per_frame_speech.shape} vs hidden {hidden.shape}")
        b = hidden.shape[0]
        mod = self.modulation(T.gelu(global_emb))
        gamma = mod[:, : self.width].reshape(b, 1, self.width)
        delta = mod[:, self.width :].reshape(b, 1, self.width)
        h = hidden * (gamma + 1.0) + delta
        h = h + self.concat_proj(T.concat([per_frame_speech, noised], axis=-1))
        h = h + self.attn(self.norm1(h))
        return h + self.mlp(self.norm2(h))


class MotionGenerator(Module):
    def __init__(self, cfg: GeneratorConfig, rng: RandomSource):
        self.config = cfg
        w = cfg.width
        self.input_proj = Linear(cfg.motion_dim, w, rng)
        self.pos_emb = Param(rng.normal((cfg.n_frames, w)) * 0.02)
        self.time_fc1 = Linear(cfg.time_dim, w, rng)
        self.time_fc2 = Linear(w, w, rng)
        self.mean_proj = Linear(cfg.motion_dim, w, rng)
        self.std_proj = Linear(1, w, rng)
        self.speech_pool_proj = Linear(cfg.speech_dim, w, rng)
        self.speech_frame_proj = Linear(cfg.speech_dim, w, rng)
        self.null_mean = Param(rng.normal(w) * 0.02)
        self.null_std = Param(rng.normal(w) * 0.02)
        self.null_speech = Param(rng.normal(w) * 0.02)
        self.null_speech_frame = Param(rng.normal(w) * 0.02)
        self.blocks = [Block(cfg, rng) for _ in range(cfg.depth)]
        self.final_norm = LayerNorm(w)
        self.output = Linear(w, cfg.motion_dim, zero=True)

    def _mask(self, present: np.ndarray, ndim: int) -> Tensor:
        return Tensor(present.astype(np.float64).reshape((-1,) + (1,) * (ndim - 1)), dtype=self.dtype)

    @staticmethod
    def _select(mask: Tensor, value: Tensor, null: Param) -> Tensor:
        # mask * value + (1 - mask) * null, exact for mask in {0, 1}
        return value * mask + null * (1.0 - mask)

    def time_embedding(self, t) -> Tensor:
        temb = Tensor(timestep_embedding(t, self.config.time_dim), dtype=self.dtype)
        return self.time_fc2(T.gelu(self.time_fc1(temb)))

    def embed_conditions(self, conditions: ConditionSet, t) -> tuple[Tensor, Tensor]:
        """-> global (B, W) and per-frame speech (B, N, W) embeddings."""
        cfg = self.config
        if conditions.speech.shape[-1] != cfg.speech_dim:
            raise T.ShapeError(f"speech dim {conditions.speech.shape[-1]} != {cfg.speech_dim}")
        if conditions.mean.shape[-1] != cfg.motion_dim:
            raise T.ShapeError(f"motion mean dim {conditions.mean.shape[-1]} != {cfg.motion_dim}")
        p = conditions.present
        speech = Tensor(conditions.speech, dtype=self.dtype)
        g = self.time_embedding(t)
        g = g + self._select(self._mask(p["mean"], 2), self.mean_proj(Tensor(conditions.mean, dtype=self.dtype)), self.null_mean)
        g = g + self._select(self._mask(p["std"], 2), self.std_proj(Tensor(conditions.std[:, None], dtype=self.dtype)), self.null_std)
        g = g + self._select(self._mask(p["speech"], 2), self.speech_pool_proj(T.mean(speech, axis=1)), self.null_speech)
        frames = self._select(self._mask(p["speech"], 3), self.speech_frame_proj(speech), self.null_speech_frame)
        return g, frames

    def forward(self, noised, t, conditions: ConditionSet) -> Tensor:
        cfg = self.config
        x = Tensor(noised, dtype=self.dtype)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.shape[1:] != (cfg.n_frames, cfg.motion_dim):
            raise T.ShapeError(f"expected (B, {cfg.n_frames}, {cfg.motion_dim}) input, got {x.shape}")
        if conditions.n_frames != cfg.n_frames:
            raise T.ShapeError(f"speech length {conditions.n_frames} != sequence length {cfg.n_frames}")
        t = np.broadcast_to(np.asarray(t), (x.shape[0],))
        g, frames = self.embed_conditions(conditions, t)
        h = self.input_proj(x) + self.pos_emb
        for block in self.blocks:
            h = block(h, g, frames, x)
        return self.output(self.final_norm(h))

    def predict_epsilon(self, noised, t, conditions: ConditionSet) -> np.ndarray:
        with no_grad():
            return self.forward(noised, t, conditions).data.astype(np.float64)

    __call__ = predict_epsilon


class GeneratorTrainer:
    """ε-prediction MSE with independent per-slot condition dropout."""

    def __init__(self, model: MotionGenerator, sched: diffusion.NoiseSchedule, lr: float = 1e-4,
                 dropout: float = 0.1, grad_clip: float | None = 1.0):
        self.model = model
        self.sched = sched
        self.dropout = dropout
        self.params = model.parameters()
        self.opt = Adam(self.params, lr=lr, grad_clip=grad_clip)

    def train_step(self, motion: np.ndarray, speech: np.ndarray, rng: RandomSource) -> float:
        """motion (B, N, 20), speech (B, N, d_a) -> loss; updates parameters."""
        motion = np.asarray(motion, dtype=np.float64)
        if motion.ndim != 3 or len(motion) == 0:
            raise ValueError("train_step needs a nonempty (B, N, 20) batch")
        b = len(motion)
        mu, sigma = batch_motion_stats(motion)
        cond = ConditionSet(speech, mu, sigma)
        cond = cond.with_dropout({s: rng.bernoulli(self.dropout, b) for s in SLOTS})
        t = rng.integers(self.sched.T, b)
        eps = rng.normal(motion.shape)
        x_t = diffusion.forward_diffuse(motion, t, eps, self.sched)
        for p in self.params.values():
            p.zero_grad()
        loss = T.mse(self.model.forward(x_t, t, cond), eps)
        loss.backward()
        self.opt.step()
        return loss.item()
