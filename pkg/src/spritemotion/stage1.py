"""Appearance/motion disentangler trained by inter-frame reconstruction.

The encoder has two MLP branches over flattened 32x32 pixels. The hidden
layers of the appearance branch form the appearance stack; the motion branch
ends in a tanh head giving the 20-D motion code. The decoder maps the code
through a linear direction dictionary to a latent, then climbs back up
through three layers, each receiving the matching appearance level as a skip
input.
"""
from __future__ import annotations

import math

from dataclasses import asdict, dataclass

import numpy as np

from .core import tensor as T
from .core.nn import Adam, Linear, Module, Param
from .core.random import RandomSource
from .core.tensor import Tensor, no_grad

IMAGE_SIZE = 32
MOTION_DIM = 20


@dataclass(frozen=True)
class Stage1Config:
    hidden: tuple = (512, 256, 128)
    motion_hidden: tuple = (256, 128)
    latent_dim: int = 64
    motion_dim: int = MOTION_DIM
    image_size: int = IMAGE_SIZE
    # initial scale of the motion head weights; keeps tanh out of saturation early on
    head_scale: float = 0.1

    def __post_init__(self):
        if len(self.hidden) != 3:
            raise ValueError(f"appearance stack needs exactly 3 levels, got {self.hidden}")
        if not self.motion_hidden:
            raise ValueError("motion branch needs at least one hidden layer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["motion_hidden"] = list(self.motion_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Stage1Config":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        d["motion_hidden"] = tuple(d["motion_hidden"])
        return cls(**d)


@dataclass
class AppearanceStack:
    levels: list  # Tensors, (B, hidden[l])

    def numpy(self) -> list[np.ndarray]:
        return [lv.data for lv in self.levels]

    def select(self, idx) -> "AppearanceStack":
        return AppearanceStack([Tensor(lv.data[idx], dtype=lv.dtype) for lv in self.levels])


class MotionBasis(Module):
    """Learned direction dictionary; latent = sum_i code_i * direction_i."""

    def __init__(self, motion_dim: int, latent_dim: int, rng: RandomSource):
        self.directions = Param(rng.normal((motion_dim, latent_dim)) / np.sqrt(motion_dim))

    def __call__(self, code: Tensor) -> Tensor:
        return decompose_motion(code, self)


def decompose_motion(code, basis: MotionBasis) -> Tensor:
    code = T.as_tensor(code, dtype=basis.directions.dtype)
    if code.shape[-1] != basis.directions.shape[0]:
        raise T.ShapeError(f"motion code dim {code.shape[-1]} != basis rows {basis.directions.shape[0]}")
    if code.ndim == 1:
        return (code.reshape(1, -1) @ basis.directions).reshape(-1)
    return code @ basis.directions


class Disentangler(Module):
    def __init__(self, config: Stage1Config, rng: RandomSource):
        self.config = config
        h1, h2, h3 = config.hidden
        npix = config.image_size**2
        self.enc1 = Linear(npix, h1, rng)
        self.enc2 = Linear(h1, h2, rng)
        self.enc3 = Linear(h2, h3, rng)
        sizes = (npix,) + tuple(config.motion_hidden)
        self.motion_layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.motion_head = Linear(sizes[-1], config.motion_dim, rng)
        self.motion_head.weight.data *= config.head_scale
        self.basis = MotionBasis(config.motion_dim, config.latent_dim, rng)
        self.dec3 = Linear(config.latent_dim, h3, rng)
        self.skip3 = Linear(h3, h3, rng)
        self.dec2 = Linear(h3, h2, rng)
        self.skip2 = Linear(h2, h2, rng)
        self.dec1 = Linear(h2, h1, rng)
        self.skip1 = Linear(h1, h1, rng)
        self.out = Linear(h1, npix, rng)

    def appearance_param_names(self) -> list[str]:
        return [f"enc{i}.weight" for i in (1, 2, 3)]

    def set_output_level(self, pixel_mean: float, weight_scale: float = 0.01) -> None:
        """Start the decoder near a constant image at ``pixel_mean``."""
        p = float(np.clip(pixel_mean, 1e-3, 1 - 1e-3))
        self.out.weight.data *= weight_scale
        self.out.bias.data[:] = np.log(p / (1 - p))

    def _flatten(self, images) -> np.ndarray:
        arr = images.data if isinstance(images, Tensor) else np.asarray(images)
        n = self.config.image_size
        if arr.shape[-2:] == (n, n):
            return arr.reshape(-1, n * n)
        if arr.ndim in (1, 2) and arr.shape[-1] == n * n:
            return arr.reshape(-1, n * n)
        raise T.ShapeError(f"expected {n}x{n} images, got shape {arr.shape}")

    def appearance(self, images) -> AppearanceStack:
        x = Tensor(self._flatten(images), dtype=self.dtype)
        a1 = T.gelu(self.enc1(x))
        a2 = T.gelu(self.enc2(a1))
        a3 = T.gelu(self.enc3(a2))
        return AppearanceStack([a1, a2, a3])

    def motion(self, images) -> Tensor:
        # ink = 1 - pixel, so the white background feeds nothing into the branch
        h = Tensor(1.0 - self._flatten(images), dtype=self.dtype)
        for layer in self.motion_layers:
            h = T.gelu(layer(h))
        return T.tanh(self.motion_head(h))

    def encode(self, images) -> tuple[AppearanceStack, Tensor]:
        """images: (B, 32, 32) or (32, 32) -> (appearance stack, (B, 20) codes)."""
        return self.appearance(images), self.motion(images)

    def decode(self, appearance: AppearanceStack, code) -> Tensor:
        """-> (B, 32*32) pixels in (0, 1)."""
        code = T.as_tensor(code, dtype=self.dtype)
        if code.ndim == 1:
            code = code.reshape(1, -1)
        a1, a2, a3 = appearance.levels
        expected = tuple(self.config.hidden)
        got = tuple(lv.shape[-1] for lv in appearance.levels)
        if got != expected:
            raise T.ShapeError(f"appearance levels {got} do not match config {expected}")
        if a3.shape[0] != code.shape[0] and a3.shape[0] != 1:
            raise T.ShapeError(f"appearance batch {a3.shape[0]} vs code batch {code.shape[0]}")
        z = decompose_motion(code, self.basis)
        d = T.gelu(self.dec3(z) + self.skip3(a3))
        d = T.gelu(self.dec2(d) + self.skip2(a2))
        d = T.gelu(self.dec1(d) + self.skip1(a1))
        return T.sigmoid(self.out(d))

    def reconstruct(self, appearance_images, motion_images) -> Tensor:
        return self.decode(self.appearance(appearance_images), self.motion(motion_images))


def reconstruction_loss(model: Disentangler, app_images, motion_images) -> Tensor:
    target = Tensor(np.asarray(motion_images).reshape(len(motion_images), -1), dtype=model.dtype)
    return T.mse(model.reconstruct(app_images, motion_images), target)


class Stage1Trainer:
    """Adam on inter-frame reconstruction pairs.

    Decoupled weight decay on the appearance-branch weights lets directions
    the decoder never reads fade away, which is what keeps the appearance
    stack steady across frames of one clip. Adam moves even unused weights
    by about ``lr`` per step, so the step size is cosine-annealed while the
    decay rate stays fixed; that shrinks the residual jitter.
    """

    def __init__(self, model: Disentangler, lr: float = 1e-3, grad_clip: float | None = 1.0,
                 appearance_decay: float = 1.0, total_steps: int | None = None, lr_final: float | None = None):
        self.model = model
        self.params = model.parameters()
        self.opt = Adam(self.params, lr=lr, grad_clip=grad_clip, weight_decay=appearance_decay,
                        decay=model.appearance_param_names())
        self.lr0 = lr
        self.lr_final = lr if lr_final is None else lr_final
        self.total_steps = total_steps

    def lr_at(self, step: int) -> float:
        """Cosine anneal from lr to lr_final over total_steps (constant without a horizon)."""
        if not self.total_steps:
            return self.lr0
        frac = min(step, self.total_steps) / self.total_steps
        return self.lr_final + 0.5 * (self.lr0 - self.lr_final) * (1.0 + math.cos(math.pi * frac))

    def train_reconstruction_step(self, app_images, motion_images) -> float:
        self.opt.lr = self.lr_at(self.opt.step_count)
        for p in self.params.values():
            p.zero_grad()
        loss = reconstruction_loss(self.model, app_images, motion_images)
        loss.backward()
        self.opt.step()
        return loss.item()


def extract_motion_sequence(model: Disentangler | None, clip_frames) -> np.ndarray:
    """(n, 32, 32) frames -> (n, 20) motion codes in clip order."""
    if model is None:
        raise RuntimeError("no trained stage-1 encoder loaded")
    frames = np.asarray(clip_frames)
    if len(frames) == 0:
        return np.zeros((0, model.config.motion_dim))
    with no_grad():
        code = model.motion(frames)
    return code.data.astype(np.float64)


def appearance_stability(model: Disentangler, clips: list[np.ndarray]) -> float:
    """Within-clip over across-clip appearance variance, summed over stack entries.

    Each clip is one identity. Within-clip variance is the per-entry variance
    over frames, averaged over clips; across-clip variance is the per-entry
    variance of clip-mean features over clips.
    """
    means, within = [], []
    with no_grad():
        for frames in clips:
            app = model.appearance(frames)
            feats = np.concatenate([lv.data.astype(np.float64) for lv in app.levels], axis=1)
            within.append(feats.var(axis=0))
            means.append(feats.mean(axis=0))
    w = np.mean(within, axis=0).sum()
    a = np.var(np.stack(means), axis=0).sum()
    return float(w / a)
