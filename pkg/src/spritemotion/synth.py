"""Procedural sprite talking-head clips with a known speech-to-mouth link.

Geometry conventions
--------------------
Images are 32x32 float arrays in [0, 1]; pixel (row r, col c) is sampled at
its centre ``(x, y) = (c, r)``. The unposed face centre is ``(15.5, 15.5)``.
A pose ``(dx, dy, rot)`` moves the face centre to ``(15.5 + dx, 15.5 + dy)``
and rotates the face by ``rot`` radians (positive turns the face clockwise on
screen, since y grows downward). Rasterisation is hard-edged: a pixel belongs
to a shape iff its centre lies inside it.

Layers, painted in order: white background (1.0), head ellipse (identity
gray), two eye discs and the mouth ellipse (both ``FEATURE_GRAY``). The mouth
has half-width ``MOUTH_HALF_WIDTH`` and vertical radius
``aperture * MOUTH_MAX_RADIUS``; aperture 0 draws no mouth at all.

Identity ranges (uniform): head half-width [9, 10.5], head half-height
[12.5, 13.5], gray [0.45, 0.75], eye half-spacing [3.5, 5], mouth offset below
centre [4, 5]. Pose ranges: |dx|, |dy| <= 2, |rot| <= 0.12.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from .core.random import RandomSource

SIZE = 32
CENTER = (SIZE - 1) / 2
BACKGROUND = 1.0
FEATURE_GRAY = 0.05
DARK_THRESHOLD = 0.25
EYE_RADIUS = 1.6
EYE_HEIGHT = -5.5
MOUTH_HALF_WIDTH = 6.0
MOUTH_MAX_RADIUS = 6.0
MAX_SHIFT = 2.0
MAX_ROT = 0.12
FPS = 25
SPEECH_DIM = 8

IDENTITY_RANGES = {
    "head_a": (9.0, 10.5),
    "head_b": (12.5, 13.5),
    "gray": (0.45, 0.75),
    "eye_spacing": (3.5, 5.0),
    "mouth_y": (4.0, 5.0),
}

TRAIN_IDENTITIES = range(0, 800)
TEST_IDENTITIES = range(800, 1000)

_yy, _xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)


@dataclass(frozen=True)
class SpriteIdentity:
    head_a: float
    head_b: float
    gray: float
    eye_spacing: float
    mouth_y: float

    @classmethod
    def sample(cls, rng: RandomSource) -> "SpriteIdentity":
        u = rng.uniform(len(IDENTITY_RANGES))
        vals = {k: lo + (hi - lo) * float(ui) for (k, (lo, hi)), ui in zip(IDENTITY_RANGES.items(), u)}
        return cls(**vals)

    @classmethod
    def from_seed(cls, identity_seed: int) -> "SpriteIdentity":
        return cls.sample(RandomSource(10_007 * identity_seed + 1))


@dataclass(frozen=True)
class SpeechTrack:
    envelope: np.ndarray  # (n,)
    features: np.ndarray  # (n, SPEECH_DIM)

    def __len__(self) -> int:
        return len(self.envelope)

    def slice(self, start: int, stop: int) -> "SpeechTrack":
        return SpeechTrack(self.envelope[start:stop], self.features[start:stop])


@dataclass(frozen=True)
class ClipSample:
    frames: np.ndarray  # (n, 32, 32)
    track: SpeechTrack
    poses: np.ndarray  # (n, 3): dx, dy, rot
    apertures: np.ndarray  # (n,)
    identity: SpriteIdentity


def lift_envelope(envelope: np.ndarray, seed: int) -> np.ndarray:
    """Speech features from a mouth envelope.

    Channels: 0 envelope, 1 first difference (0 at frame 0), 2 envelope two
    frames earlier, 3 envelope two frames later (edges clamped),
    4 sin(pi * env), 5 cos(pi * env), 6-7 N(0, 0.1^2) noise from ``seed``.
    """
    env = np.asarray(envelope, dtype=np.float64)
    n = len(env)
    idx = np.arange(n)
    feats = np.empty((n, SPEECH_DIM))
    feats[:, 0] = env
    feats[:, 1] = np.diff(env, prepend=env[:1])
    feats[:, 2] = env[np.clip(idx - 2, 0, n - 1)]
    feats[:, 3] = env[np.clip(idx + 2, 0, n - 1)]
    feats[:, 4] = np.sin(np.pi * env)
    feats[:, 5] = np.cos(np.pi * env)
    feats[:, 6:] = 0.1 * RandomSource(seed).normal((n, SPEECH_DIM - 6))
    return feats


def synth_speech_track(rng: RandomSource, n_frames: int, envelope: np.ndarray | None = None) -> SpeechTrack:
    """Envelope = max(0, sum of 2-4 sinusoids), scaled so its peak is 1.

    Frequencies are uniform in [1, 4] Hz at 25 fps, amplitudes in [0.5, 1],
    phases uniform. Passing ``envelope`` skips the random envelope but still
    draws the feature-noise seed from ``rng``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    k = 2 + int(rng.integers(3))
    u = rng.uniform((k, 3))
    noise_seed = int(rng.integers(2**31))
    if envelope is None:
        t = np.arange(n_frames) / FPS
        freqs = 1.0 + 3.0 * u[:, 0]
        amps = 0.5 + 0.5 * u[:, 1]
        phases = 2 * np.pi * u[:, 2]
        s = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None] + phases[:, None])).sum(0)
        env = np.maximum(s, 0.0)
        peak = env.max()
        if peak > 0:
            env = env / peak
    else:
        env = np.asarray(envelope, dtype=np.float64)
        if env.shape != (n_frames,):
            raise ValueError(f"envelope must have shape ({n_frames},)")
    return SpeechTrack(env, lift_envelope(env, noise_seed))


def _face_coords(pose) -> tuple[np.ndarray, np.ndarray]:
    dx, dy, rot = pose
    x = _xx - (CENTER + dx)
    y = _yy - (CENTER + dy)
    c, s = np.cos(rot), np.sin(rot)
    return c * x + s * y, -s * x + c * y


def _check_pose(pose, aperture) -> None:
    dx, dy, rot = pose
    if not (abs(dx) <= MAX_SHIFT and abs(dy) <= MAX_SHIFT and abs(rot) <= MAX_ROT):
        raise ValueError(f"pose {tuple(pose)} outside documented range")
    if not 0.0 <= aperture <= 1.0:
        raise ValueError(f"aperture {aperture} outside [0, 1]")


def mouth_mask(identity: SpriteIdentity, pose, aperture: float) -> np.ndarray:
    u, v = _face_coords(pose)
    if aperture <= 0:
        return np.zeros((SIZE, SIZE), dtype=bool)
    ry = aperture * MOUTH_MAX_RADIUS
    return (u / MOUTH_HALF_WIDTH) ** 2 + ((v - identity.mouth_y) / ry) ** 2 <= 1.0


def render_sprite_frame(identity: SpriteIdentity, pose, aperture: float) -> np.ndarray:
    _check_pose(pose, aperture)
    u, v = _face_coords(pose)
    img = np.full((SIZE, SIZE), BACKGROUND)
    img[(u / identity.head_a) ** 2 + (v / identity.head_b) ** 2 <= 1.0] = identity.gray
    for side in (-1.0, 1.0):
        img[(u - side * identity.eye_spacing) ** 2 + (v - EYE_HEIGHT) ** 2 <= EYE_RADIUS**2] = FEATURE_GRAY
    img[mouth_mask(identity, pose, aperture)] = FEATURE_GRAY
    return img


def _smoothed_walk(rng: RandomSource, n: int, rho: float = 0.92) -> np.ndarray:
    """Bounded smoothed walk in (-1, 1): tanh of a stationary AR(1) process, 3-tap averaged."""
    eps = rng.normal(n + 2)
    w = np.empty(n + 2)
    w[0] = eps[0]
    scale = np.sqrt(1 - rho**2)
    for i in range(1, n + 2):
        w[i] = rho * w[i - 1] + scale * eps[i]
    w = np.tanh(w)
    return (w[:-2] + w[1:-1] + w[2:]) / 3.0


def make_clip(rng: RandomSource, n_frames: int, identity: SpriteIdentity | None = None) -> ClipSample:
    """One clip: identity, speech track, pose walk; aperture equals the envelope.

    A per-clip motion intensity ``k ~ U(0, 1)`` scales the pose walk, so clips
    range from nearly still to moving across the full pose range.
    """
    if identity is None:
        identity = SpriteIdentity.sample(rng)
    track = synth_speech_track(rng, n_frames)
    k = float(rng.uniform())
    poses = np.stack(
        [
            k * MAX_SHIFT * _smoothed_walk(rng, n_frames),
            k * MAX_SHIFT * _smoothed_walk(rng, n_frames),
            k * MAX_ROT * _smoothed_walk(rng, n_frames),
        ],
        axis=1,
    )
    apertures = track.envelope.copy()
    frames = np.stack([render_sprite_frame(identity, p, a) for p, a in zip(poses, apertures)])
    return ClipSample(frames, track, poses, apertures, identity)


def clip_for(identity_seed: int, motion_seed: int, n_frames: int) -> ClipSample:
    """Clip of a fixed identity; motion and speech depend only on ``motion_seed``."""
    identity = SpriteIdentity.from_seed(identity_seed)
    rng = RandomSource(1_000_003 * identity_seed + motion_seed + 7)
    return make_clip(rng, n_frames, identity)


def estimate_pose(image: np.ndarray, identity: SpriteIdentity) -> tuple[float, float, float]:
    """Pose from the head silhouette centroid and the eye-pair orientation."""
    head = image < (BACKGROUND + identity.gray) / 2
    if head.sum() < 10:
        return (0.0, 0.0, 0.0)
    cy, cx = (np.array(np.nonzero(head), dtype=float)).mean(axis=1)
    dx = float(np.clip(cx - CENTER, -MAX_SHIFT, MAX_SHIFT))
    dy = float(np.clip(cy - CENTER, -MAX_SHIFT, MAX_SHIFT))
    u, v = _face_coords((dx, dy, 0.0))
    dark = image < DARK_THRESHOLD
    rot = 0.0
    eyes = []
    for side in (-1.0, 1.0):
        region = dark & ((u - side * identity.eye_spacing) ** 2 + (v - EYE_HEIGHT) ** 2 <= (EYE_RADIUS + 2.0) ** 2)
        if region.sum() == 0:
            break
        eyes.append((u[region].mean(), v[region].mean()))
    if len(eyes) == 2:
        (ul, vl), (ur, vr) = eyes
        rot = float(np.clip(np.arctan2(vr - vl, ur - ul), -MAX_ROT, MAX_ROT))
    return dx, dy, rot


def measure_aperture(image: np.ndarray, identity: SpriteIdentity) -> float:
    """Mouth opening from an image: dark pixels in the mouth region over the full-open area.

    The region is the fully open mouth at the estimated pose, grown by one
    pixel; the count is normalised by the fully open mouth's area
    ``pi * MOUTH_HALF_WIDTH * MOUTH_MAX_RADIUS`` and clamped to [0, 1].
    """
    pose = estimate_pose(image, identity)
    u, v = _face_coords(pose)
    region = (u / (MOUTH_HALF_WIDTH + 1)) ** 2 + ((v - identity.mouth_y) / (MOUTH_MAX_RADIUS + 1)) ** 2 <= 1.0
    count = np.count_nonzero(region & (image < DARK_THRESHOLD))
    full = np.pi * MOUTH_HALF_WIDTH * MOUTH_MAX_RADIUS
    return float(np.clip(count / full, 0.0, 1.0))


def export_clip(clip: ClipSample, directory: str) -> None:
    """Write frames as binary PGM (P5, maxval 255) plus ``truth.json``.

    ``truth.json`` keys: ``identity`` (SpriteIdentity fields), ``fps``,
    ``envelope``, ``speech_features`` (n x 8), ``poses`` (n x [dx, dy, rot]),
    ``apertures``.
    """
    import json

    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        pix = np.clip(np.rint(frame * 255), 0, 255).astype(np.uint8)
        with open(os.path.join(directory, f"frame_{i:04d}.pgm"), "wb") as fh:
            fh.write(f"P5\n{SIZE} {SIZE}\n255\n".encode("ascii"))
            fh.write(pix.tobytes())
    truth = {
        "identity": asdict(clip.identity),
        "fps": FPS,
        "envelope": clip.track.envelope.tolist(),
        "speech_features": clip.track.features.tolist(),
        "poses": clip.poses.tolist(),
        "apertures": clip.apertures.tolist(),
    }
    with open(os.path.join(directory, "truth.json"), "w") as fh:
        json.dump(truth, fh, indent=1)


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pix = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return pix.astype(np.float64) / maxval
