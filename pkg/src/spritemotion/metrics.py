"""Desk-scale evaluation: PSNR, lip-sync proxy, motion-statistics MMD, benchmarks."""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import synth
from .motion import MotionSequence, compute_motion_stats

PSNR_CAP = 99.0


class DegenerateVarianceWarning(RuntimeWarning):
    pass


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def pearson(x, y) -> tuple[float, bool]:
    """-> (r, degenerate). Zero-variance input gives (0.0, True)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    if len(x) < 2 or den <= 1e-12 * max(1.0, len(x)):
        return 0.0, True
    return float(np.clip(np.dot(dx, dy) / den, -1.0, 1.0)), False


def sync_proxy(frames, identity: synth.SpriteIdentity, envelope) -> float:
    """Pearson r between measured mouth aperture per frame and the speech envelope.

    Warns with ``DegenerateVarianceWarning`` and returns 0 if either series
    is constant.
    """
    frames = np.asarray(frames)
    envelope = np.asarray(envelope, dtype=np.float64)
    if len(frames) != len(envelope):
        raise ValueError(f"length mismatch: {len(frames)} frames vs {len(envelope)} envelope values")
    apertures = np.array([synth.measure_aperture(f, identity) for f in frames])
    r, degenerate = pearson(apertures, envelope)
    if degenerate:
        warnings.warn("sync proxy undefined for zero-variance input; reporting 0", DegenerateVarianceWarning, stacklevel=2)
    return r


def motion_features(seq) -> np.ndarray:
    """mean (20) ⊕ per-dimension std (20) ⊕ mean absolute first difference (20)."""
    frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    if len(frames) == 0:
        raise ValueError("motion features need at least one frame")
    diff = np.abs(np.diff(frames, axis=0)).mean(axis=0) if len(frames) > 1 else np.zeros(frames.shape[1])
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0), diff])


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median of pairwise distances over the pooled set (distinct pairs)."""
    pooled = np.concatenate([x, y])
    d = np.sqrt(_sq_dists(pooled, pooled))
    iu = np.triu_indices(len(pooled), k=1)
    med = float(np.median(d[iu])) if len(iu[0]) else 0.0
    return med if med > 0 else 1.0


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0)


def _kernel_mean(a, b, h) -> float:
    k = np.exp(-_sq_dists(a, b) / (2.0 * h * h))
    # sorted summation makes the value independent of argument order
    return float(np.sort(k.ravel()).sum() / k.size)


def mmd_from_features(x, y, bandwidth: float | None = None) -> float:
    """Biased squared MMD with kernel exp(-d^2 / (2 h^2))."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(x) == 0 or len(y) == 0:
        raise ValueError("mmd needs two nonempty sets")
    h = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    val = (_kernel_mean(x, x, h) + _kernel_mean(y, y, h)) - 2.0 * _kernel_mean(x, y, h)
    return max(val, 0.0)


def pooled_scale(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-coordinate std of the pooled set, independent of argument order."""
    pooled = np.sort(np.concatenate([x, y]), axis=0)
    s = pooled.std(axis=0)
    return np.where(s > 0, s, 1.0)


def mmd_quality(generated, reference, bandwidth: float | None = None) -> float:
    """MMD over motion features, each coordinate scaled by its pooled std.

    Without the scaling the 20 window means dominate the distance and the
    std and smoothness coordinates barely register.
    """
    if len(generated) == 0 or len(reference) == 0:
        raise ValueError("mmd_quality needs two nonempty sets of sequences")
    x = np.stack([motion_features(s) for s in generated])
    y = np.stack([motion_features(s) for s in reference])
    s = pooled_scale(x, y)
    return mmd_from_features(x / s, y / s, bandwidth)


def fit_line(x, y) -> tuple[float, float, float]:
    """Least-squares y = a x + b -> (a, b, R^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


@dataclass
class BenchRow:
    steps: int
    wall_per_frame: float
    fps: float
    quality: float | None = None
    sync: float | None = None


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    threads: int = 1
    trials: int = 5
    frames: int = 0

    def linear_fit(self) -> tuple[float, float, float]:
        return fit_line([r.steps for r in self.rows], [r.wall_per_frame for r in self.rows])

    def to_table(self) -> str:
        head = f"{'steps':>6} {'s/frame':>10} {'fps':>9} {'mmd':>9} {'sync':>7}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            q = "-" if r.quality is None else f"{r.quality:.4f}"
            s = "-" if r.sync is None else f"{r.sync:.3f}"
            lines.append(f"{r.steps:>6} {r.wall_per_frame:>10.5f} {r.fps:>9.2f} {q:>9} {s:>7}")
        a, b, r2 = self.linear_fit() if len(self.rows) >= 2 else (0.0, 0.0, 1.0)
        lines.append(f"time/frame = {a:.3e}*steps + {b:.3e}  (R^2 {r2:.4f}; median of {self.trials}, {self.threads} thread)")
        return "\n".join(lines)

    def to_json(self) -> str:
        d = {"threads": self.threads, "trials": self.trials, "frames": self.frames,
             "rows": [asdict(r) for r in self.rows]}
        if len(self.rows) >= 2:
            a, b, r2 = self.linear_fit()
            d["fit"] = {"slope": a, "intercept": b, "r2": r2}
        return json.dumps(d, indent=2)


def time_call(fn, trials: int = 5) -> float:
    """Median wall time of ``fn()`` over ``trials`` runs, pinned to one BLAS thread."""
    times = []
    with threadpool_limits(limits=1):
        for _ in range(trials):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
    return float(np.median(times))


def steps_benchmark(pipeline, request_factory, steps_list=(50, 100, 200, 500, 1000), trials: int = 5,
                    quality_fn=None) -> BenchReport:
    """Time ``pipeline.generate_motion_sequence`` for each step count.

    ``request_factory(steps)`` builds the timed request; ``quality_fn(steps)``
    (optional) returns the quality proxy for that step count, or None to skip it.
    """
    if pipeline is None or getattr(pipeline, "generator", None) is None:
        raise RuntimeError("steps benchmark needs trained checkpoints")
    report = BenchReport(trials=trials)
    for steps in steps_list:
        request = request_factory(steps)
        frames = len(request.speech)
        wall = time_call(lambda: pipeline.generate_motion_sequence(request), trials)
        per_frame = wall / frames
        quality = None if quality_fn is None else quality_fn(steps)
        quality = None if quality is None else float(quality)
        report.rows.append(BenchRow(int(steps), per_frame, frames / wall, quality))
        report.frames = frames
    return report


@dataclass
class SweepRow:
    sigma: float
    realized_sigma: float
    sync: float
    mmd: float

    def to_dict(self) -> dict:
        return asdict(self)


def motion_degree_sweep(pipeline, requests_for, sigmas=(0.3, 0.6, 0.9), reference=None, identities=None,
                        envelopes=None) -> list[SweepRow]:
    """Per commanded sigma: mean realized m_sigma, mean sync proxy and MMD to ``reference``.

    ``requests_for(sigma)`` returns the batch of requests (one per seed).
    ``identities``/``envelopes`` (one per request) enable the sync proxy.
    """
    if pipeline is None or getattr(pipeline, "generator", None) is None:
        raise RuntimeError("motion-degree sweep needs trained checkpoints")
    rows = []
    for sigma in sigmas:
        requests = requests_for(sigma)
        seqs, _ = pipeline.generate_batch(requests)
        realized = float(np.mean([pipeline.realized_sigma(s) for s in seqs]))
        sync = float("nan")
        if identities is not None and envelopes is not None:
            scores = []
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateVarianceWarning)
                for req, seq, ident, env in zip(requests, seqs, identities, envelopes):
                    scores.append(sync_proxy(pipeline.render_video(req.identity_image, seq), ident, env))
            sync = float(np.mean(scores))
        mmd = float("nan") if reference is None else mmd_quality([pipeline.standardized(s) for s in seqs],
                                                                   [pipeline.standardized(s) for s in reference])
        rows.append(SweepRow(float(sigma), realized, sync, mmd))
    return rows


def realized_stats(seq) -> tuple[np.ndarray, float]:
    return compute_motion_stats(seq)
