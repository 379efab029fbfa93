"""Finite-difference gradient checks over every trainable block, at toy sizes."""
from __future__ import annotations

import time

import numpy as np

from .core import grad_check, high_precision
from .core import tensor as T
from .core.gradcheck import GradCheckReport
from .core.nn import LayerNorm, Linear
from .core.random import RandomSource
from .core.tensor import Tensor
from .generator import MLP, Attention, Block, GeneratorConfig, MotionGenerator
from .motion import ConditionSet
from .stage1 import Disentangler, Stage1Config, reconstruction_loss


def _perturb(module, rng: RandomSource, scale: float = 0.3) -> None:
    # zero-initialized layers would make several gradients vanish identically
    for p in module.parameters().values():
        p.data += rng.normal(p.shape) * scale


def _cases(seed: int):
    rng = RandomSource(seed)
    x = Tensor(rng.normal((2, 4, 8)))
    target = rng.normal((2, 4, 8))

    lin = Linear(8, 8, rng)
    yield "linear", lambda: T.mse(lin(x), target), lin

    norm = LayerNorm(8)
    _perturb(norm, rng)
    yield "layer_norm", lambda: T.mse(norm(x), target), norm

    attn = Attention(8, 2, rng)
    yield "attention", lambda: T.mse(attn(x), target), attn

    mlp = MLP(8, 16, rng)
    yield "mlp", lambda: T.mse(mlp(x), target), mlp

    gcfg = GeneratorConfig(depth=2, width=8, heads=2, n_frames=4, time_dim=8)
    block = Block(gcfg, rng)
    _perturb(block, rng)
    g, s, noised = Tensor(rng.normal((2, 8))), Tensor(rng.normal((2, 4, 8))), Tensor(rng.normal((2, 4, 20)))
    yield "generator_block", lambda: T.mse(block(x, g, s, noised), target), block

    gen = MotionGenerator(gcfg, rng)
    _perturb(gen, rng)
    cond = ConditionSet(rng.normal((2, 4, 8)), rng.normal((2, 20)) * 0.3, rng.uniform(2),
                        {"mean": np.array([True, False]), "speech": np.array([False, True])})
    motion, eps = rng.normal((2, 4, 20)), rng.normal((2, 4, 20))
    yield "motion_generator", lambda: T.mse(gen.forward(motion, np.array([10, 700]), cond), eps), gen

    dis = Disentangler(Stage1Config(hidden=(6, 5, 4), motion_hidden=(5,), latent_dim=4, image_size=6), rng)
    _perturb(dis, rng, 0.1)
    app, mot = rng.uniform((2, 6, 6)), rng.uniform((2, 6, 6))
    yield "disentangler", lambda: reconstruction_loss(dis, app, mot), dis


def gradient_suite(tolerance: float = 1e-5, seed: int = 0) -> dict[str, GradCheckReport]:
    """Run grad_check on each block in float64; -> {block name: report}."""
    reports = {}
    with high_precision():
        for name, graph, module in _cases(seed):
            reports[name] = grad_check(graph, module.parameters(), tolerance=tolerance, max_params=20_000)
    return reports


def run_gradient_suite(tolerance: float = 1e-5, seed: int = 0) -> tuple[bool, float, str]:
    """-> (all passed, seconds, printable summary)."""
    start = time.perf_counter()
    reports = gradient_suite(tolerance, seed)
    elapsed = time.perf_counter() - start
    lines = [f"{name:<18s} max rel err {r.max_error:.2e} {'ok' if r.passed else 'FAIL'}"
             for name, r in reports.items()]
    return all(r.passed for r in reports.values()), elapsed, "\n".join(lines)
