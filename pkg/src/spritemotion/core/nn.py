"""Parameters, modules and the Adam optimizer."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .random import RandomSource
from .tensor import Tensor, default_dtype


class Param(Tensor):
    """Trainable leaf tensor. ``grad`` always exists and matches ``data``."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


class Module:
    """Container whose parameters are discovered from attributes.

    Names are dotted attribute paths (``blocks.0.attn.qkv.weight``) in
    attribute-definition order, so the ordering is stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Param):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{name}.{i}", item

    def parameters(self) -> "OrderedDict[str, Param]":
        params = OrderedDict()
        for name, p in self.named_parameters():
            if name in params:
                raise ValueError(f"duplicate parameter name {name!r}")
            p.name = name
            params[name] = p
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self.parameters().items())

    def load_state_dict(self, state) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise T.ShapeError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype).copy()
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    @property
    def dtype(self):
        for p in self.parameters().values():
            return p.dtype
        return np.dtype(default_dtype())


def init_normal(rng: RandomSource, shape, std: float) -> np.ndarray:
    return rng.normal(shape) * std


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RandomSource | None = None, zero: bool = False, bias: bool = True):
        self.d_in, self.d_out = d_in, d_out
        if zero or rng is None:
            w = np.zeros((d_in, d_out))
        else:
            # Xavier-uniform-equivalent variance
            w = init_normal(rng, (d_in, d_out), np.sqrt(2.0 / (d_in + d_out)))
        self.weight = Param(w)
        self.bias = Param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Param(np.ones(dim))
        self.shift = Param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.eps) * self.gain + self.shift


class Adam:
    """Adaptive moment estimation with bias correction.

    ``weight_decay`` is decoupled (applied as ``p *= 1 - lr0 * wd`` after the
    moment update, with ``lr0`` the learning rate at construction) and only
    touches parameters named in ``decay``. Tying it to ``lr0`` keeps the decay
    rate fixed while a schedule anneals ``lr``.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 grad_clip: float | None = None, weight_decay: float = 0.0, decay=()):
        self.params = OrderedDict(params)
        self.weight_decay = weight_decay
        self.decay = frozenset(decay)
        unknown = self.decay - set(self.params)
        if unknown:
            raise KeyError(f"weight decay on unknown parameters: {sorted(unknown)}")
        self.lr = lr
        self.decay_factor = 1.0 - lr * weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        scale = 1.0
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in self.params.values()))
            if total > self.grad_clip:
                scale = self.grad_clip / total
        c1 = 1.0 - self.b1**self.step_count
        c2 = 1.0 - self.b2**self.step_count
        for k, p in self.params.items():
            g = p.grad * scale if scale != 1.0 else p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
            if self.weight_decay and k in self.decay:
                p.data *= p.dtype.type(self.decay_factor)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
