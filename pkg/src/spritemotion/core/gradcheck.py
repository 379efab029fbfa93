"""Graph evaluation with backprop, and central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .nn import Param
from .tensor import Tensor, no_grad

Graph = Callable[[], Tensor]


def evaluate_and_backprop(model_graph: Graph, params: Mapping[str, Param]) -> float:
    """Zero every grad, evaluate the scalar loss and backpropagate.

    Parameters the loss does not reach keep an all-zero gradient.
    """
    for p in params.values():
        p.zero_grad()
    loss = model_graph()
    loss.backward()
    return loss.item()


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> dict[str, float]:
        return {k: e for k, e in self.errors.items() if not e <= self.tolerance}

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{name:<48s} {err:.3e} {'ok' if err <= self.tolerance else 'FAIL'}" for name, err in self.errors.items()]
        lines.append(f"max relative error {self.max_error:.3e} (tolerance {self.tolerance:.1e})")
        return "\n".join(lines)


def grad_check(
    model_graph: Graph,
    params: Mapping[str, Param],
    tolerance: float = 1e-6,
    step: float = 1e-5,
    scale_floor: float = 1e-3,
    max_params: int = 10_000,
) -> GradCheckReport:
    """Compare backprop gradients with central finite differences.

    The error for one parameter tensor is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, scale_floor)``,
    i.e. relative to that tensor's gradient scale; the floor keeps tensors
    whose true gradient is zero from dividing rounding noise by ~0.
    Run under ``high_precision()``; float32 differences are too noisy.
    """
    total = sum(p.data.size for p in params.values())
    if total > max_params:
        raise ValueError(f"{total} parameters is too many to finite-difference (limit {max_params})")
    evaluate_and_backprop(model_graph, params)
    analytic = {k: p.grad.copy() for k, p in params.items()}
    report = GradCheckReport(tolerance)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            numeric = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = model_graph().item()
                flat[i] = orig - step
                down = model_graph().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            a = analytic[name].reshape(-1)
            scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), scale_floor)
            report.errors[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
    return report
