"""Rectified Adam.

The variance-rectification term rho_t decides the branch: while rho_t <= 4
(always true for the first steps) the update uses only the bias-corrected
first moment; afterwards the usual adaptive denominator is restored, scaled
by the rectification factor. Epsilon is added outside the square root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, NonFiniteGradientError
from .tape import Tensor


@dataclass
class RAdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def rho_inf(beta2: float) -> float:
    return 2.0 / (1.0 - beta2) - 1.0


def rho_t(beta2: float, t: int) -> float:
    b2t = beta2 ** t
    return rho_inf(beta2) - 2.0 * t * b2t / (1.0 - b2t)


def rectification(beta2: float, t: int) -> float:
    ri, rt = rho_inf(beta2), rho_t(beta2, t)
    return math.sqrt(((rt - 4.0) * (rt - 2.0) * ri) / ((ri - 4.0) * (ri - 2.0) * rt))


def radam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: RAdamState,
) -> None:
    """Apply one update in place. A non-finite gradient rejects the whole step."""
    for name, p in params.items():
        if name not in grads:
            raise ContractViolation(f"missing gradient for parameter '{name}'")
        g = grads[name]
        if g.shape != p.data.shape:
            raise ContractViolation(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    adaptive = rho_t(b2, t) > 4.0
    r = rectification(b2, t) if adaptive else 0.0

    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        if adaptive:
            denom = np.sqrt(v / bias2) + state.eps
            p.data -= state.lr * r * m_hat / denom
        else:
            p.data -= state.lr * m_hat


class RAdam:
    """Stateful wrapper that reads gradients from the parameters' grad buffers."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = RAdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {}
            for name, p in self.params.items():
                grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        radam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
