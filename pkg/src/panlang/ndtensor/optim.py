"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DimensionError, ParameterError
from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, lr, beta1=BETA1, beta2=BETA2, eps=EPS, state=None):
    """One Adam update on plain arrays.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    if state is None:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    if len(state.m) != len(params):
        raise DimensionError("optimizer state does not match params")
    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params.append((p - update).astype(p.dtype, copy=False))
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """Stateful wrapper updating :class:`Tensor` parameters in place."""

    def __init__(self, params: list[Tensor], lr: float = 0.003, beta1=BETA1, beta2=BETA2, eps=EPS):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState(0, [np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.lr,
                                    self.beta1, self.beta2, self.eps, self.state)
        for p, d in zip(self.params, new):
            p.data = d
