"""Adam optimizer over a ParamStore."""

from __future__ import annotations

import numpy as np

from ..errors import StructuralError
from .params import ParamStore


class Adam:
    def __init__(
        self,
        store: ParamStore,
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """One bias-corrected Adam update; grads default to the tape's."""
        if grads is None:
            grads = self.store.grads()
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.store.params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise StructuralError(f"gradient shape mismatch for {name!r}")
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def adam_update(optimizer: Adam, grads: dict[str, np.ndarray] | None = None) -> Adam:
    """Functional wrapper: applies one step and returns the optimizer state."""
    optimizer.step(grads)
    return optimizer
