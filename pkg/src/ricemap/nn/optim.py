"""Adam, in the Keras formulation (epsilon added to the uncorrected sqrt(v))."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-7) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def init_state(self, params: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of ``params`` (iterated in sorted-name order)."""
        self.init_state(params)
        self.step_count += 1
        t = self.step_count
        lr_t = self.learning_rate * np.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        dtype = next(iter(params.values())).dtype.type
        b1, b2, eps, lr_t = dtype(self.beta1), dtype(self.beta2), dtype(self.epsilon), dtype(lr_t)
        for name in sorted(params):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= lr_t * m / (np.sqrt(v) + eps)
