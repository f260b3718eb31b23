"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Adam:
    """Standard Adam; first/second moments are float32, zero-initialized."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        scale_m = np.float32(self.lr / (1.0 - self.beta1 ** self.t))
        scale_v = np.float32(1.0 / np.sqrt(1.0 - self.beta2 ** self.t))
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += np.float32(1.0 - self.beta1) * g
            v *= self.beta2
            v += np.float32(1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom *= scale_v
            denom += np.float32(self.eps)
            update = m * scale_m
            update /= denom
            p.data -= update
