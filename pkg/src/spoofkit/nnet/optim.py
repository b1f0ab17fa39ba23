"""Adam with decoupled weight decay.

Parameters are updated in place so layer arrays and the params dict
stay the same objects. Decay multiplies each parameter by
(1 - lr * weight_decay) before the bias-corrected Adam delta.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


class AdamW:
    def __init__(self, learning_rate=2e-3, betas=(0.9, 0.99), eps=1e-5, weight_decay=0.01):
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict):
        """One update over every named parameter."""
        self.step_count += 1
        t = self.step_count
        lr, b1, b2 = self.learning_rate, self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatch(
                    f"{name}: gradient shape {g.shape} != parameter shape {p.shape}"
                )
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            if self.weight_decay:
                p *= 1.0 - lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
