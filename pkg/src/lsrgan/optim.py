"""Bias-corrected Adam over ``Tensor`` parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """A loss or gradient went NaN/Inf; training must stop."""


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0


class Adam:
    """Adam with per-parameter moments and step counters.

    ``step`` only touches the parameters present in the gradient map, so one
    optimizer can update a subset (e.g. just the classifier head) without
    disturbing the moments of the rest.
    """

    def __init__(self, params, lr=1e-4, beta1=0.5, beta2=0.9, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {
            id(p): AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params
        }

    def step(self, grads):
        """Apply one update from ``{param: gradient array}``."""
        updates = []
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name or p!r}")
            updates.append((p, g))
        # validate everything before mutating anything
        for p, g in updates:
            st = self.state[id(p)]
            st.step_count += 1
            st.first_moment *= self.beta1
            st.first_moment += (1.0 - self.beta1) * g
            st.second_moment *= self.beta2
            st.second_moment += (1.0 - self.beta2) * g * g
            m_hat = st.first_moment / (1.0 - self.beta1**st.step_count)
            v_hat = st.second_moment / (1.0 - self.beta2**st.step_count)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
