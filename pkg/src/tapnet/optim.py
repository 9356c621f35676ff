"""Adam with bias correction and a step learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError


def lr_schedule(step: int, initial: float = 1e-3, decay_every: int = 40_000, factor: float = 0.5) -> float:
    """Learning rate after ``step`` episodes: ``initial * factor ** (step // decay_every)``."""
    if decay_every < 1 or not 0 < factor <= 1:
        raise ConfigError(f"bad schedule: decay_every={decay_every}, factor={factor}")
    return initial * factor ** (step // decay_every)


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, lr: float):
        """Update ``params`` (name -> Tensor) in place from their ``.grad`` slots.

        A missing gradient counts as zero. Raises before touching anything if
        any gradient is non-finite.
        """
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        grads = {}
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name}")
            grads[name] = g

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
