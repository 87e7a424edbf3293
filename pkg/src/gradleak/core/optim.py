from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError

DECAY_INTERVAL = 50


@dataclass
class AdamState:
    """Adam moments plus a step-decayed learning rate.

    The rate used for the update taken after ``step`` completed steps is
    ``lr * gamma ** (step // decay_interval)``.
    """

    lr: float
    gamma: float = 1.0
    decay_interval: int = DECAY_INTERVAL
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"decay gamma must lie in (0, 1], got {self.gamma}")
        if self.decay_interval < 1:
            raise ValueError("decay interval must be a positive integer")

    @property
    def effective_lr(self):
        return self.lr * self.gamma ** (self.step // self.decay_interval)


def adam_step(state: AdamState, variable: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """One Adam update; returns the new variable and advances ``state``."""
    variable = np.asarray(variable, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if variable.shape != gradient.shape:
        raise ValueError(f"adam_step: variable {variable.shape} vs gradient {gradient.shape}")
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteError("adam_step: gradient has non-finite entries")
    if state.m is None:
        state.m = np.zeros_like(variable)
        state.v = np.zeros_like(variable)
    elif state.m.shape != variable.shape:
        raise ValueError(f"adam_step: state shaped {state.m.shape}, variable {variable.shape}")
    lr = state.effective_lr
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1 - state.beta2) * gradient * gradient
    m_hat = state.m / (1 - state.beta1**t)
    v_hat = state.v / (1 - state.beta2**t)
    return variable - lr * m_hat / (np.sqrt(v_hat) + state.eps)
