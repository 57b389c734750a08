"""Adam optimizer and the step-decay learning-rate schedule."""

from __future__ import annotations

import numpy as np

from ..errors import MissingGradError
from .layers import ParamStore


class Adam:
    """Adam with bias correction. Moment buffers are keyed by parameter
    name and created lazily on the first step."""

    def __init__(self, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, lr: float) -> None:
        """One update over every parameter in the store; grads must all be
        populated and are zeroed afterwards."""
        params.step_count += 1
        t = params.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            if p.grad is None:
                raise MissingGradError(f"parameter {name!r} has no gradient")
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
        params.zero_grads()


def adam_step(
    params: ParamStore,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    state: Adam | None = None,
) -> Adam:
    """Functional wrapper around `Adam.step`; returns the optimizer state so
    callers can thread it through successive steps."""
    if state is None:
        state = Adam(betas=betas, eps=eps)
    state.step(params, lr)
    return state


def lr_schedule(step: int, base_lr: float = 0.001, decay: float = 0.95, every: int = 1000) -> float:
    """base_lr * decay ** floor(step / every)."""
    if step < 0:
        raise ValueError(f"negative step {step}")
    return base_lr * decay ** (step // every)
