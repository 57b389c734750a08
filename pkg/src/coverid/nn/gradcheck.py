"""Central finite-difference gradient checking.

Used by the test suite to validate every primitive and every composite
module against numeric derivatives. Functions under test must be
deterministic: anything stochastic has to rebuild its generator from a
fixed seed on each call.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def check_gradients(
    f: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    max_elements: int = 400,
    seed: int = 0,
) -> float:
    """Return the max relative error between analytic and central-difference
    gradients of scalar-valued `f` over all checked input elements.

    Inputs must be float64. For tensors larger than `max_elements`, a fixed
    random subset of coordinates is checked.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise ValueError("gradient checks require float64 inputs")

    out = f(inputs)
    if out.size != 1:
        raise ValueError("f must return a scalar tensor")
    out.backward()
    analytic = [
        x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in inputs
    ]
    for x in inputs:
        x.grad = None

    rng = np.random.default_rng(seed)
    worst = 0.0
    for xi, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        flat = x.data.reshape(-1)
        n = flat.size
        coords = (
            np.arange(n)
            if n <= max_elements
            else rng.choice(n, size=max_elements, replace=False)
        )
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = f(inputs).item()
            flat[c] = orig - h
            down = f(inputs).item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[xi].reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
