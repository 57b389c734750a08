"""Attention-based time pooling: variable-length frame sequences to one
fixed-size vector.

Stages: (1) mean/std over time, (2) concatenate the broadcast statistics
onto every frame (D -> 3D), (3) one self-attention layer over the widened
sequence, with random element erasure on its input during training,
(4) mean/std of the attended sequence (-> 6D), (5) linear reduction back
to D. The attention uses no positional encoding, so the pooled output is
permutation-invariant over time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptySequenceError
from ..nn import tensor as T
from ..nn.layers import Linear, MultiHeadSelfAttention, ParamStore
from ..nn.tensor import Tensor

STD_EPS = 1e-5


@dataclass(frozen=True)
class PoolingConfig:
    heads: int = 4
    mask_prob: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.mask_prob <= 0.5:
            raise ValueError(f"mask_prob {self.mask_prob} outside [0, 0.5]")


class TimePool:
    def __init__(self, store: ParamStore, name: str, dim: int, cfg: PoolingConfig, rng: np.random.Generator):
        cfg.validate()
        self.dim = dim
        self.mask_prob = cfg.mask_prob
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", 3 * dim, cfg.heads, rng)
        self.reduce = Linear(store, f"{name}.reduce", 6 * dim, dim, rng)

    def __call__(
        self,
        frames: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        if frames.ndim != 3:
            raise EmptySequenceError(f"expected (B, T, D) frames, got {frames.shape}")
        b, t, d = frames.shape
        if t < 1:
            raise EmptySequenceError("cannot pool an empty sequence")
        mu = T.mean(frames, axis=1, keepdims=True)
        sigma = T.std(frames, axis=1, eps=STD_EPS, keepdims=True)
        zeros = Tensor(np.zeros((b, t, d), dtype=frames.dtype))
        widened = T.concat([frames, T.add(mu, zeros), T.add(sigma, zeros)], axis=-1)
        if training and self.mask_prob > 0.0:
            widened = T.dropout(widened, self.mask_prob, rng, training=True)
        attended = self.attn(widened, training=training, rng=rng)
        mu2 = T.mean(attended, axis=1)
        sigma2 = T.std(attended, axis=1, eps=STD_EPS)
        return self.reduce(T.concat([mu2, sigma2], axis=-1))
