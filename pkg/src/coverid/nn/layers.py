"""Parameter management and the layer building blocks of the encoder.

Layers register their tensors in a `ParamStore` under hierarchical dotted
names at construction time, which gives checkpoints a stable naming scheme
for free. Non-trainable state (BatchNorm running statistics) lives in a
separate buffer map on the store so it can be checkpointed without
pretending to be a parameter.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Ordered, uniquely named map of trainable tensors plus buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(data, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers flattened for serialization."""
        out = {name: t.data for name, t in self._params.items()}
        for name, arr in self.buffers.items():
            out[f"buffer.{name}"] = arr
        out["meta.step_count"] = np.asarray([self.step_count], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ShapeMismatchError(
                    f"checkpoint param {name!r}: stored {src.shape}, model {t.data.shape}"
                )
            t.data = src.astype(self.dtype)
        for name, arr in self.buffers.items():
            src = arrays[f"buffer.{name}"]
            if src.shape != arr.shape:
                raise ShapeMismatchError(f"checkpoint buffer {name!r} shape mismatch")
            arr[...] = src
        if "meta.step_count" in arrays:
            self.step_count = int(arrays["meta.step_count"][0])


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Linear:
    def __init__(self, store: ParamStore, name: str, din: int, dout: int, rng: np.random.Generator):
        self.w = store.add(f"{name}.w", _glorot(rng, din, dout, (din, dout)))
        self.b = store.add(f"{name}.b", np.zeros(dout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim))
        self.beta = store.add(f"{name}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm1d:
    """Channel-wise BatchNorm. Accepts (N, C) or (B, T, C); the latter is
    normalized over both batch and time."""

    def __init__(self, store: ParamStore, name: str, channels: int, momentum: float = 0.1):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels))
        self.momentum = momentum
        self.channels = channels

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim == 2:
            return T.batch_norm(
                x, self.gamma, self.beta, self.running_mean, self.running_var,
                training, momentum=self.momentum,
            )
        b, t, c = x.shape
        flat = T.reshape(x, (b * t, c))
        y = T.batch_norm(
            flat, self.gamma, self.beta, self.running_mean, self.running_var,
            training, momentum=self.momentum,
        )
        return T.reshape(y, (b, t, c))


class Conv1d:
    def __init__(
        self, store: ParamStore, name: str, cin: int, cout: int, kernel: int,
        stride: int, padding: int, rng: np.random.Generator,
    ):
        fan_in = cin * kernel
        self.w = store.add(f"{name}.w", _glorot(rng, fan_in, cout, (cout, cin, kernel)))
        self.b = store.add(f"{name}.b", np.zeros(cout))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class DepthwiseConv1d:
    def __init__(self, store: ParamStore, name: str, channels: int, kernel: int, rng: np.random.Generator):
        self.w = store.add(f"{name}.w", _glorot(rng, kernel, kernel, (channels, kernel)))
        self.b = store.add(f"{name}.b", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return T.depthwise_conv1d(x, self.w, self.b)


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over (B, T, D) sequences.

    `mask` is a boolean (T, T) or (B, T, T) array where True marks blocked
    key positions; blocked positions get exactly zero attention weight.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ShapeMismatchError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(store, f"{name}.q", dim, dim, rng)
        self.wk = Linear(store, f"{name}.k", dim, dim, rng)
        self.wv = Linear(store, f"{name}.v", dim, dim, rng)
        self.wo = Linear(store, f"{name}.out", dim, dim, rng)

    def __call__(
        self,
        x: Tensor,
        mask: np.ndarray | None = None,
        dropout_p: float = 0.0,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeMismatchError(f"attention input {x.shape}, expected (B, T, {self.dim})")
        b, t, d = x.shape
        h, hd = self.heads, self.head_dim

        def split_heads(y: Tensor) -> Tensor:
            return T.transpose(T.reshape(y, (b, t, h, hd)), (0, 2, 1, 3))

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.ndim == 2:
                mask = mask[None, None, :, :]
            elif mask.ndim == 3:
                mask = mask[:, None, :, :]
            else:
                raise ShapeMismatchError("mask must be (T, T) or (B, T, T)")
            scores = T.masked_fill_logits(scores, np.broadcast_to(mask, scores.shape))
        weights = T.softmax(scores, axis=-1)
        weights = T.dropout(weights, dropout_p, rng, training)
        ctx = T.matmul(weights, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.wo(ctx)
