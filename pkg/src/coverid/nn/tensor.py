"""Dense-tensor compute with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array plus an optional gradient buffer. Every
primitive builds the forward value eagerly and registers a closure that
propagates exact analytic gradients when `backward()` walks the graph in
reverse topological order. float32 is the training default; float64 is
used by the finite-difference tests, where central differences need the
extra headroom.

Every primitive checks its output for NaN/Inf. The check is a single
float64 reduction (`arr.sum()`), which is cheap and cannot miss: any NaN
poisons the sum, and +Inf/-Inf either survive or cancel to NaN, never to
a finite value.
"""

from __future__ import annotations

import numpy as np

from ..errors import (
    FullyMaskedRowError,
    NonFiniteValueError,
    ShapeMismatchError,
)

_NEG_FILL = -1e30  # additive mask value; large enough to zero a softmax row entry


def _check_finite(data: np.ndarray, op: str) -> None:
    if data.size and not np.isfinite(data.sum(dtype=np.float64)):
        raise NonFiniteValueError(f"non-finite values produced by {op}")


class Tensor:
    """A numpy buffer with an optional grad slot and a backward closure."""

    __slots__ = (
        "data", "grad", "requires_grad", "_backward", "_parents", "name", "_grad_owned",
    )

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name
        self._grad_owned = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- grad management -----------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None
        self._grad_owned = False

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        """Accumulate a gradient contribution.

        The first contribution is borrowed by reference (contributions are
        never mutated after donation, since a node's own backward runs only
        once all of its incoming grads have arrived); later contributions
        allocate a privately owned sum, so the borrowed buffer is never
        written to.
        """
        if self.grad is None:
            if g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape)
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def backward(self) -> None:
        """Reverse-mode sweep seeded with d(self)/d(self) = 1."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # convenience operators used in a few composition helpers
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _make(-a.data, (a,), bw, "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw, "div")


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _make(a.data * c, (a,), bw, "scale")


def add_const(a: Tensor, c) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)

    return _make(a.data + c, (a,), bw, "add_const")


def power(a: Tensor, exponent: float) -> Tensor:
    """a ** exponent for a constant exponent. Expects a >= 0 for fractional
    exponents; exponent 0 yields ones with zero gradient."""
    y = a.data ** exponent

    def bw(g):
        if a.requires_grad:
            if exponent == 0:
                return
            a.accumulate_grad(g * exponent * a.data ** (exponent - 1))

    return _make(y, (a,), bw, "power")


def log(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _make(np.log(a.data), (a,), bw, "log")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * y)

    return _make(y, (a,), bw, "exp")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / y)

    return _make(y, (a,), bw, "sqrt")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient flows only where a > floor."""
    mask = a.data > floor

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return _make(np.maximum(a.data, floor), (a,), bw, "clamp_min")


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return _make(a.data * mask, (a,), bw, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # stable split form: no exp overflow on either tail
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * y * (1.0 - y))

    return _make(y, (a,), bw, "sigmoid")


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x), the activation used in the convolution stacks."""
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60, 60)))
    y = a.data * s

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * (s + a.data * s * (1.0 - s)))

    return _make(y, (a,), bw, "swish")


def glu(a: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: split in half along `axis`, first * sigmoid(second)."""
    n = a.shape[axis]
    if n % 2 != 0:
        raise ShapeMismatchError(f"glu axis size {n} is odd")
    h = n // 2
    x = np.take(a.data, range(h), axis=axis)
    gate = np.take(a.data, range(h, n), axis=axis)
    s = 1.0 / (1.0 + np.exp(-np.clip(gate, -60, 60)))
    y = x * s

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            sl: list = [slice(None)] * a.ndim
            sl[axis] = slice(0, h)
            ga[tuple(sl)] = g * s
            sl[axis] = slice(h, n)
            ga[tuple(sl)] = g * x * s * (1.0 - s)
            a.accumulate_grad(ga)

    return _make(y, (a,), bw, "glu")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout. Identity when p == 0 or in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ShapeMismatchError(f"dropout p={p} outside [0, 1)")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    draw = rng.random(a.shape, dtype=np.float32 if a.dtype == np.float32 else np.float64)
    keep = (draw >= p).astype(a.dtype)
    keep /= 1.0 - p

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * keep)

    return _make(a.data * keep, (a,), bw, "dropout")


# ----------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl: list = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat"
    )


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    sl: list = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[sl] = g
            a.accumulate_grad(ga)

    return _make(a.data[sl], (a,), bw, "narrow")


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def std(a: Tensor, axis, eps: float = 1e-5, keepdims: bool = False) -> Tensor:
    """sqrt(mean((x - mean)^2) + eps) along `axis`; eps keeps the gradient
    finite on constant inputs."""
    mu = mean(a, axis=axis, keepdims=True)
    d = sub(a, mu)
    var = mean(mul(d, d), axis=axis, keepdims=keepdims)
    return sqrt(add_const(var, eps))


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis. Gradient routes to the first argmax on ties."""
    idx = a.data.argmax(axis=axis)
    y = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)

    def bw(g):
        if not a.requires_grad:
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), g, axis=axis)
        a.accumulate_grad(ga)

    return _make(y if keepdims else np.squeeze(y, axis=axis), (a,), bw, "reduce_max")


def reduce_min(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return neg(reduce_max(neg(a), axis=axis, keepdims=keepdims))


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Pick a[i, indices[i]] from a 2-D tensor; returns shape (rows,)."""
    if a.ndim != 2:
        raise ShapeMismatchError("gather_rows expects a 2-D tensor")
    rows = np.arange(a.shape[0])
    indices = np.asarray(indices)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, (rows, indices), g)
            a.accumulate_grad(ga)

    return _make(a.data[rows, indices], (a,), bw, "gather_rows")


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics on >= 2-D operands, including broadcast batching."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dims {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.ndim == 2 and g.ndim > 2:
                # (..., m, k) @ (k, n): fold the batch into one GEMM instead
                # of materializing per-batch weight gradients
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
                b.accumulate_grad(gb)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate_grad(y * (g - dot))

    return _make(y, (a,), bw, "softmax")


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis, then affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatchError("layer_norm affine params must match last dim")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
            x.accumulate_grad(gx)

    return _make(y, (x, gamma, beta), bw, "layer_norm")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """BatchNorm over a (N, C) tensor. Training mode normalizes with batch
    statistics and updates the running buffers in place; eval mode is a
    deterministic affine map using the running buffers."""
    if x.ndim != 2:
        raise ShapeMismatchError("batch_norm expects (N, C) input")
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            if training:
                gx = inv * (
                    gh - gh.mean(axis=0) - xhat * (gh * xhat).mean(axis=0)
                )
            else:
                gx = gh * inv
            x.accumulate_grad(gx)

    return _make(y, (x, gamma, beta), bw, "batch_norm")


# ----------------------------------------------------------------------
# convolutions
# ----------------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Time-axis convolution of x (B, T, Cin) with w (Cout, Cin, K).

    Output length is floor((T + 2*padding - K) / stride) + 1. Implemented
    as a strided window view plus one GEMM, so BLAS carries the load.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeMismatchError("conv1d expects x (B,T,Cin) and w (Cout,Cin,K)")
    bsz, t, cin = x.shape
    cout, w_cin, k = w.shape
    if w_cin != cin:
        raise ShapeMismatchError(f"conv1d channels: x has {cin}, w has {w_cin}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    t_out = (t + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatchError(f"conv1d output length {t_out} < 1")
    # (B, T_avail, Cin, K) windows, subsampled by stride along time
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride][:, :t_out]
    cols = win.reshape(bsz * t_out, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    y = (cols @ wmat.T + b.data).reshape(bsz, t_out, cout)

    def bw(g):
        g2 = g.reshape(bsz * t_out, cout)
        if b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0))
        if w.requires_grad:
            w.accumulate_grad((g2.T @ cols).reshape(cout, cin, k))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(bsz, t_out, cin, k)
            gxp = np.zeros_like(xp)
            for tap in range(k):
                gxp[:, tap : tap + stride * t_out : stride, :] += gcols[:, :, :, tap]
            if padding:
                gxp = gxp[:, padding : padding + t, :]
            x.accumulate_grad(gxp)

    return _make(y, (x, w, b), bw, "conv1d")


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel 'same' convolution of x (B, T, C) with w (C, K), stride 1.

    K may be even; padding is split (K-1)//2 left, K//2 right.
    """
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeMismatchError("depthwise_conv1d expects x (B,T,C) and w (C,K)")
    bsz, t, c = x.shape
    wc, k = w.shape
    if wc != c:
        raise ShapeMismatchError(f"depthwise channels: x has {c}, w has {wc}")
    left, right = (k - 1) // 2, k // 2
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    y = np.zeros_like(x.data)
    for tap in range(k):
        y += xp[:, tap : tap + t, :] * w.data[:, tap]
    y = y + b.data

    def bw(g):
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 1)))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for tap in range(k):
                gw[:, tap] = (xp[:, tap : tap + t, :] * g).sum(axis=(0, 1))
            w.accumulate_grad(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for tap in range(k):
                gxp[:, tap : tap + t, :] += g * w.data[:, tap]
            x.accumulate_grad(gxp[:, left : left + t, :])

    return _make(y, (x, w, b), bw, "depthwise_conv1d")


# ----------------------------------------------------------------------
# attention
# ----------------------------------------------------------------------

def masked_fill_logits(scores: Tensor, blocked: np.ndarray) -> Tensor:
    """Push blocked (True) positions of attention logits to -1e30 so that
    softmax assigns them zero weight. Raises if any query row is fully
    blocked."""
    blocked = np.asarray(blocked, dtype=bool)
    if blocked.all(axis=-1).any():
        raise FullyMaskedRowError("attention mask blocks every key for some query")
    fill = Tensor(np.where(blocked, np.asarray(_NEG_FILL, dtype=scores.dtype), 0).astype(scores.dtype))
    return add(scores, fill)
