"""The chunk encoder: input BatchNorm, x4 trainable downsampling, a stack
of Conformer blocks, attentive time pooling, linear bottleneck, and a
classification head.

The downsampler is two (kernel 3, stride 2, padding 1) convolutions with
swish, so a T-frame input becomes ceil(ceil(T/2)/2) frames. Blocks use
pre-norm residuals with half-step feed-forwards, self-attention, and a
depthwise convolution module, closing with a final layer norm. Absolute
sinusoidal positions are added once, before the first block.

Two embeddings come out per chunk: the pooled vector before the
bottleneck (used by the triplet term) and the bottleneck output (used by
the classification and center terms; its L2-normalized copy is the
retrieval embedding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatchError, TooShortError
from ..nn import tensor as T
from ..nn.layers import (
    BatchNorm1d,
    Conv1d,
    DepthwiseConv1d,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    ParamStore,
)
from ..nn.tensor import Tensor
from .pooling import PoolingConfig, TimePool


@dataclass(frozen=True)
class EncoderConfig:
    """Toy scale by default; `paper_scale` gives the full-size network."""

    n_classes: int
    n_blocks: int = 2
    model_dim: int = 64
    heads: int = 4
    conv_kernel: int = 15
    ff_expansion: int = 4
    bottleneck_dim: int = 32
    input_bins: int = 96
    dropout: float = 0.1
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    downsample_factor: int = 4  # fixed by the two stride-2 conv layers

    @classmethod
    def paper_scale(cls, n_classes: int, bottleneck_dim: int = 128) -> "EncoderConfig":
        return cls(
            n_classes=n_classes, n_blocks=6, model_dim=256, heads=4,
            bottleneck_dim=bottleneck_dim,
        )

    def validate(self) -> None:
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.downsample_factor != 4:
            raise ValueError("downsample_factor is fixed at 4")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.pooling.validate()


@dataclass
class EmbeddingPair:
    """Pooled embedding before the bottleneck and the unit-normalized
    retrieval embedding after it."""

    pre_bottleneck: np.ndarray
    post_bottleneck: np.ndarray


def l2_normalize(v: np.ndarray, axis: int = -1, eps: float = 1e-12) -> np.ndarray:
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    return v / np.maximum(norm, eps)


class FeedForward:
    def __init__(self, store, name, dim, expansion, dropout, rng):
        self.ln = LayerNorm(store, f"{name}.ln", dim)
        self.lin1 = Linear(store, f"{name}.lin1", dim, dim * expansion, rng)
        self.lin2 = Linear(store, f"{name}.lin2", dim * expansion, dim, rng)
        self.dropout = dropout

    def __call__(self, x, training, rng):
        h = T.swish(self.lin1(self.ln(x)))
        h = T.dropout(h, self.dropout, rng, training)
        h = self.lin2(h)
        return T.dropout(h, self.dropout, rng, training)


class ConvModule:
    def __init__(self, store, name, dim, kernel, dropout, rng):
        self.ln = LayerNorm(store, f"{name}.ln", dim)
        self.pw1 = Linear(store, f"{name}.pw1", dim, 2 * dim, rng)
        self.depthwise = DepthwiseConv1d(store, f"{name}.dw", dim, kernel, rng)
        self.bn = BatchNorm1d(store, f"{name}.bn", dim)
        self.pw2 = Linear(store, f"{name}.pw2", dim, dim, rng)
        self.dropout = dropout

    def __call__(self, x, training, rng):
        h = T.glu(self.pw1(self.ln(x)), axis=-1)
        h = self.depthwise(h)
        h = T.swish(self.bn(h, training))
        h = self.pw2(h)
        return T.dropout(h, self.dropout, rng, training)


class ConformerBlock:
    """ffn/2 -> self-attention -> conv module -> ffn/2, pre-norm residuals,
    final layer norm."""

    def __init__(self, store, name, dim, heads, conv_kernel, ff_expansion, dropout, rng):
        self.ffn1 = FeedForward(store, f"{name}.ffn1", dim, ff_expansion, dropout, rng)
        self.attn_ln = LayerNorm(store, f"{name}.attn_ln", dim)
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", dim, heads, rng)
        self.conv = ConvModule(store, f"{name}.conv", dim, conv_kernel, dropout, rng)
        self.ffn2 = FeedForward(store, f"{name}.ffn2", dim, ff_expansion, dropout, rng)
        self.final_ln = LayerNorm(store, f"{name}.final_ln", dim)
        self.dropout = dropout

    def __call__(self, x, training, rng):
        x = T.add(x, T.scale(self.ffn1(x, training, rng), 0.5))
        a = self.attn(self.attn_ln(x), dropout_p=self.dropout, rng=rng, training=training)
        x = T.add(x, T.dropout(a, self.dropout, rng, training))
        x = T.add(x, self.conv(x, training, rng))
        x = T.add(x, T.scale(self.ffn2(x, training, rng), 0.5))
        return self.final_ln(x)


class ChunkEncoder:
    def __init__(self, cfg: EncoderConfig, store: ParamStore, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.store = store
        d = cfg.model_dim
        self.input_bn = BatchNorm1d(store, "input_bn", cfg.input_bins)
        self.ds1 = Conv1d(store, "down.conv1", cfg.input_bins, d, 3, 2, 1, rng)
        self.ds2 = Conv1d(store, "down.conv2", d, d, 3, 2, 1, rng)
        self.blocks = [
            ConformerBlock(
                store, f"blocks.{i}", d, cfg.heads, cfg.conv_kernel,
                cfg.ff_expansion, cfg.dropout, rng,
            )
            for i in range(cfg.n_blocks)
        ]
        self.pool = TimePool(store, "pool", d, cfg.pooling, rng)
        self.bottleneck = Linear(store, "bottleneck", d, cfg.bottleneck_dim, rng)
        self.classifier = Linear(store, "classifier", cfg.bottleneck_dim, cfg.n_classes, rng)
        self._pos_cache: dict[int, np.ndarray] = {}

    # -- pieces ----------------------------------------------------------
    def downsample(self, x: Tensor, training: bool) -> Tensor:
        """(B, T, F) -> (B, ~T/4, model_dim); needs T >= 4."""
        if x.ndim != 3:
            raise ShapeMismatchError(f"expected (B, T, F) input, got {x.shape}")
        if x.shape[1] < 4:
            raise TooShortError(f"need at least 4 frames, got {x.shape[1]}")
        h = T.swish(self.ds1(x))
        return T.swish(self.ds2(h))

    def _positions(self, t: int) -> np.ndarray:
        if t not in self._pos_cache:
            d = self.cfg.model_dim
            pos = np.arange(t)[:, None]
            dim = np.arange(0, d, 2)[None, :]
            angles = pos / np.power(10000.0, dim / d)
            table = np.zeros((t, d))
            table[:, 0::2] = np.sin(angles)
            table[:, 1::2] = np.cos(angles)
            self._pos_cache[t] = table.astype(self.store.dtype)
        return self._pos_cache[t]

    # -- full forward ------------------------------------------------------
    def forward(
        self,
        feat: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> dict:
        """Returns pre-bottleneck embedding, raw and normalized bottleneck
        embeddings, and class logits."""
        if feat.ndim != 3 or feat.shape[-1] != self.cfg.input_bins:
            raise ShapeMismatchError(
                f"expected (B, T, {self.cfg.input_bins}) features, got {feat.shape}"
            )
        b, t, f = feat.shape
        x = self.input_bn(feat, training)
        x = self.downsample(x, training)
        x = T.add(x, Tensor(self._positions(x.shape[1])))
        for block in self.blocks:
            x = block(x, training, rng)
        pre = self.pool(x, training=training, rng=rng)
        post_raw = self.bottleneck(pre)
        logits = self.classifier(post_raw)
        return {
            "pre": pre,
            "post_raw": post_raw,
            "post_norm": l2_normalize(post_raw.data),
            "logits": logits,
        }

    def embed(self, feat_frames: np.ndarray) -> EmbeddingPair:
        """Eval-mode embedding of a single chunk (T x F)."""
        out = self.forward(Tensor(feat_frames[None, ...].astype(self.store.dtype)), training=False)
        return EmbeddingPair(
            pre_bottleneck=out["pre"].data[0].copy(),
            post_bottleneck=out["post_norm"][0].copy(),
        )

    def embed_batch(self, feats: np.ndarray) -> np.ndarray:
        """Eval-mode normalized retrieval embeddings for (B, T, F) chunks."""
        out = self.forward(Tensor(feats.astype(self.store.dtype)), training=False)
        return out["post_norm"].copy()


def build_encoder(cfg: EncoderConfig, seed: int = 0, dtype=np.float32) -> tuple[ChunkEncoder, ParamStore]:
    store = ParamStore(dtype=dtype)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    model = ChunkEncoder(cfg, store, rng)
    return model, store
