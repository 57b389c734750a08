from .encoder import ChunkEncoder, EmbeddingPair, EncoderConfig, build_encoder, l2_normalize
from .pooling import PoolingConfig, TimePool

__all__ = [
    "ChunkEncoder",
    "EmbeddingPair",
    "EncoderConfig",
    "build_encoder",
    "l2_normalize",
    "PoolingConfig",
    "TimePool",
]
