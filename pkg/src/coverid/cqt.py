"""Constant-Q transform features and fixed-length chunking.

Geometry: 12 bins/octave over 8 octaves (96 bins) from C1 (32.70 Hz),
so a pitch transposition by k semitones is a shift of k bins along the
frequency axis. Frames are taken every 0.04 s (25 fps). Each bin gets a
Hann-windowed complex atom whose length follows the constant-Q rule
N_k = Q * sr / f_k, floored at 0.08 s so high bins keep a usable window.

The transform runs frame-wise: one real FFT per frame, then a sparse
spectral-kernel product (one precomputed sparse row per bin). Magnitudes
are compressed as log(1 + mag / 1e-5); since magnitudes are non-negative
the result is non-negative with an exact floor of 0 for silence, which is
also the fill value used by feature-domain augmentation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import sparse

from .audio import AudioClip, resample
from .errors import DecodeError, TooShortError

# C1 in twelve-tone equal temperament at A4 = 440 Hz
C1_HZ = 440.0 * 2.0 ** (-45.0 / 12.0)

#: value representing "no energy" after log compression
LOG_FLOOR = 0.0


@dataclass(frozen=True)
class CqtConfig:
    sample_rate: int = 16_000
    bins: int = 96
    bins_per_octave: int = 12
    f_min: float = C1_HZ
    hop_s: float = 0.04
    min_window_s: float = 0.08
    mag_eps: float = 1e-5
    kernel_threshold: float = 5e-4

    @property
    def hop(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.hop_s

    def bin_frequency(self, k: int) -> float:
        return self.f_min * 2.0 ** (k / self.bins_per_octave)


@dataclass
class CqtFeature:
    """T x F matrix of non-negative log-magnitudes for one track."""

    frames: np.ndarray
    frame_rate: float
    bins_per_octave: int
    f_min: float
    track_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise DecodeError("feature frames must be 2-D (time x frequency)")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def bins(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate


@lru_cache(maxsize=4)
def _kernel_bank(cfg: CqtConfig) -> tuple[sparse.csr_matrix, int, int]:
    """Sparse conjugate spectral kernels: (bins x rfft_bins), fft size, and
    the longest atom length."""
    q = 1.0 / (2.0 ** (1.0 / cfg.bins_per_octave) - 1.0)
    sr = cfg.sample_rate
    min_win = int(round(cfg.min_window_s * sr))
    lengths = [
        max(int(round(q * sr / cfg.bin_frequency(k))), min_win) for k in range(cfg.bins)
    ]
    n_max = max(lengths)
    nfft = 1 << (n_max - 1).bit_length()
    n_rbins = nfft // 2 + 1
    rows = []
    for k in range(cfg.bins):
        n_k = lengths[k]
        window = np.hanning(n_k)
        window /= window.sum()
        t = np.arange(n_k) - (n_k - 1) / 2.0
        atom = window * np.exp(2j * np.pi * cfg.bin_frequency(k) * t / sr)
        buf = np.zeros(nfft, dtype=np.complex128)
        start = (nfft - n_k) // 2
        buf[start : start + n_k] = atom
        spec = np.conj(np.fft.fft(buf))[:n_rbins] / nfft
        mag = np.abs(spec)
        spec[mag < cfg.kernel_threshold * mag.max()] = 0.0
        rows.append(sparse.csr_matrix(spec))
    bank = sparse.vstack(rows).tocsr()
    return bank, nfft, n_max


def compute_cqt(clip: AudioClip, cfg: CqtConfig = CqtConfig()) -> CqtFeature:
    """Log-magnitude CQT of a clip. Deterministic: no dithering, no
    stochastic rounding; identical input yields bit-identical output."""
    if clip.sample_rate != cfg.sample_rate:
        clip = resample(clip, cfg.sample_rate)
    bank, nfft, n_max = _kernel_bank(cfg)
    x = clip.samples.astype(np.float64)
    if len(x) < n_max:
        raise TooShortError(
            f"clip {clip.track_id!r}: {len(x)} samples < longest analysis window {n_max}"
        )
    hop = cfg.hop
    n_frames = 1 + (len(x) - 1) // hop
    half = nfft // 2
    padded = np.pad(x, (half, half + nfft))
    windows = np.lib.stride_tricks.sliding_window_view(padded, nfft)[: n_frames * hop : hop]
    mags = np.empty((n_frames, cfg.bins), dtype=np.float64)
    block = 512  # bounds the rfft workspace to ~70 MB
    for lo in range(0, n_frames, block):
        spectra = np.fft.rfft(windows[lo : lo + block], axis=1)
        mags[lo : lo + block] = np.abs((bank @ spectra.T).T)
    feat = np.log1p(mags / cfg.mag_eps).astype(np.float32)
    return CqtFeature(
        frames=feat,
        frame_rate=cfg.frame_rate,
        bins_per_octave=cfg.bins_per_octave,
        f_min=cfg.f_min,
        track_id=clip.track_id,
    )


@dataclass(frozen=True)
class FeatureChunk:
    start_s: float
    frames: np.ndarray


def chunk_feature(feat: CqtFeature, chunk_s: float, hop_s: float) -> list[FeatureChunk]:
    """Cut a feature into chunks starting at 0, hop_s, 2*hop_s, ...

    A trailing partial chunk is kept iff it covers at least chunk_s / 2;
    shorter tails are dropped. Returns an empty list when even the first
    chunk would be shorter than chunk_s / 2.
    """
    if chunk_s <= 0 or hop_s <= 0 or hop_s > chunk_s:
        raise ValueError(f"bad chunking: chunk_s={chunk_s}, hop_s={hop_s}")
    t_total = feat.n_frames
    chunk_frames = int(round(chunk_s * feat.frame_rate))
    out: list[FeatureChunk] = []
    i = 0
    while True:
        start = int(i * hop_s * feat.frame_rate + 1e-9)
        if start >= t_total:
            break
        piece = feat.frames[start : start + chunk_frames]
        if len(piece) + 1e-9 >= chunk_frames / 2:
            out.append(FeatureChunk(start_s=float(i * hop_s), frames=piece))
        i += 1
    return out


# ----------------------------------------------------------------------
# "CQTF1" feature file format
# ----------------------------------------------------------------------
# little-endian: magic "CQTF", u32 version=1, u32 T, u32 F, f32 frame_rate,
# then T*F float32 values in row-major order.

_CQTF_MAGIC = b"CQTF"
_CQTF_VERSION = 1


def write_feature(path: str | Path, feat: CqtFeature) -> None:
    frames = np.ascontiguousarray(feat.frames, dtype=np.float32)
    t, f = frames.shape
    header = _CQTF_MAGIC + struct.pack("<IIIf", _CQTF_VERSION, t, f, feat.frame_rate)
    Path(path).write_bytes(header + frames.tobytes())


def read_feature(
    path: str | Path,
    track_id: str | None = None,
    bins_per_octave: int = 12,
    f_min: float = C1_HZ,
) -> CqtFeature:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != _CQTF_MAGIC:
        raise DecodeError(f"{path}: bad feature magic {buf[:4]!r}")
    version, t, f, frame_rate = struct.unpack_from("<IIIf", buf, 4)
    if version != _CQTF_VERSION:
        raise DecodeError(f"{path}: unsupported feature version {version}")
    expected = 20 + 4 * t * f
    if len(buf) != expected:
        raise DecodeError(f"{path}: size {len(buf)} != expected {expected}")
    frames = np.frombuffer(buf, dtype="<f4", count=t * f, offset=20).reshape(t, f).copy()
    return CqtFeature(
        frames=frames,
        frame_rate=float(frame_rate),
        bins_per_octave=bins_per_octave,
        f_min=f_min,
        track_id=track_id or path.stem,
    )
