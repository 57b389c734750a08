"""Audio ingestion: WAV decoding, downmixing, resampling, peak control.

Only mono PCM decode is in scope; multi-channel files are downmixed by
channel mean. 16 kHz is the working rate everywhere downstream: it covers
the 8-octave analysis range (top bin just under 8 kHz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import DecodeError, EmptyAudioError

DEFAULT_SAMPLE_RATE = 16_000


@dataclass
class AudioClip:
    """Mono samples in [-1, 1] at a known rate."""

    samples: np.ndarray
    sample_rate: int
    track_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise DecodeError(f"clip {self.track_id!r}: expected mono 1-D samples")
        if self.samples.size == 0:
            raise EmptyAudioError(f"clip {self.track_id!r} has zero samples")
        if not np.isfinite(self.samples.sum(dtype=np.float64)):
            raise DecodeError(f"clip {self.track_id!r} contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


_PCM_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_audio(path: str | Path, target_rate: int = DEFAULT_SAMPLE_RATE, track_id: str | None = None) -> AudioClip:
    """Decode a WAV file to a mono float clip at `target_rate`.

    Multi-channel input is downmixed by channel mean. The result is
    peak-limited: samples are rescaled only if |peak| exceeds 1.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as e:
        raise DecodeError(f"{path}: {e}") from e
    if data.size == 0:
        raise EmptyAudioError(f"{path} decoded to zero samples")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype in _PCM_SCALE:
        samples = data.astype(np.float32) / _PCM_SCALE[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float32)
    else:
        raise DecodeError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    clip = AudioClip(samples, int(rate), track_id=track_id or path.stem)
    clip = resample(clip, target_rate)
    peak = float(np.abs(clip.samples).max())
    if peak > 1.0:
        clip.samples = clip.samples / peak
    return clip


def save_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM."""
    pcm = np.clip(clip.samples, -1.0, 1.0)
    wavfile.write(str(path), clip.sample_rate, (pcm * 32767.0).astype(np.int16))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError(f"target_rate {target_rate} must be positive")
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(clip.sample_rate, target_rate)
    out = resample_poly(clip.samples.astype(np.float64), target_rate // g, clip.sample_rate // g)
    return AudioClip(out.astype(np.float32), target_rate, track_id=clip.track_id)


def peak_normalize(samples: np.ndarray) -> np.ndarray:
    """Rescale so the peak is at most 1; silence passes through."""
    peak = float(np.abs(samples).max()) if samples.size else 0.0
    if peak > 1.0:
        return samples / peak
    return samples
