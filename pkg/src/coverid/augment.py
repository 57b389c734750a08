"""Training-time augmentation: noise mixing, volume, speed, pitch, masks.

Audio-domain augmentations (volume, speed, noise) run on the waveform
before feature extraction; feature-domain ones (pitch roll, rectangle
masks) run on the CQT matrix, where a pitch shift is just a roll along
the frequency axis. Speed change is a pitch-preserving phase-vocoder
time stretch.

Everything is pure given an explicit numpy Generator, so per-sample
augmentation can run in parallel workers as long as each worker owns its
own stream.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import AudioClip, peak_normalize
from .cqt import LOG_FLOOR, CqtConfig, CqtFeature, compute_cqt
from .errors import RatioOutOfRangeError, SilentSignalError


@dataclass(frozen=True)
class AugmentConfig:
    snr_db_range: tuple[float, float] = (-10.0, 30.0)
    volume_db_range: tuple[float, float] = (-6.0, 0.0)
    speed_range: tuple[float, float] = (0.8, 1.2)
    pitch_shift_bins: tuple[int, int] = (-5, 5)
    mask_count: int = 3
    mask_max_frames: int = 20
    mask_max_bins: int = 12
    # independent application probability per augmentation
    p_volume: float = 0.5
    p_speed: float = 0.5
    p_noise: float = 0.5
    p_pitch: float = 0.5
    p_mask: float = 0.5
    rng_seed: int = 0

    def validate(self) -> None:
        lo, hi = self.speed_range
        if not (0.0 < lo <= hi <= 2.0):
            raise ValueError(f"speed_range {self.speed_range} outside (0, 2]")
        if self.pitch_shift_bins[0] != -self.pitch_shift_bins[1]:
            raise ValueError("pitch_shift_bins must be symmetric around 0")
        for p in (self.p_volume, self.p_speed, self.p_noise, self.p_pitch, self.p_mask):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    def audio_domain_active(self) -> bool:
        return max(self.p_volume, self.p_speed, self.p_noise) > 0.0


# ----------------------------------------------------------------------
# waveform augmentations
# ----------------------------------------------------------------------

def mix_noise(clip: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Mix noise into the clip at the requested signal-to-noise ratio.

    Noise is looped or cropped to the clip length, scaled so that
    10*log10(P_clip / P_noise_scaled) == snr_db, added, and the mix is
    peak-limited back to <= 1.
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    sig = clip.samples.astype(np.float64)
    noi = noise.samples.astype(np.float64)
    if len(noi) < len(sig):
        noi = np.tile(noi, int(np.ceil(len(sig) / len(noi))))
    noi = noi[: len(sig)]
    p_sig = float(np.mean(sig**2))
    p_noi = float(np.mean(noi**2))
    if p_sig == 0.0 or p_noi == 0.0:
        raise SilentSignalError("cannot mix with a silent clip or silent noise")
    gain = np.sqrt(p_sig / (p_noi * 10.0 ** (snr_db / 10.0)))
    mixed = peak_normalize((sig + gain * noi).astype(np.float32))
    return AudioClip(mixed, clip.sample_rate, track_id=clip.track_id)


def change_volume(clip: AudioClip, gain_db: float) -> AudioClip:
    """Scale samples by 10^(gain_db/20); no re-normalization."""
    factor = 10.0 ** (gain_db / 20.0)
    return AudioClip(clip.samples * np.float32(factor), clip.sample_rate, clip.track_id)


def change_speed(
    clip: AudioClip, ratio: float, speed_range: tuple[float, float] | None = None
) -> AudioClip:
    """Pitch-preserving speed change: ratio > 1 plays faster (shorter).

    The hard bound is (0, 2]; pass `speed_range` to enforce a config's
    narrower sampling interval.
    """
    lo, hi = speed_range if speed_range is not None else (0.0, 2.0)
    if not (lo <= ratio <= hi and 0.0 < ratio <= 2.0):
        raise RatioOutOfRangeError(f"speed ratio {ratio} outside ({lo}, {hi}]")
    if ratio == 1.0:
        return clip
    stretched = _phase_vocoder_stretch(clip.samples.astype(np.float64), ratio)
    target_len = int(round(len(clip.samples) / ratio))
    if len(stretched) < target_len:
        stretched = np.pad(stretched, (0, target_len - len(stretched)))
    out = peak_normalize(stretched[:target_len].astype(np.float32))
    return AudioClip(out, clip.sample_rate, track_id=clip.track_id)


def _phase_vocoder_stretch(x: np.ndarray, rate: float, n_fft: int = 2048) -> np.ndarray:
    """Classic phase vocoder: resample the STFT along time at `rate` frames
    per output frame, propagating phase by the per-bin expected advance plus
    the wrapped deviation, then overlap-add."""
    hop = n_fft // 4
    window = np.hanning(n_fft)
    pad = n_fft // 2
    xp = np.pad(x, (pad, pad))
    n_frames = 1 + (len(xp) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[: n_frames * hop : hop]
    spec = np.fft.rfft(frames * window, axis=1)

    steps = np.arange(0.0, n_frames - 1, rate)
    omega = 2.0 * np.pi * hop * np.arange(spec.shape[1]) / n_fft
    out_spec = np.empty((len(steps), spec.shape[1]), dtype=np.complex128)
    phase = np.angle(spec[0])
    for i, s in enumerate(steps):
        j = int(s)
        frac = s - j
        mag = (1.0 - frac) * np.abs(spec[j]) + frac * np.abs(spec[min(j + 1, n_frames - 1)])
        out_spec[i] = mag * np.exp(1j * phase)
        dphi = np.angle(spec[min(j + 1, n_frames - 1)]) - np.angle(spec[j]) - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase = phase + omega + dphi

    out_frames = np.fft.irfft(out_spec, n=n_fft, axis=1) * window
    out_len = n_fft + (len(steps) - 1) * hop
    y = np.zeros(out_len)
    norm = np.zeros(out_len)
    w2 = window**2
    for i in range(len(steps)):
        y[i * hop : i * hop + n_fft] += out_frames[i]
        norm[i * hop : i * hop + n_fft] += w2
    y[norm > 1e-10] /= norm[norm > 1e-10]
    return y[pad:]


# ----------------------------------------------------------------------
# feature augmentations
# ----------------------------------------------------------------------

def pitch_roll(feat: CqtFeature, shift_bins: int) -> CqtFeature:
    """Shift the feature along frequency by `shift_bins`; vacated columns
    are filled with the log floor."""
    if abs(shift_bins) >= feat.bins:
        raise ValueError(f"shift {shift_bins} >= bin count {feat.bins}")
    if shift_bins == 0:
        return feat
    rolled = np.roll(feat.frames, shift_bins, axis=1)
    if shift_bins > 0:
        rolled[:, :shift_bins] = LOG_FLOOR
    else:
        rolled[:, shift_bins:] = LOG_FLOOR
    return replace_frames(feat, rolled)


def mask_rectangles(feat: CqtFeature, cfg: AugmentConfig, rng: np.random.Generator) -> CqtFeature:
    """Blank up to cfg.mask_count random rectangles to the feature floor."""
    if cfg.mask_count == 0:
        return feat
    frames = feat.frames.copy()
    t, f = frames.shape
    for _ in range(cfg.mask_count):
        h = int(rng.integers(1, cfg.mask_max_frames + 1))
        w = int(rng.integers(1, cfg.mask_max_bins + 1))
        t0 = int(rng.integers(0, max(t - h + 1, 1)))
        f0 = int(rng.integers(0, max(f - w + 1, 1)))
        frames[t0 : t0 + h, f0 : f0 + w] = LOG_FLOOR
    return replace_frames(feat, frames)


def replace_frames(feat: CqtFeature, frames: np.ndarray) -> CqtFeature:
    return CqtFeature(
        frames=frames,
        frame_rate=feat.frame_rate,
        bins_per_octave=feat.bins_per_octave,
        f_min=feat.f_min,
        track_id=feat.track_id,
    )


# ----------------------------------------------------------------------
# whole pipeline
# ----------------------------------------------------------------------

def augment_audio(
    clip: AudioClip,
    noise_pool: list[AudioClip],
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> AudioClip:
    """Waveform-side augmentations, each applied independently with its
    configured probability."""
    if cfg.p_volume > 0 and rng.random() < cfg.p_volume:
        clip = change_volume(clip, rng.uniform(*cfg.volume_db_range))
    if cfg.p_speed > 0 and rng.random() < cfg.p_speed:
        clip = change_speed(clip, rng.uniform(*cfg.speed_range), cfg.speed_range)
    if cfg.p_noise > 0 and noise_pool and rng.random() < cfg.p_noise:
        noise = noise_pool[int(rng.integers(len(noise_pool)))]
        clip = mix_noise(clip, noise, rng.uniform(*cfg.snr_db_range))
    return clip


def augment_feature(
    feat: CqtFeature, cfg: AugmentConfig, rng: np.random.Generator
) -> CqtFeature:
    """Feature-side augmentations (pitch roll, rectangle masks)."""
    if cfg.p_pitch > 0 and rng.random() < cfg.p_pitch:
        lo, hi = cfg.pitch_shift_bins
        shift = int(rng.integers(lo, hi + 1))
        feat = pitch_roll(feat, shift)
    if cfg.p_mask > 0 and rng.random() < cfg.p_mask:
        feat = mask_rectangles(feat, cfg, rng)
    return feat


def augment_pipeline(
    clip: AudioClip,
    noise_pool: list[AudioClip],
    cfg: AugmentConfig,
    rng: np.random.Generator,
    cqt_cfg: CqtConfig = CqtConfig(),
) -> CqtFeature:
    """Audio augmentations, then CQT, then feature augmentations. With all
    probabilities at zero this reduces exactly to compute_cqt(clip)."""
    clip = augment_audio(clip, noise_pool, cfg, rng)
    feat = compute_cqt(clip, cqt_cfg)
    return augment_feature(feat, cfg, rng)
