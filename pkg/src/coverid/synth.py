"""Synthetic cover-song corpus for desk-scale experiments.

Each work is a note sequence (a random walk over a pentatonic scale with
a fixed per-work rhythm). Versions of a work render the same melody with
their own transposition, tempo, harmonic mix, and low-level noise, and
prepend a junk prelude of random tones that matches no other version.
Prelude lengths are drawn as multiples of `prelude_quantum_s` so the
planted chunk offset between two versions is a whole number of hops;
the manifest records the per-track prelude and its offset in chunks for
scoring alignment recovery.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioClip, save_wav
from .manifest import TrackRecord, write_manifest

_PENTATONIC = np.array([0, 2, 4, 7, 9])


def _tone(
    freq: float,
    dur_s: float,
    sr: int,
    harmonics: np.ndarray,
    phase_rng: np.random.Generator,
) -> np.ndarray:
    n = max(int(round(dur_s * sr)), 1)
    t = np.arange(n) / sr
    env = np.minimum(1.0, np.minimum(t, dur_s - t) / 0.02)  # 20 ms ramps
    env = np.clip(env, 0.0, 1.0)
    out = np.zeros(n)
    for h, amp in enumerate(harmonics, start=1):
        if freq * h >= sr / 2:
            break
        out += amp * np.sin(2 * np.pi * freq * h * t + phase_rng.uniform(0, 2 * np.pi))
    return out * env


def _midi_to_hz(midi: float) -> float:
    return 440.0 * 2.0 ** ((midi - 69.0) / 12.0)


def _render_melody(
    notes: np.ndarray,
    durs: np.ndarray,
    sr: int,
    transpose: float,
    tempo: float,
    harmonics: np.ndarray,
    phase_rng: np.random.Generator,
) -> np.ndarray:
    parts = [
        _tone(_midi_to_hz(m + transpose), d / tempo, sr, harmonics, phase_rng)
        for m, d in zip(notes, durs)
    ]
    return np.concatenate(parts)


def synth_corpus(
    out_dir: str | Path,
    n_works: int,
    n_versions: int,
    duration_s: float = 45.0,
    junk_prelude_s_max: float = 0.0,
    seed: int = 0,
    sample_rate: int = 16_000,
    tempo_jitter: float = 0.03,
    pitch_spread_semitones: int = 2,
    prelude_quantum_s: float = 7.5,
    noise_amp: float = 0.003,
) -> Path:
    """Generate WAV files plus a manifest; returns the manifest path."""
    if n_works < 2 or n_versions < 2:
        raise ValueError("need at least 2 works and 2 versions per work")
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    root_ss = np.random.SeedSequence(seed)
    work_seeds = root_ss.spawn(n_works)

    max_m = int(junk_prelude_s_max / prelude_quantum_s) if junk_prelude_s_max > 0 else 0
    records: list[TrackRecord] = []
    for w in range(n_works):
        work_rng = np.random.default_rng(work_seeds[w])
        root = int(work_rng.integers(45, 58))
        scale = root + np.concatenate([_PENTATONIC, _PENTATONIC + 12])
        n_notes = int(np.ceil(duration_s / 0.6))
        idx = np.cumsum(work_rng.integers(-2, 3, size=n_notes)) % len(scale)
        notes = scale[idx].astype(float)
        durs = work_rng.choice([0.45, 0.6, 0.75, 0.9], size=n_notes)
        durs = durs * (duration_s / durs.sum())  # melody lasts duration_s at tempo 1
        version_seeds = work_seeds[w].spawn(n_versions)

        for v in range(n_versions):
            vrng = np.random.default_rng(version_seeds[v])
            transpose = float(vrng.integers(-pitch_spread_semitones, pitch_spread_semitones + 1))
            tempo = float(1.0 + vrng.uniform(-tempo_jitter, tempo_jitter))
            harmonics = vrng.dirichlet(np.ones(4) * 2.0)
            melody = _render_melody(notes, durs, sample_rate, transpose, tempo, harmonics, vrng)

            m = int(vrng.integers(0, max_m + 1)) if max_m else 0
            prelude_s = m * prelude_quantum_s
            if prelude_s > 0:
                junk_notes = vrng.integers(40, 80, size=int(np.ceil(prelude_s / 0.5)))
                junk = np.concatenate(
                    [
                        _tone(_midi_to_hz(float(jm)), 0.5, sample_rate, harmonics, vrng)
                        for jm in junk_notes
                    ]
                )[: int(prelude_s * sample_rate)]
                samples = np.concatenate([junk, melody])
            else:
                samples = melody
            samples = samples + noise_amp * vrng.standard_normal(len(samples))
            peak = np.abs(samples).max()
            samples = 0.7 * samples / peak if peak > 0 else samples

            track_id = f"w{w:02d}_v{v}"
            path = audio_dir / f"{track_id}.wav"
            clip = AudioClip(samples.astype(np.float32), sample_rate, track_id)
            save_wav(path, clip)
            records.append(
                TrackRecord(
                    track_id=track_id,
                    work_id=f"work{w:02d}",
                    path=str(path),
                    duration_s=round(clip.duration_s, 4),
                    split="train",
                    extra={
                        "prelude_s": prelude_s,
                        "offset_chunks": prelude_s / prelude_quantum_s,
                        "transpose": transpose,
                        "tempo": round(tempo, 4),
                    },
                )
            )
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path


def synth_noise_pool(
    out_dir: str | Path, n_files: int = 4, duration_s: float = 20.0,
    seed: int = 99, sample_rate: int = 16_000,
) -> list[Path]:
    """Small pool of colored-noise WAVs standing in for a real noise set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from scipy.signal import lfilter

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    paths = []
    n = int(duration_s * sample_rate)
    for i in range(n_files):
        white = rng.standard_normal(n)
        # one-pole lowpass with a per-file cutoff: cheap colored noise
        a = rng.uniform(0.8, 0.99)
        noise = lfilter([1.0 - a], [1.0, -a], white)
        noise = 0.5 * noise / np.abs(noise).max()
        path = out_dir / f"noise{i:02d}.wav"
        save_wav(path, AudioClip(noise.astype(np.float32), sample_rate, f"noise{i:02d}"))
        paths.append(path)
    return paths
