"""Two-stage training: short fixed chunks first, aligned crops second.

Coarse stage: every track is cut into 15 s chunks with 7.5 s overlap and
each chunk takes its track's work id as the class label. The resulting
embeddings drive offset voting (see align), and the fine stage then
warm-starts from the coarse checkpoint and trains on aligned crop pairs
with a per-batch length sampled from 15-45 s; classes without alignment
rows still contribute plain classification samples.

Batches are class-balanced (P classes x K samples). All randomness is
derived from one seed through named SeedSequence children, so a fixed
seed reproduces checkpoints and logs byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .align import AlignedPair, ChunkEmbedding, build_alignment_table
from .audio import AudioClip, load_audio
from .augment import AugmentConfig, augment_audio, augment_feature
from .cqt import LOG_FLOOR, CqtConfig, CqtFeature, chunk_feature, compute_cqt, read_feature, write_feature
from .errors import DivergenceError, EmptyAlignmentTableError, EmptyCorpusError
from .manifest import TrackRecord, read_manifest
from .model import ChunkEncoder, EncoderConfig, build_encoder
from .nn import Adam, ParamStore, lr_schedule, read_checkpoint, write_checkpoint
from .nn.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    p_classes: int = 8
    k_samples: int = 2
    base_lr: float = 0.001
    lr_decay: float = 0.95
    lr_decay_every: int = 1000
    seed: int = 0
    chunk_s: float = 15.0
    hop_s: float = 7.5
    fine_length_range: tuple[float, float] = (15.0, 45.0)
    align_threshold: float = 0.9
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(
        p_volume=0.0, p_speed=0.0, p_noise=0.0, p_pitch=0.0, p_mask=0.0,
    ))

    @property
    def batch_size(self) -> int:
        return self.p_classes * self.k_samples


class Corpus:
    """Train-split tracks with cached features and class labels.

    Only records with split == "train" are admitted; the existence of this
    filter (rather than its completeness) is what keeps evaluation tracks
    out of the optimizer's reach.
    """

    def __init__(
        self,
        records: list[TrackRecord],
        cqt_cfg: CqtConfig = CqtConfig(),
        features_dir: str | Path | None = None,
        keep_audio: bool = False,
    ):
        self.records = [r for r in records if r.split == "train"]
        if not self.records:
            raise EmptyCorpusError("no train-split tracks in manifest")
        self.cqt_cfg = cqt_cfg
        self.noise_pool: list[AudioClip] = []
        self._work_of_track = {r.track_id: r.work_id for r in self.records}
        self.works = sorted({r.work_id for r in self.records})
        self.class_of_work = {w: i for i, w in enumerate(self.works)}
        self.tracks_by_class: list[list[TrackRecord]] = [[] for _ in self.works]
        for r in self.records:
            self.tracks_by_class[self.class_of_work[r.work_id]].append(r)
        self.features: dict[str, CqtFeature] = {}
        self.audio: dict[str, AudioClip] = {}
        features_dir = Path(features_dir) if features_dir else None
        for r in self.records:
            feat_path = features_dir / f"{r.track_id}.cqtf" if features_dir else None
            if feat_path is not None and feat_path.exists():
                self.features[r.track_id] = read_feature(feat_path, track_id=r.track_id)
            else:
                clip = load_audio(r.path, cqt_cfg.sample_rate, track_id=r.track_id)
                self.features[r.track_id] = compute_cqt(clip, cqt_cfg)
                if keep_audio:
                    self.audio[r.track_id] = clip
                if feat_path is not None:
                    write_feature(feat_path, self.features[r.track_id])

    @property
    def n_classes(self) -> int:
        return len(self.works)

    def duration_s(self, track_id: str) -> float:
        return self.features[track_id].duration_s

    def work_of_track(self, track_id: str) -> str:
        return self._work_of_track[track_id]


def _crop_frames(feat: CqtFeature, start_s: float, n_frames: int) -> np.ndarray:
    """Fixed-length crop padded with the log floor when the tail is short."""
    start = int(start_s * feat.frame_rate + 1e-9)
    piece = feat.frames[start : start + n_frames]
    if len(piece) < n_frames:
        pad = np.full((n_frames - len(piece), feat.bins), LOG_FLOOR, dtype=piece.dtype)
        piece = np.concatenate([piece, pad], axis=0)
    return piece


class CoarseSampler:
    """P x K class-balanced sampling of fixed-length chunk crops."""

    def __init__(self, corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator):
        self.corpus = corpus
        self.cfg = cfg
        self.rng = rng
        self.chunk_frames = int(round(cfg.chunk_s * corpus.cqt_cfg.frame_rate))
        self.chunks: dict[str, list[float]] = {
            r.track_id: [
                c.start_s
                for c in chunk_feature(corpus.features[r.track_id], cfg.chunk_s, cfg.hop_s)
            ]
            for r in corpus.records
        }
        self.class_counts = np.zeros(corpus.n_classes)
        for r in corpus.records:
            cls = corpus.class_of_work[r.work_id]
            self.class_counts[cls] += len(self.chunks[r.track_id])

    def sample(self) -> tuple[list[tuple[str, float]], np.ndarray]:
        n_cls = self.corpus.n_classes
        p = min(self.cfg.p_classes, n_cls)
        classes = self.rng.choice(n_cls, size=p, replace=n_cls < p)
        picks: list[tuple[str, float]] = []
        labels: list[int] = []
        for cls in classes:
            tracks = self.corpus.tracks_by_class[cls]
            for _ in range(self.cfg.k_samples):
                r = tracks[int(self.rng.integers(len(tracks)))]
                starts = self.chunks[r.track_id]
                start = starts[int(self.rng.integers(len(starts)))]
                picks.append((r.track_id, start))
                labels.append(cls)
        return picks, np.asarray(labels)


class FineSampler:
    """Aligned-pair positives plus classification-only fills, one crop
    length per batch. Each emitted pair is tagged with the row it came
    from (provenance)."""

    def __init__(
        self,
        corpus: Corpus,
        table: list[AlignedPair],
        cfg: TrainConfig,
        rng: np.random.Generator,
    ):
        if not table:
            raise EmptyAlignmentTableError("fine training needs a non-empty alignment table")
        self.corpus = corpus
        self.cfg = cfg
        self.rng = rng
        track_work = {r.track_id: r.work_id for r in corpus.records}
        self.rows_by_class: dict[int, list[int]] = {}
        self.table = table
        for i, row in enumerate(table):
            cls = corpus.class_of_work[track_work[row.track_a]]
            self.rows_by_class.setdefault(cls, []).append(i)
        self.coarse = CoarseSampler(corpus, cfg, rng)

    def sample(self) -> tuple[list[tuple[str, float]], np.ndarray, float, list[int | None]]:
        """Returns (picks, labels, batch length seconds, per-sample row id)."""
        lo, hi = self.cfg.fine_length_range
        length_s = float(self.rng.uniform(lo, hi))
        n_cls = self.corpus.n_classes
        p = min(self.cfg.p_classes, n_cls)
        classes = self.rng.choice(n_cls, size=p, replace=n_cls < p)
        picks: list[tuple[str, float]] = []
        labels: list[int] = []
        provenance: list[int | None] = []
        for cls in classes:
            rows = self.rows_by_class.get(cls, [])
            budget = self.cfg.k_samples
            while budget >= 2 and rows:
                ri = int(rows[int(self.rng.integers(len(rows)))])
                row = self.table[ri]
                picks.append((row.track_a, row.start_a_s))
                picks.append((row.track_b, row.start_b_s))
                labels.extend([cls, cls])
                provenance.extend([ri, ri])
                budget -= 2
            for _ in range(budget):
                tracks = self.corpus.tracks_by_class[cls]
                r = tracks[int(self.rng.integers(len(tracks)))]
                starts = self.coarse.chunks[r.track_id]
                start = starts[int(self.rng.integers(len(starts)))]
                picks.append((r.track_id, start))
                labels.append(cls)
                provenance.append(None)
        return picks, np.asarray(labels), length_s, provenance


def _assemble_batch(
    corpus: Corpus,
    picks: list[tuple[str, float]],
    n_frames: int,
    augment_cfg: AugmentConfig,
    aug_rng: np.random.Generator,
    chunk_s: float,
) -> np.ndarray:
    """Build the (B, n_frames, F) array, augmenting per sample.

    With audio-domain augmentation enabled the crop is re-extracted from
    the waveform on the fly; otherwise the cached feature is sliced and
    only feature-domain augmentation applies.
    """
    rows = []
    use_audio = augment_cfg.audio_domain_active()
    for track_id, start_s in picks:
        if use_audio and track_id in corpus.audio:
            clip = corpus.audio[track_id]
            sr = clip.sample_rate
            lo = int(start_s * sr)
            seg = clip.samples[lo : lo + int(chunk_s * sr)]
            seg_clip = AudioClip(seg, sr, track_id=track_id)
            seg_clip = augment_audio(seg_clip, corpus.noise_pool, augment_cfg, aug_rng)
            feat = compute_cqt(seg_clip, corpus.cqt_cfg)
            feat = augment_feature(feat, augment_cfg, aug_rng)
            piece = feat.frames[:n_frames]
            if len(piece) < n_frames:
                piece = np.concatenate(
                    [piece, np.full((n_frames - len(piece), feat.bins), LOG_FLOOR, dtype=piece.dtype)]
                )
            rows.append(piece)
            continue
        feat = corpus.features[track_id]
        piece = _crop_frames(feat, start_s, n_frames)
        feat_view = CqtFeature(piece, feat.frame_rate, feat.bins_per_octave, feat.f_min, track_id)
        feat_view = augment_feature(feat_view, augment_cfg, aug_rng)
        rows.append(feat_view.frames)
    return np.stack(rows)


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    final_losses: dict[str, float]


def _train(
    corpus: Corpus,
    enc_cfg: EncoderConfig,
    loss_cfg: L.LossConfig,
    cfg: TrainConfig,
    workdir: Path,
    stage: str,
    table: list[AlignedPair] | None = None,
    init_state: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    loss_cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    init_seed, sampler_seed, aug_seed, dropout_seed = ss.spawn(4)
    store = ParamStore(dtype=np.float32)
    model = ChunkEncoder(enc_cfg, store, np.random.default_rng(init_seed))
    bank = L.CenterBank(enc_cfg.n_classes, enc_cfg.bottleneck_dim)
    if init_state is not None:
        centers = init_state.pop("center_bank.centers", None)
        store.load_state_arrays(init_state)
        if centers is not None:
            bank.centers = centers.astype(np.float32)

    sampler_rng = np.random.default_rng(sampler_seed)
    aug_rng = np.random.default_rng(aug_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    if stage == "fine":
        sampler = FineSampler(corpus, table or [], cfg, sampler_rng)
        alpha = L.class_weights(np.maximum(sampler.coarse.class_counts, 1), loss_cfg.alpha_clamp)
    else:
        sampler = CoarseSampler(corpus, cfg, sampler_rng)
        alpha = L.class_weights(np.maximum(sampler.class_counts, 1), loss_cfg.alpha_clamp)

    opt = Adam()
    frame_rate = corpus.cqt_cfg.frame_rate
    ckpt_dir = workdir / "ckpt"
    log_dir = workdir / "logs"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / f"{stage}_log.jsonl"
    final = {"focal": float("nan"), "center": float("nan"), "triplet": float("nan"), "total": float("nan")}

    with open(log_path, "w") as log_file:
        for step in range(cfg.steps):
            if stage == "fine":
                picks, labels, length_s, _prov = sampler.sample()
                n_frames = int(round(length_s * frame_rate))
            else:
                picks, labels = sampler.sample()
                n_frames = int(round(cfg.chunk_s * frame_rate))
            batch = _assemble_batch(corpus, picks, n_frames, cfg.augment, aug_rng, cfg.chunk_s)
            out = model.forward(Tensor(batch), training=True, rng=dropout_rng)
            focal = L.focal_loss(out["logits"], labels, alpha, loss_cfg.gamma)
            center = L.center_loss(out["post_raw"], labels, bank)
            if loss_cfg.triplet_distance == "cosine":
                from .model import l2_normalize

                trip_in = Tensor(l2_normalize(out["pre"].data))  # no grad path; config escape hatch
                triplet, _ = L.triplet_loss(trip_in, labels, loss_cfg.triplet_margin)
            else:
                triplet, _ = L.triplet_loss(out["pre"], labels, loss_cfg.triplet_margin)
            total = L.total_loss(focal, center, triplet, loss_cfg)
            if not np.isfinite(total.item()):
                raise DivergenceError(f"{stage} training diverged at step {step}")
            total.backward()
            lr = lr_schedule(step, cfg.base_lr, cfg.lr_decay, cfg.lr_decay_every)
            opt.step(store, lr)
            bank.update(out["post_raw"].data, labels, loss_cfg.center_lr)
            final = {
                "focal": focal.item(), "center": center.item(),
                "triplet": triplet.item(), "total": total.item(),
            }
            log_file.write(json.dumps({"step": step, "lr": lr, **final}) + "\n")

    state = store.state_arrays()
    state["center_bank.centers"] = bank.centers
    ckpt_path = ckpt_dir / f"{stage}.ckpt"
    write_checkpoint(ckpt_path, state)
    meta = {
        "stage": stage,
        "n_classes": enc_cfg.n_classes,
        "encoder": {
            "n_blocks": enc_cfg.n_blocks,
            "model_dim": enc_cfg.model_dim,
            "heads": enc_cfg.heads,
            "conv_kernel": enc_cfg.conv_kernel,
            "ff_expansion": enc_cfg.ff_expansion,
            "bottleneck_dim": enc_cfg.bottleneck_dim,
            "input_bins": enc_cfg.input_bins,
            "dropout": enc_cfg.dropout,
            "pool_heads": enc_cfg.pooling.heads,
            "pool_mask_prob": enc_cfg.pooling.mask_prob,
        },
    }
    ckpt_path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    logger.info("%s training done: %s", stage, final)
    return TrainResult(checkpoint_path=ckpt_path, log_path=log_path, final_losses=final)


def train_coarse(
    corpus: Corpus,
    enc_cfg: EncoderConfig,
    loss_cfg: L.LossConfig,
    cfg: TrainConfig,
    workdir: str | Path,
) -> TrainResult:
    return _train(corpus, enc_cfg, loss_cfg, cfg, Path(workdir), stage="coarse")


def train_fine(
    checkpoint_path: str | Path,
    table: list[AlignedPair],
    corpus: Corpus,
    enc_cfg: EncoderConfig,
    loss_cfg: L.LossConfig,
    cfg: TrainConfig,
    workdir: str | Path,
) -> TrainResult:
    if not table:
        raise EmptyAlignmentTableError("empty alignment table")
    init_state = read_checkpoint(checkpoint_path)
    return _train(
        corpus, enc_cfg, loss_cfg, cfg, Path(workdir), stage="fine",
        table=table, init_state=init_state,
    )


def load_model(checkpoint_path: str | Path) -> tuple[ChunkEncoder, ParamStore]:
    """Rebuild the encoder from a checkpoint and its sidecar meta file."""
    from .model import PoolingConfig

    meta_path = Path(checkpoint_path).with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text())
    e = meta["encoder"]
    enc_cfg = EncoderConfig(
        n_classes=meta["n_classes"],
        n_blocks=e["n_blocks"],
        model_dim=e["model_dim"],
        heads=e["heads"],
        conv_kernel=e["conv_kernel"],
        ff_expansion=e["ff_expansion"],
        bottleneck_dim=e["bottleneck_dim"],
        input_bins=e["input_bins"],
        dropout=e["dropout"],
        pooling=PoolingConfig(heads=e["pool_heads"], mask_prob=e["pool_mask_prob"]),
    )
    model, store = build_encoder(enc_cfg, seed=0)
    state = read_checkpoint(checkpoint_path)
    state.pop("center_bank.centers", None)
    store.load_state_arrays(state)
    return model, store


def embed_corpus(
    model: ChunkEncoder,
    corpus: Corpus,
    chunk_s: float = 45.0,
    hop_s: float = 45.0,
    batch_size: int = 16,
) -> list[ChunkEmbedding]:
    """Eval-mode chunk embeddings for every track, padded to full chunks."""
    embeddings: list[ChunkEmbedding] = []
    pending: list[tuple[str, str, int, float, np.ndarray]] = []
    n_frames = int(round(chunk_s * corpus.cqt_cfg.frame_rate))

    def flush():
        if not pending:
            return
        batch = np.stack([p[4] for p in pending])
        vecs = model.embed_batch(batch)
        for (tid, wid, idx, start, _), vec in zip(pending, vecs):
            embeddings.append(
                ChunkEmbedding(track_id=tid, work_id=wid, chunk_index=idx, start_s=start, vector=vec)
            )
        pending.clear()

    for r in corpus.records:
        feat = corpus.features[r.track_id]
        for i, chunk in enumerate(chunk_feature(feat, chunk_s, hop_s), start=1):
            pending.append(
                (r.track_id, r.work_id, i, chunk.start_s, _crop_frames(feat, chunk.start_s, n_frames))
            )
            if len(pending) >= batch_size:
                flush()
    flush()
    return embeddings


def run_alignment(
    checkpoint_path: str | Path,
    corpus: Corpus,
    threshold: float = 0.9,
    chunk_s: float = 15.0,
    hop_s: float = 7.5,
) -> list[AlignedPair]:
    """Embed 15 s / 7.5 s-hop chunks in eval mode and vote offsets."""
    model, _ = load_model(checkpoint_path)
    chunks = embed_corpus(model, corpus, chunk_s=chunk_s, hop_s=hop_s)
    return build_alignment_table(chunks, threshold)
