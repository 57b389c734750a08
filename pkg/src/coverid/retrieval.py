"""Embedding gallery with exact and approximate cosine search.

Exact mode scores every (query chunk, gallery chunk) pair; similarities
are computed with einsum so a nested-loop verification using the scalar
form reproduces the same floats. ANN mode is a k-means partitioned
inverted-file index on the unit sphere: queries probe the nearest
`probes` partitions and score only the entries filed there. ANN recall
is something to measure against exact search, never to assume.

A query is a set of chunk embeddings for one track. Each gallery track
is scored by its closest chunk pair to the query, and tracks are ranked
by that distance (ties broken by track id).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import ChunkEmbedding
from .errors import (
    DecodeError,
    DimensionMismatchError,
    EmptyIndexError,
    ZeroVectorError,
)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine distance undefined for zero vectors")
    return float(1.0 - (u @ v) / (nu * nv))


@dataclass
class RankedTrack:
    track_id: str
    work_id: str
    distance: float
    query_chunk: int  # index into the query chunk list
    gallery_chunk: int  # global index into the gallery entries


@dataclass
class QueryResult:
    ranking: list[RankedTrack]


@dataclass
class GalleryIndex:
    entries: list[ChunkEmbedding]
    matrix: np.ndarray  # (N, dim) unit-normalized float32
    mode: str
    track_ids: list[str] = field(default_factory=list)
    track_of_entry: np.ndarray | None = None  # (N,) int index into track_ids
    work_of_track: dict[str, str] = field(default_factory=dict)
    # ANN state
    centroids: np.ndarray | None = None
    partitions: list[np.ndarray] | None = None
    probes: int = 8
    seed: int = 0
    n_partitions: int = 0


def _spherical_kmeans(
    x: np.ndarray, k: int, seed: int, iters: int = 15
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with cosine assignment on unit vectors. Returns
    (centroids, assignment)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = len(x)
    centroids = x[rng.choice(n, size=k, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        assign = (x @ centroids.T).argmax(axis=1)
        for c in range(k):
            members = x[assign == c]
            if len(members) == 0:
                centroids[c] = x[int(rng.integers(n))]
                continue
            m = members.sum(axis=0)
            norm = np.linalg.norm(m)
            centroids[c] = m / norm if norm > 0 else x[int(rng.integers(n))]
    assign = (x @ centroids.T).argmax(axis=1)
    return centroids, assign


def build_index(
    embeddings: list[ChunkEmbedding],
    mode: str = "exact",
    n_partitions: int | None = None,
    probes: int | None = None,
    seed: int = 0,
) -> GalleryIndex:
    if not embeddings:
        raise EmptyIndexError("cannot build an index from zero embeddings")
    dims = {e.vector.shape[0] for e in embeddings}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixed embedding dims {sorted(dims)}")
    if mode not in ("exact", "ann"):
        raise ValueError(f"unknown index mode {mode!r}")
    matrix = np.stack([e.vector for e in embeddings]).astype(np.float32)
    track_ids = sorted({e.track_id for e in embeddings})
    t_index = {t: i for i, t in enumerate(track_ids)}
    track_of_entry = np.array([t_index[e.track_id] for e in embeddings], dtype=np.int64)
    work_of_track = {e.track_id: e.work_id for e in embeddings}
    index = GalleryIndex(
        entries=list(embeddings),
        matrix=matrix,
        mode=mode,
        track_ids=track_ids,
        track_of_entry=track_of_entry,
        work_of_track=work_of_track,
        seed=seed,
    )
    if mode == "ann":
        n = len(embeddings)
        k = n_partitions or max(1, int(round(np.sqrt(n))))
        k = min(k, n)
        index.n_partitions = k
        index.probes = probes if probes is not None else min(32, k)
        centroids, assign = _spherical_kmeans(matrix, k, seed)
        index.centroids = centroids
        index.partitions = [np.nonzero(assign == c)[0] for c in range(k)]
    return index


def _rank_tracks(
    index: GalleryIndex,
    sims: np.ndarray,
    entry_ids: np.ndarray,
    k: int | None,
) -> QueryResult:
    """Aggregate chunk-pair similarities (n_query_chunks, n_candidates) into
    a per-track ranking by closest pair."""
    n_tracks = len(index.track_ids)
    tracks = index.track_of_entry[entry_ids]
    # best query chunk per candidate entry, then best entry per track
    max_over_q = sims.max(axis=0)
    arg_over_q = sims.argmax(axis=0)
    best = np.full(n_tracks, -np.inf, dtype=sims.dtype)
    np.maximum.at(best, tracks, max_over_q)
    best_q = np.full(n_tracks, -1, dtype=np.int64)
    best_g = np.full(n_tracks, -1, dtype=np.int64)
    # provenance: earliest candidate achieving its track's best similarity
    for pos in np.nonzero(max_over_q == best[tracks])[0][::-1]:
        t = tracks[pos]
        best_q[t] = arg_over_q[pos]
        best_g[t] = entry_ids[pos]
    scored = np.nonzero(best > -np.inf)[0]
    ranking = [
        RankedTrack(
            track_id=index.track_ids[t],
            work_id=index.work_of_track[index.track_ids[t]],
            distance=1.0 - float(best[t]),
            query_chunk=int(best_q[t]),
            gallery_chunk=int(best_g[t]),
        )
        for t in scored
    ]
    # unscored tracks (possible under ANN probing) sink to the bottom at the
    # maximal cosine distance
    for t in np.nonzero(best == -np.inf)[0]:
        ranking.append(
            RankedTrack(
                track_id=index.track_ids[t],
                work_id=index.work_of_track[index.track_ids[t]],
                distance=2.0,
                query_chunk=-1,
                gallery_chunk=-1,
            )
        )
    ranking.sort(key=lambda r: (r.distance, r.track_id))
    if k is not None:
        ranking = ranking[:k]
    return QueryResult(ranking=ranking)


def query(index: GalleryIndex, query_chunks: np.ndarray, k: int | None = None) -> QueryResult:
    """Rank gallery tracks against one query track's chunk embeddings."""
    q = np.atleast_2d(np.asarray(query_chunks, dtype=np.float32))
    if len(index.entries) == 0:
        raise EmptyIndexError("empty gallery")
    if q.shape[0] < 1:
        raise EmptyIndexError("need at least one query chunk")
    if q.shape[1] != index.matrix.shape[1]:
        raise DimensionMismatchError(
            f"query dim {q.shape[1]} != gallery dim {index.matrix.shape[1]}"
        )
    norms = np.linalg.norm(q, axis=1)
    if (norms == 0).any():
        raise ZeroVectorError("query chunk with zero norm")
    q = q / norms[:, None]
    if index.mode == "exact":
        sims = np.einsum("qd,gd->qg", q, index.matrix)
        return _rank_tracks(index, sims, np.arange(len(index.entries)), k)
    # ann: probe nearest partitions per query chunk, score the union
    cand: set[int] = set()
    cent_sims = q @ index.centroids.T
    for qi in range(q.shape[0]):
        order = np.argsort(-cent_sims[qi], kind="stable")[: index.probes]
        for c in order:
            cand.update(index.partitions[c].tolist())
    entry_ids = np.fromiter(sorted(cand), dtype=np.int64, count=len(cand))
    sims = np.einsum("qd,gd->qg", q, index.matrix[entry_ids])
    return _rank_tracks(index, sims, entry_ids, k)


# ----------------------------------------------------------------------
# "EMB1" embedding file format
# ----------------------------------------------------------------------
# little-endian: magic "EMB1", u32 version=1, u32 count, u32 dim, then per
# entry: u32 track_id length + utf-8 bytes, u32 work_id length + utf-8
# bytes, u32 chunk_index, f32 start_s, dim * f32 vector.

_EMB_MAGIC = b"EMB1"
_EMB_VERSION = 1


def write_embeddings(path: str | Path, embeddings: list[ChunkEmbedding]) -> None:
    if not embeddings:
        raise EmptyIndexError("refusing to write an empty embedding file")
    dim = embeddings[0].vector.shape[0]
    parts = [_EMB_MAGIC, struct.pack("<III", _EMB_VERSION, len(embeddings), dim)]
    for e in embeddings:
        if e.vector.shape[0] != dim:
            raise DimensionMismatchError("mixed dims in embedding file")
        tid = e.track_id.encode("utf-8")
        wid = e.work_id.encode("utf-8")
        parts.append(struct.pack("<I", len(tid)))
        parts.append(tid)
        parts.append(struct.pack("<I", len(wid)))
        parts.append(wid)
        parts.append(struct.pack("<If", e.chunk_index, e.start_s))
        parts.append(np.ascontiguousarray(e.vector, dtype=np.float32).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_embeddings(path: str | Path) -> list[ChunkEmbedding]:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != _EMB_MAGIC:
        raise DecodeError(f"{path}: bad embedding magic {buf[:4]!r}")
    version, count, dim = struct.unpack_from("<III", buf, 4)
    if version != _EMB_VERSION:
        raise DecodeError(f"{path}: unsupported embedding version {version}")
    off = 16
    out: list[ChunkEmbedding] = []
    for _ in range(count):
        (tl,) = struct.unpack_from("<I", buf, off)
        off += 4
        tid = buf[off : off + tl].decode("utf-8")
        off += tl
        (wl,) = struct.unpack_from("<I", buf, off)
        off += 4
        wid = buf[off : off + wl].decode("utf-8")
        off += wl
        chunk_index, start_s = struct.unpack_from("<If", buf, off)
        off += 8
        vec = np.frombuffer(buf, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        out.append(
            ChunkEmbedding(
                track_id=tid, work_id=wid, chunk_index=int(chunk_index),
                start_s=float(start_s), vector=vec,
            )
        )
    if off != len(buf):
        raise DecodeError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def save_index(path_prefix: str | Path, index: GalleryIndex) -> None:
    """Persist as an EMB1 file plus a small JSON meta file; ANN structure is
    rebuilt deterministically from the stored seed on load."""
    prefix = Path(path_prefix)
    write_embeddings(prefix.with_suffix(".emb"), index.entries)
    meta = {
        "mode": index.mode,
        "n_partitions": index.n_partitions,
        "probes": index.probes,
        "seed": index.seed,
    }
    prefix.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_index(path_prefix: str | Path) -> GalleryIndex:
    prefix = Path(path_prefix)
    emb_path = prefix.with_suffix(".emb")
    meta_path = prefix.with_suffix(".json")
    if not emb_path.exists() or not meta_path.exists():
        raise FileNotFoundError(f"{prefix}(.emb/.json)")
    meta = json.loads(meta_path.read_text())
    return build_index(
        read_embeddings(emb_path),
        mode=meta["mode"],
        n_partitions=meta["n_partitions"] or None,
        probes=meta["probes"],
        seed=meta["seed"],
    )
