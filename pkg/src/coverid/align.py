"""Chunk alignment between covers: matching pairs, offset-mode voting,
aligned-pair selection.

Two covers of one work are compared chunk-by-chunk on cosine similarity
of their embeddings. Pairs above threshold become matching pairs
(p1, p2, delta = p2 - p1); the most frequent delta wins the vote and the
matching pairs at exactly that offset become the aligned pairs whose
start times seed the second training stage. Chunk positions are 1-based.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyInputError, NoPairsError

logger = logging.getLogger(__name__)


@dataclass
class ChunkEmbedding:
    track_id: str
    work_id: str
    chunk_index: int  # 1-based position within the track
    start_s: float
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.chunk_index < 1:
            raise DataError(f"chunk_index {self.chunk_index} must be >= 1")
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-4:
            raise DataError(
                f"chunk embedding {self.track_id}#{self.chunk_index} not unit-norm ({norm:.6f})"
            )


@dataclass(frozen=True)
class MatchingPair:
    p1: int
    p2: int
    delta: int
    similarity: float


@dataclass(frozen=True)
class AlignedPair:
    track_a: str
    track_b: str
    start_a_s: float
    start_b_s: float
    delta: int
    n_support_pairs: int = 1


def find_matching_pairs(
    a: list[ChunkEmbedding], b: list[ChunkEmbedding], threshold: float = 0.9
) -> list[MatchingPair]:
    """All chunk pairs with cosine similarity strictly above `threshold`."""
    if not a or not b:
        raise EmptyInputError("both chunk lists must be non-empty")
    va = np.stack([c.vector for c in a])
    vb = np.stack([c.vector for c in b])
    sims = va @ vb.T
    out: list[MatchingPair] = []
    for i, j in zip(*np.nonzero(sims > threshold)):
        p1 = a[i].chunk_index
        p2 = b[j].chunk_index
        out.append(MatchingPair(p1=p1, p2=p2, delta=p2 - p1, similarity=float(sims[i, j])))
    return out


def mode_offset(pairs: list[MatchingPair]) -> int:
    """Most frequent delta; ties prefer the smallest |delta|, then the
    smallest delta."""
    if not pairs:
        raise NoPairsError("cannot take the mode of zero matching pairs")
    counts = Counter(p.delta for p in pairs)
    return min(counts, key=lambda d: (-counts[d], abs(d), d))


def select_aligned(pairs: list[MatchingPair], delta: int) -> list[MatchingPair]:
    """The subset of matching pairs at exactly the winning offset."""
    return [p for p in pairs if p.delta == delta]


def align_track_pair(
    a: list[ChunkEmbedding], b: list[ChunkEmbedding], threshold: float = 0.9
) -> list[AlignedPair]:
    """Full alignment of one track pair; empty when nothing matches."""
    pairs = find_matching_pairs(a, b, threshold)
    if not pairs:
        return []
    delta = mode_offset(pairs)
    chosen = select_aligned(pairs, delta)
    start_a = {c.chunk_index: c.start_s for c in a}
    start_b = {c.chunk_index: c.start_s for c in b}
    return [
        AlignedPair(
            track_a=a[0].track_id,
            track_b=b[0].track_id,
            start_a_s=start_a[p.p1],
            start_b_s=start_b[p.p2],
            delta=delta,
            n_support_pairs=len(chosen),
        )
        for p in chosen
    ]


def build_alignment_table(
    chunks: list[ChunkEmbedding], threshold: float = 0.9
) -> list[AlignedPair]:
    """Alignments over every unordered same-work track pair. Track pairs
    with no matching pair are skipped (and logged)."""
    by_track: dict[str, list[ChunkEmbedding]] = {}
    track_work: dict[str, str] = {}
    for c in chunks:
        by_track.setdefault(c.track_id, []).append(c)
        track_work[c.track_id] = c.work_id
    works: dict[str, list[str]] = {}
    for tid in sorted(by_track):
        works.setdefault(track_work[tid], []).append(tid)

    table: list[AlignedPair] = []
    n_skipped = 0
    for work_id in sorted(works):
        for ta, tb in combinations(works[work_id], 2):
            rows = align_track_pair(by_track[ta], by_track[tb], threshold)
            if not rows:
                n_skipped += 1
                logger.info("no matching pairs for %s vs %s (work %s)", ta, tb, work_id)
                continue
            table.extend(rows)
    if n_skipped:
        logger.info("alignment skipped %d track pairs with no matches", n_skipped)
    return table


def extend_aligned_chunk(
    pair: AlignedPair,
    durations: dict[str, float],
    rng: np.random.Generator,
    length_range_s: tuple[float, float] = (15.0, 45.0),
) -> tuple[tuple[str, float, float], tuple[str, float, float]]:
    """Grow an aligned pair into two equal-length crops from the aligned
    start times. The sampled length is clamped so neither crop runs past
    its track end; if even the range minimum does not fit, the maximal
    common available length is used."""
    lo, hi = length_range_s
    length = float(rng.uniform(lo, hi))
    avail_a = durations[pair.track_a] - pair.start_a_s
    avail_b = durations[pair.track_b] - pair.start_b_s
    length = min(length, avail_a, avail_b)
    if length < lo:
        length = min(lo, avail_a, avail_b)
    return (
        (pair.track_a, pair.start_a_s, length),
        (pair.track_b, pair.start_b_s, length),
    )


# ----------------------------------------------------------------------
# alignment table file: one JSON record per line
# ----------------------------------------------------------------------

def write_alignment_table(path: str | Path, table: list[AlignedPair]) -> None:
    lines = [
        json.dumps(
            {
                "track_a": p.track_a,
                "track_b": p.track_b,
                "start_a_s": p.start_a_s,
                "start_b_s": p.start_b_s,
                "delta": p.delta,
                "n_support_pairs": p.n_support_pairs,
            },
            sort_keys=True,
        )
        for p in table
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_alignment_table(path: str | Path) -> list[AlignedPair]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    out: list[AlignedPair] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(
                AlignedPair(
                    track_a=rec["track_a"],
                    track_b=rec["track_b"],
                    start_a_s=float(rec["start_a_s"]),
                    start_b_s=float(rec["start_b_s"]),
                    delta=int(rec["delta"]),
                    n_support_pairs=int(rec.get("n_support_pairs", 1)),
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DataError(f"{path}:{lineno}: bad alignment row: {e}") from e
    return out
