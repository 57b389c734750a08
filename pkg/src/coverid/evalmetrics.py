"""Retrieval evaluation: mean average precision, mean rank of the first
correct result, and top-1 hit rate.

Rankings are over gallery tracks; a result is relevant when it shares the
query's work id, with the query's own track always excluded. Queries with
no relevant track in the gallery are excluded from all three metrics and
counted separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingGroundTruthError, NoRelevantError


def average_precision(ranking: list[str], relevant: set[str]) -> float:
    """AP = (1/|relevant|) * sum over relevant hits of precision at the hit.

    `ranking` must already exclude the query's own track.
    """
    if not relevant:
        raise NoRelevantError("average precision needs a non-empty relevant set")
    hits = 0
    total = 0.0
    for rank, track in enumerate(ranking, start=1):
        if track in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


@dataclass
class QueryEval:
    query_id: str
    ap: float
    first_correct_rank: int | None
    hit: bool


@dataclass
class EvalReport:
    map: float
    mr1: float
    hit_rate: float
    n_queries: int
    n_skipped_no_cover: int
    per_query: list[QueryEval] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "map": self.map,
                "mr1": self.mr1,
                "hit_rate": self.hit_rate,
                "n_queries": self.n_queries,
                "n_skipped_no_cover": self.n_skipped_no_cover,
                "per_query": [
                    {
                        "query_id": q.query_id,
                        "ap": q.ap,
                        "first_correct_rank": q.first_correct_rank,
                        "hit": q.hit,
                    }
                    for q in self.per_query
                ],
            },
            sort_keys=True,
            indent=2,
        )


def write_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(report.to_json() + "\n")


def evaluate(
    rankings: dict[str, list[str]],
    query_work: dict[str, str],
    gallery_work: dict[str, str],
) -> EvalReport:
    """Score per-query gallery-track rankings against work-id ground truth.

    `rankings` maps query track id to its ranked gallery track ids. The
    query's own track is dropped from its ranking here if present.
    """
    per_query: list[QueryEval] = []
    skipped = 0
    for qid in sorted(rankings):
        if qid not in query_work:
            raise MissingGroundTruthError(f"query {qid!r} has no work id")
        work = query_work[qid]
        ranking = [t for t in rankings[qid] if t != qid]
        for t in ranking:
            if t not in gallery_work:
                raise MissingGroundTruthError(f"gallery track {t!r} has no work id")
        relevant = {t for t, w in gallery_work.items() if w == work and t != qid}
        if not relevant:
            skipped += 1
            continue
        ap = average_precision(ranking, relevant)
        first = next(
            (rank for rank, t in enumerate(ranking, start=1) if t in relevant), None
        )
        per_query.append(
            QueryEval(
                query_id=qid,
                ap=ap,
                first_correct_rank=first,
                hit=bool(ranking) and ranking[0] in relevant,
            )
        )
    n = len(per_query)
    ranked_firsts = [q.first_correct_rank for q in per_query if q.first_correct_rank]
    return EvalReport(
        map=sum(q.ap for q in per_query) / n if n else 0.0,
        mr1=sum(ranked_firsts) / len(ranked_firsts) if ranked_firsts else 0.0,
        hit_rate=sum(q.hit for q in per_query) / n if n else 0.0,
        n_queries=n,
        n_skipped_no_cover=skipped,
        per_query=per_query,
    )
