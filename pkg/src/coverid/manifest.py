"""Corpus manifests: newline-delimited JSON, one track record per line.

Required fields: track_id, work_id (the cover-group label), path.
Optional: duration_s, split (defaults to "train"), and synthetic-corpus
ground truth (prelude_s, offset_chunks) used to score alignment recovery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError


@dataclass
class TrackRecord:
    track_id: str
    work_id: str
    path: str
    duration_s: float | None = None
    split: str = "train"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        rec = {
            "track_id": self.track_id,
            "work_id": self.work_id,
            "path": self.path,
        }
        if self.duration_s is not None:
            rec["duration_s"] = self.duration_s
        rec["split"] = self.split
        rec.update(self.extra)
        return json.dumps(rec, sort_keys=True)


def write_manifest(path: str | Path, records: list[TrackRecord]) -> None:
    lines = [r.to_json() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> list[TrackRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    records: list[TrackRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: bad manifest line: {e}") from e
        for key in ("track_id", "work_id", "path"):
            if key not in rec:
                raise DataError(f"{path}:{lineno}: missing field {key!r}")
        track_id = str(rec.pop("track_id"))
        if track_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate track_id {track_id!r}")
        seen.add(track_id)
        records.append(
            TrackRecord(
                track_id=track_id,
                work_id=str(rec.pop("work_id")),
                path=str(rec.pop("path")),
                duration_s=rec.pop("duration_s", None),
                split=str(rec.pop("split", "train")),
                extra=rec,
            )
        )
    return records
