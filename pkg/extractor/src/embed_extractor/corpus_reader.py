"""Minimal reader for the corpus JSON-Lines interchange format.

Each line is one sample object with at least ``id``, ``audio_ref`` and
``response``; an optional leading ``{"_meta": ...}`` line carries
corpus metadata and is skipped here. Order is preserved.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class CorpusReadError(Exception):
    pass


@dataclass(frozen=True)
class SampleRow:
    id: str
    audio_ref: str
    response: str


def read_corpus_rows(path: str | Path) -> list[SampleRow]:
    path = Path(path)
    if not path.exists():
        raise CorpusReadError(f"corpus file not found: {path}")
    rows: list[SampleRow] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusReadError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if lineno == 1 and isinstance(obj, dict) and "_meta" in obj and "id" not in obj:
                continue
            if not isinstance(obj, dict):
                raise CorpusReadError(f"line {lineno}: sample record must be an object")
            missing = [k for k in ("id", "audio_ref", "response") if k not in obj]
            if missing:
                raise CorpusReadError(f"line {lineno}: missing key(s) {missing}")
            sample_id = str(obj["id"])
            if sample_id in seen:
                raise CorpusReadError(f"line {lineno}: duplicate sample id {sample_id!r}")
            seen.add(sample_id)
            rows.append(
                SampleRow(
                    id=sample_id,
                    audio_ref=str(obj["audio_ref"]),
                    response=str(obj["response"]),
                )
            )
    return rows
