"""Local HTTP service backing the annotation UI.

Serves samples and audio, records hallucination labels and types, tracks
progress, and persists everything to the corpus file.

Persistence is an append-only annotation journal next to the corpus file
plus a periodic atomic corpus rewrite; the journal is replayed on
startup, so an acknowledged annotation survives a crash even if the
corpus rewrite never happened. The journal is never truncated and keeps
the full audit trail; re-annotation is last write wins.

All corpus mutations pass through one lock. Reads see a consistent
snapshot; audio is served as byte ranges of the referenced files with no
transcoding. The server binds locally by default and has no auth.
"""
from __future__ import annotations

import json
import os
import threading
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .corpus import (
    Annotation,
    Corpus,
    CorpusError,
    HallucType,
    Sample,
    load_corpus,
    sample_to_json,
    save_corpus,
    utc_now_iso,
)

_AUDIO_TYPES = {
    ".wav": "audio/wav",
    ".mp3": "audio/mpeg",
    ".ogg": "audio/ogg",
    ".flac": "audio/flac",
    ".m4a": "audio/mp4",
}


def journal_path_for(corpus_path: Path) -> Path:
    return corpus_path.with_name(corpus_path.name + ".journal")


class AnnotationStore:
    """Serialized writer around the corpus file and its journal."""

    def __init__(self, corpus_path: str | Path, rewrite_every: int = 25):
        self.corpus_path = Path(corpus_path)
        self.journal_path = journal_path_for(self.corpus_path)
        self.rewrite_every = rewrite_every
        self._lock = threading.Lock()
        self._writes_since_rewrite = 0
        self.corpus = load_corpus(self.corpus_path)
        self._replay_journal()
        self._journal_fh = open(self.journal_path, "a", encoding="utf-8")

    def _replay_journal(self) -> None:
        if not self.journal_path.exists():
            return
        with self.journal_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                sample_id = entry["sample_id"]
                if self.corpus.get(sample_id) is None:
                    continue  # journal may outlive a trimmed corpus
                annotation = Annotation(
                    hallucinated=entry["hallucinated"],
                    halluc_type=HallucType(entry["type"])
                    if entry.get("type") is not None
                    else None,
                    annotator=entry.get("annotator"),
                    timestamp=entry.get("timestamp", ""),
                )
                self.corpus = self.corpus.with_annotation(sample_id, annotation)

    def close(self) -> None:
        with self._lock:
            self._rewrite_corpus()
            self._journal_fh.close()

    def _rewrite_corpus(self) -> None:
        save_corpus(self.corpus, self.corpus_path)
        self._writes_since_rewrite = 0

    def annotate(
        self,
        sample_id: str,
        hallucinated: bool,
        halluc_type: Optional[str],
        annotator: Optional[str],
    ) -> Annotation:
        """Validate, persist durably (journal + fsync), then apply in memory."""
        with self._lock:
            if self.corpus.get(sample_id) is None:
                raise KeyError(sample_id)
            annotation = Annotation(
                hallucinated=hallucinated,
                halluc_type=HallucType(halluc_type) if halluc_type is not None else None,
                annotator=annotator,
                timestamp=utc_now_iso(),
            )
            entry = {
                "sample_id": sample_id,
                "hallucinated": annotation.hallucinated,
                "type": annotation.halluc_type.value if annotation.halluc_type else None,
                "annotator": annotation.annotator,
                "timestamp": annotation.timestamp,
            }
            self._journal_fh.write(json.dumps(entry) + "\n")
            self._journal_fh.flush()
            os.fsync(self._journal_fh.fileno())
            self.corpus = self.corpus.with_annotation(sample_id, annotation)
            self._writes_since_rewrite += 1
            if self._writes_since_rewrite >= self.rewrite_every:
                self._rewrite_corpus()
            return annotation

    def flush(self) -> None:
        with self._lock:
            self._rewrite_corpus()

    def get_sample(self, sample_id: str) -> Optional[Sample]:
        with self._lock:
            return self.corpus.get(sample_id)

    def next_unlabeled(self, after: Optional[str] = None) -> tuple[Optional[Sample], bool]:
        """First unannotated sample in corpus order after the cursor;
        (None, done) when there is nothing to serve."""
        with self._lock:
            samples = self.corpus.samples
            start = 0
            if after is not None:
                if self.corpus.get(after) is None:
                    raise KeyError(after)
                start = next(i for i, s in enumerate(samples) if s.id == after) + 1
            done = all(s.annotation is not None for s in samples)
            for sample in samples[start:]:
                if sample.annotation is None:
                    return sample, False
            return None, done

    def progress(self) -> dict:
        with self._lock:
            total = len(self.corpus)
            labeled = sum(1 for s in self.corpus if s.annotation is not None)
            hallucinated = sum(
                1
                for s in self.corpus
                if s.annotation is not None and s.annotation.hallucinated
            )
            per_type = {t.value: 0 for t in HallucType}
            for s in self.corpus:
                if s.annotation is not None and s.annotation.halluc_type is not None:
                    per_type[s.annotation.halluc_type.value] += 1
            return {
                "total": total,
                "labeled": labeled,
                "hallucinated": hallucinated,
                "per_type": per_type,
                "rate": hallucinated / labeled if labeled else None,
            }


class AnnotationBody(BaseModel):
    sample_id: Optional[str] = None
    hallucinated: bool
    halluc_type: Optional[str] = None
    annotator: Optional[str] = None


def _parse_range(header: str, size: int) -> Optional[tuple[int, int]]:
    """Single-range 'bytes=a-b' parser; None means ignore the header."""
    if not header.startswith("bytes="):
        return None
    spec = header[len("bytes="):]
    if "," in spec:
        return None  # multipart ranges are not supported; serve the whole file
    start_s, _, end_s = spec.partition("-")
    try:
        if start_s == "" and end_s:
            length = int(end_s)
            if length <= 0:
                raise ValueError
            start = max(size - length, 0)
            end = size - 1
        else:
            start = int(start_s)
            end = int(end_s) if end_s else size - 1
    except ValueError:
        return None
    if start >= size or end < start:
        raise HTTPException(status_code=416, detail="requested range not satisfiable")
    return start, min(end, size - 1)


def create_app(
    corpus_path: str | Path,
    audio_root: str | Path,
    ui_dir: Optional[str | Path] = None,
    rewrite_every: int = 25,
) -> FastAPI:
    audio_root = Path(audio_root).resolve()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        app.state.store.close()

    app = FastAPI(title="audiohalluc annotation service", lifespan=lifespan)
    app.state.store = AnnotationStore(corpus_path, rewrite_every=rewrite_every)
    store: AnnotationStore = app.state.store

    @app.get("/api/samples/next")
    def get_next(after: Optional[str] = None):
        try:
            sample, done = store.next_unlabeled(after)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=f"unknown cursor id {exc.args[0]!r}")
        return {
            "sample": sample_to_json(sample) if sample is not None else None,
            "done": done,
        }

    @app.get("/api/progress")
    def get_progress():
        return store.progress()

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        sample = store.get_sample(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        return sample_to_json(sample)

    @app.put("/api/samples/{sample_id}/annotation")
    def put_annotation(sample_id: str, body: AnnotationBody):
        if body.sample_id is not None and body.sample_id != sample_id:
            raise HTTPException(
                status_code=422,
                detail="body sample_id does not match the path sample id",
            )
        if body.halluc_type is not None and body.halluc_type not in {"A", "B", "C"}:
            raise HTTPException(status_code=422, detail="halluc_type must be A, B or C")
        try:
            annotation = store.annotate(
                sample_id, body.hallucinated, body.halluc_type, body.annotator
            )
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        except CorpusError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "hallucinated": annotation.hallucinated,
            "type": annotation.halluc_type.value if annotation.halluc_type else None,
            "annotator": annotation.annotator,
            "timestamp": annotation.timestamp,
        }

    @app.get("/api/audio/{sample_id}")
    def get_audio(sample_id: str, request: Request):
        sample = store.get_sample(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        path = (audio_root / sample.audio_ref).resolve()
        if audio_root not in path.parents and path != audio_root:
            raise HTTPException(status_code=403, detail="audio_ref escapes the audio root")
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"audio file missing: {sample.audio_ref}")
        data = path.read_bytes()
        media_type = _AUDIO_TYPES.get(path.suffix.lower(), "application/octet-stream")
        headers = {"Accept-Ranges": "bytes"}
        range_header = request.headers.get("range")
        if range_header:
            parsed = _parse_range(range_header, len(data))
            if parsed is not None:
                start, end = parsed
                headers["Content-Range"] = f"bytes {start}-{end}/{len(data)}"
                return Response(
                    content=data[start : end + 1],
                    status_code=206,
                    media_type=media_type,
                    headers=headers,
                )
        return Response(content=data, media_type=media_type, headers=headers)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index():
            return (
                "<html><body><h1>audiohalluc annotation service</h1>"
                "<p>No UI bundle configured (pass --ui-dir with built assets).</p>"
                "<p>API: GET /api/samples/next, GET /api/samples/{id}, "
                "PUT /api/samples/{id}/annotation, GET /api/progress, "
                "GET /api/audio/{id}</p></body></html>"
            )

    return app
