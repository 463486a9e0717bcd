"""Corpus data model and persistence.

A corpus is an ordered collection of samples, each one a generated
response sentence tied to an audio clip, with an optional human
annotation (hallucinated yes/no plus a type for hallucinated sentences).

On-disk format is UTF-8 JSON Lines: one sample object per line with keys
``id``, ``audio_ref``, ``prompt``, ``response``, ``split`` and
``annotation``. Unknown keys are preserved on round trip. Corpus-level
metadata, when present, is kept in a single leading ``{"_meta": ...}``
line so that every other line stays a plain sample record.

Corpus values are treated as immutable after load: mutation happens by
producing a new value (see :func:`assign_splits`) or through the
annotation service's serialized writer.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

DEFAULT_PROMPT = "What do you hear?"


class CorpusError(Exception):
    """Malformed corpus file or invalid corpus operation."""


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNASSIGNED = "unassigned"


class HallucType(str, Enum):
    """Hallucination categories.

    A: both object and action are wrong.
    B: object is right, action is wrong.
    C: action is right, object is wrong.
    """

    A = "A"
    B = "B"
    C = "C"


def utc_now_iso() -> str:
    """Current UTC instant as an ISO-8601 string with a ``Z`` suffix."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class Annotation:
    """A single hallucination judgement for one sample.

    ``halluc_type`` is present if and only if ``hallucinated`` is true;
    both directions are enforced here and at every mutation point.
    """

    hallucinated: bool
    halluc_type: Optional[HallucType] = None
    annotator: Optional[str] = None
    timestamp: str = field(default_factory=utc_now_iso)

    def __post_init__(self) -> None:
        if self.hallucinated and self.halluc_type is None:
            raise CorpusError("hallucinated annotation requires a type (A, B or C)")
        if not self.hallucinated and self.halluc_type is not None:
            raise CorpusError("halluc_type is only valid when hallucinated is true")


@dataclass(frozen=True)
class Sample:
    """One generated response sentence tied to an audio clip."""

    id: str
    audio_ref: str
    response: str
    prompt: str = DEFAULT_PROMPT
    split: Split = Split.UNASSIGNED
    annotation: Optional[Annotation] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("sample id must be non-empty")
        if not self.response:
            raise CorpusError("sample response must be non-empty")


@dataclass
class Corpus:
    """Ordered collection of samples plus free-form metadata."""

    samples: list[Sample] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    _by_id: dict[str, Sample] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        by_id: dict[str, Sample] = {}
        for sample in self.samples:
            if sample.id in by_id:
                raise CorpusError(f"duplicate sample id {sample.id!r}")
            by_id[sample.id] = sample
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._by_id

    def get(self, sample_id: str) -> Optional[Sample]:
        return self._by_id.get(sample_id)

    def in_split(self, split: Split) -> list[Sample]:
        return [s for s in self.samples if s.split == split]

    def with_annotation(self, sample_id: str, annotation: Annotation) -> "Corpus":
        """New corpus with one sample's annotation replaced (last write wins)."""
        if sample_id not in self._by_id:
            raise CorpusError(f"unknown sample id {sample_id!r}")
        samples = [
            replace(s, annotation=annotation) if s.id == sample_id else s
            for s in self.samples
        ]
        return Corpus(samples=samples, metadata=dict(self.metadata))


def annotation_to_json(ann: Annotation) -> dict:
    return {
        "hallucinated": ann.hallucinated,
        "type": ann.halluc_type.value if ann.halluc_type is not None else None,
        "annotator": ann.annotator,
        "timestamp": ann.timestamp,
    }


def sample_to_json(sample: Sample) -> dict:
    rec = dict(sample.extra)
    rec.update(
        {
            "id": sample.id,
            "audio_ref": sample.audio_ref,
            "prompt": sample.prompt,
            "response": sample.response,
            "split": sample.split.value,
            "annotation": annotation_to_json(sample.annotation)
            if sample.annotation is not None
            else None,
        }
    )
    return rec


_KNOWN_KEYS = {"id", "audio_ref", "prompt", "response", "split", "annotation"}


def annotation_from_json(obj: dict) -> Annotation:
    if not isinstance(obj, dict):
        raise CorpusError("annotation must be an object or null")
    raw_type = obj.get("type")
    halluc_type = HallucType(raw_type) if raw_type is not None else None
    if "hallucinated" not in obj or not isinstance(obj["hallucinated"], bool):
        raise CorpusError("annotation requires a boolean 'hallucinated' field")
    return Annotation(
        hallucinated=obj["hallucinated"],
        halluc_type=halluc_type,
        annotator=obj.get("annotator"),
        timestamp=obj.get("timestamp", ""),
    )


def sample_from_json(obj: dict) -> Sample:
    if not isinstance(obj, dict):
        raise CorpusError("sample record must be an object")
    for key in ("id", "audio_ref", "response"):
        if key not in obj:
            raise CorpusError(f"sample record missing required key {key!r}")
    try:
        split = Split(obj.get("split", "unassigned"))
    except ValueError as exc:
        raise CorpusError(f"unknown split {obj.get('split')!r}") from exc
    raw_ann = obj.get("annotation")
    try:
        annotation = annotation_from_json(raw_ann) if raw_ann is not None else None
    except ValueError as exc:  # bad HallucType value
        raise CorpusError(str(exc)) from exc
    extra = {k: v for k, v in obj.items() if k not in _KNOWN_KEYS}
    return Sample(
        id=str(obj["id"]),
        audio_ref=str(obj["audio_ref"]),
        response=str(obj["response"]),
        prompt=str(obj.get("prompt", DEFAULT_PROMPT)),
        split=split,
        annotation=annotation,
        extra=extra,
    )


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSON-Lines corpus file, preserving input order.

    Raises :class:`CorpusError` with the offending line number for
    malformed lines and duplicate ids.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    metadata: dict = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if lineno == 1 and isinstance(obj, dict) and "_meta" in obj and "id" not in obj:
                metadata = dict(obj["_meta"])
                continue
            try:
                sample = sample_from_json(obj)
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
            if sample.id in seen:
                raise CorpusError(
                    f"line {lineno}: duplicate sample id {sample.id!r} "
                    f"(first seen on line {seen[sample.id]})"
                )
            seen[sample.id] = lineno
            samples.append(sample)
    return Corpus(samples=samples, metadata=metadata)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Atomically write a corpus file (temp file + rename).

    ``load_corpus(save_corpus(c))`` reproduces ``c`` field for field; a
    failed write leaves no partial file behind.
    """
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(
        prefix=path.name + ".", suffix=".tmp", dir=str(path.parent)
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            if corpus.metadata:
                fh.write(json.dumps({"_meta": corpus.metadata}, ensure_ascii=False) + "\n")
            for sample in corpus.samples:
                fh.write(json.dumps(sample_to_json(sample), ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def assign_splits(
    corpus: Corpus,
    counts: tuple[int, int, int],
    seed: int,
    require_annotated: bool = False,
) -> Corpus:
    """Assign train/val/test splits by seeded shuffle.

    The sorted sample ids are permuted with NumPy's PCG64 generator and
    sliced into train, then val, then test; leftovers become unassigned.
    The assignment is a pure function of (id set, counts, seed) so corpus
    order is irrelevant.
    """
    n_train, n_val, n_test = counts
    if min(n_train, n_val, n_test) < 0:
        raise CorpusError("split counts must be non-negative")
    total = n_train + n_val + n_test
    if total > len(corpus):
        raise CorpusError(
            f"split counts ({n_train}+{n_val}+{n_test}={total}) exceed corpus size {len(corpus)}"
        )
    if require_annotated:
        missing = [s.id for s in corpus if s.annotation is None]
        if missing:
            raise CorpusError(
                f"{len(missing)} unannotated sample(s), first: {missing[0]!r}"
            )
    ids = sorted(s.id for s in corpus)
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    assignment: dict[str, Split] = {}
    for sid in shuffled[:n_train]:
        assignment[sid] = Split.TRAIN
    for sid in shuffled[n_train : n_train + n_val]:
        assignment[sid] = Split.VAL
    for sid in shuffled[n_train + n_val : total]:
        assignment[sid] = Split.TEST
    samples = [
        replace(s, split=assignment.get(s.id, Split.UNASSIGNED)) for s in corpus
    ]
    return Corpus(samples=samples, metadata=dict(corpus.metadata))


def prevalence(corpus: Corpus, split: Split) -> float:
    """Fraction of hallucinated samples in a fully annotated split."""
    members = corpus.in_split(split)
    if not members:
        raise CorpusError(f"split {split.value!r} is empty")
    for sample in members:
        if sample.annotation is None:
            raise CorpusError(
                f"sample {sample.id!r} in split {split.value!r} is unannotated"
            )
    positives = sum(1 for s in members if s.annotation.hallucinated)
    return positives / len(members)
