"""Extraction pipeline: corpus in, two embedding stores out.

One audio record and one text record per sample, ids matching the
corpus, processed in corpus order with batched encoder calls. Strict
mode fails on the first unresolvable audio file; lenient mode skips
those samples (in both stores, to keep the pair aligned) and reports
them. Deterministic given fixed weights and deterministic inference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus_reader import read_corpus_rows
from .encoders import EncoderError, ExtractorConfig, load_encoder
from .store_writer import write_embedding_store
from .strip import strip_prefix


@dataclass
class ExtractResult:
    encoder_name: str
    dim: int
    embedded: int
    skipped: list[str] = field(default_factory=list)


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def extract(config: ExtractorConfig) -> ExtractResult:
    rows = read_corpus_rows(config.corpus_path)
    encoder = load_encoder(config)

    usable = []
    skipped: list[str] = []
    for row in rows:
        path = (config.audio_root / row.audio_ref).resolve()
        if not path.is_file():
            if not config.lenient:
                raise EncoderError(
                    f"audio for sample {row.id!r} not readable: {path}"
                )
            skipped.append(row.id)
            continue
        usable.append((row, path))

    ids = [row.id for row, _ in usable]
    texts = [
        strip_prefix(row.response) if config.strip_prefix_for_text else row.response
        for row, _ in usable
    ]
    paths = [path for _, path in usable]

    audio_parts = [encoder.embed_audio(batch) for batch in _batches(paths, config.batch_size)]
    text_parts = [encoder.embed_text(batch) for batch in _batches(texts, config.batch_size)]
    audio_vecs = (
        np.concatenate(audio_parts, axis=0)
        if audio_parts
        else np.zeros((0, encoder.dim), dtype=np.float32)
    )
    text_vecs = (
        np.concatenate(text_parts, axis=0)
        if text_parts
        else np.zeros((0, encoder.dim), dtype=np.float32)
    )
    if audio_vecs.shape[0] != len(ids) or text_vecs.shape[0] != len(ids):
        raise EncoderError(
            f"encoder returned {audio_vecs.shape[0]} audio / {text_vecs.shape[0]} text "
            f"embeddings for {len(ids)} samples"
        )

    write_embedding_store(config.out_audio, "audio", encoder.name, ids, audio_vecs)
    write_embedding_store(config.out_text, "text", encoder.name, ids, text_vecs)
    return ExtractResult(
        encoder_name=encoder.name,
        dim=encoder.dim,
        embedded=len(ids),
        skipped=skipped,
    )
