"""Versioned on-disk store for fixed-dimension embedding vectors.

One store per (modality, encoder). The binary layout is little-endian
and language-neutral so encoder outputs produced in another ecosystem
round trip bit-exactly:

    magic "AEMB" | version u32 = 1 | dim u32 | count u64 |
    modality u8 (0 = audio, 1 = text) |
    encoder_name: u16 length + UTF-8 bytes |
    count records, each: id (u16 length + UTF-8 bytes) + dim float32

Vectors are stored exactly as produced by the encoder; consumers apply
any normalization themselves. Stores are written once and read many,
and a loaded store is safe to share across threads read-only.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .corpus import Corpus, Sample, Split

MAGIC = b"AEMB"
VERSION = 1

_MODALITY_CODES = {"audio": 0, "text": 1}
_CODE_MODALITIES = {v: k for k, v in _MODALITY_CODES.items()}


class StoreError(Exception):
    """Corrupt store file or invalid store operation."""


class EmbeddingStore:
    """Id-indexed map of fixed-dimension float32 vectors."""

    def __init__(self, modality: str, encoder_name: str, dim: int):
        if modality not in _MODALITY_CODES:
            raise StoreError(f"modality must be 'audio' or 'text', got {modality!r}")
        if dim < 1:
            raise StoreError(f"dim must be positive, got {dim}")
        self.modality = modality
        self.encoder_name = encoder_name
        self.dim = dim
        self.records: dict[str, np.ndarray] = {}

    def add(self, sample_id: str, vector) -> None:
        """Insert a vector, validating dimension and finiteness first."""
        if not sample_id:
            raise StoreError("record id must be non-empty")
        if sample_id in self.records:
            raise StoreError(f"duplicate record id {sample_id!r}")
        if len(sample_id.encode("utf-8")) > 0xFFFF:
            raise StoreError(f"record id too long: {sample_id[:32]!r}...")
        vec = np.asarray(vector, dtype=np.float32)
        if vec.ndim != 1 or vec.shape[0] != self.dim:
            raise StoreError(
                f"vector for {sample_id!r} has shape {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise StoreError(f"vector for {sample_id!r} contains non-finite values")
        self.records[sample_id] = vec

    def get(self, sample_id: str) -> Optional[np.ndarray]:
        return self.records.get(sample_id)

    def ids(self) -> Iterator[str]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.records


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Atomically write a store file; ``read_store`` inverts it bit-exactly."""
    path = Path(path)
    name_bytes = store.encoder_name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise StoreError("encoder_name too long")
    parts = [
        MAGIC,
        struct.pack("<IIQB", VERSION, store.dim, len(store.records),
                    _MODALITY_CODES[store.modality]),
        struct.pack("<H", len(name_bytes)),
        name_bytes,
    ]
    for sample_id, vec in store.records.items():
        id_bytes = sample_id.encode("utf-8")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(vec.astype("<f4", copy=False).tobytes())
    blob = b"".join(parts)

    fd, tmp_name = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def read_store(path: str | Path) -> EmbeddingStore:
    """Read a store file, recovering vectors bit-exactly as float32.

    Rejects bad magic, unsupported versions, truncated files, trailing
    bytes, duplicate ids and non-finite components.
    """
    path = Path(path)
    if not path.exists():
        raise StoreError(f"store file not found: {path}")
    blob = path.read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise StoreError(f"truncated store file: expected {what} at byte {offset}")
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise StoreError(f"bad magic; not an embedding store: {path}")
    version, dim, count, modality_code = struct.unpack("<IIQB", take(17, "header"))
    if version != VERSION:
        raise StoreError(f"unsupported store version {version}")
    if modality_code not in _CODE_MODALITIES:
        raise StoreError(f"unknown modality code {modality_code}")
    (name_len,) = struct.unpack("<H", take(2, "encoder name length"))
    encoder_name = take(name_len, "encoder name").decode("utf-8")

    store = EmbeddingStore(_CODE_MODALITIES[modality_code], encoder_name, dim)
    vec_bytes = 4 * dim
    for i in range(count):
        (id_len,) = struct.unpack("<H", take(2, f"record {i} id length"))
        sample_id = take(id_len, f"record {i} id").decode("utf-8")
        vec = np.frombuffer(take(vec_bytes, f"record {i} vector"), dtype="<f4").copy()
        if sample_id in store.records:
            raise StoreError(f"duplicate record id {sample_id!r} in {path}")
        if not np.all(np.isfinite(vec)):
            raise StoreError(f"record {sample_id!r} contains non-finite values")
        store.records[sample_id] = vec
    if offset != len(blob):
        raise StoreError(
            f"trailing data: header count {count} but {len(blob) - offset} extra bytes"
        )
    return store


@dataclass
class AlignResult:
    """Corpus-ordered (sample, audio vector, text vector) triples.

    In lenient mode, split samples missing a vector are dropped and
    reported in ``missing_audio`` / ``missing_text``.
    """

    triples: list[tuple[Sample, np.ndarray, np.ndarray]] = field(default_factory=list)
    missing_audio: list[str] = field(default_factory=list)
    missing_text: list[str] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return len(set(self.missing_audio) | set(self.missing_text))


def align(
    corpus: Corpus,
    audio: EmbeddingStore,
    text: EmbeddingStore,
    split: Split,
    strict: bool = True,
) -> AlignResult:
    """Pair each split sample with its audio and text vectors, in corpus order."""
    result = AlignResult()
    for sample in corpus.in_split(split):
        a_vec = audio.get(sample.id)
        t_vec = text.get(sample.id)
        if a_vec is None:
            if strict:
                raise StoreError(f"sample {sample.id!r} missing from audio store")
            result.missing_audio.append(sample.id)
        if t_vec is None:
            if strict:
                raise StoreError(f"sample {sample.id!r} missing from text store")
            result.missing_text.append(sample.id)
        if a_vec is not None and t_vec is not None:
            result.triples.append((sample, a_vec, t_vec))
    return result
