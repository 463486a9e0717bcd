"""Writer for the binary embedding-store interchange format.

Little-endian layout, written atomically:

    magic "AEMB" | version u32 = 1 | dim u32 | count u64 |
    modality u8 (0 = audio, 1 = text) |
    encoder_name: u16 length + UTF-8 bytes |
    count records of (id: u16 length + UTF-8 bytes, dim float32)

The consumer validates this file bit-exactly, so vectors are emitted as
raw float32 with no post-processing.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"AEMB"
VERSION = 1
MODALITY_CODES = {"audio": 0, "text": 1}


class StoreWriteError(Exception):
    pass


def write_embedding_store(
    path: str | Path,
    modality: str,
    encoder_name: str,
    ids: Sequence[str],
    vectors: np.ndarray,
) -> None:
    if modality not in MODALITY_CODES:
        raise StoreWriteError(f"modality must be 'audio' or 'text', got {modality!r}")
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise StoreWriteError(f"vectors must be 2-D (n, dim), got shape {vectors.shape}")
    if len(ids) != vectors.shape[0]:
        raise StoreWriteError(
            f"{len(ids)} ids but {vectors.shape[0]} vectors"
        )
    if len(set(ids)) != len(ids):
        raise StoreWriteError("duplicate ids")
    if not np.all(np.isfinite(vectors)):
        raise StoreWriteError("vectors contain non-finite values")
    dim = vectors.shape[1]
    if dim < 1:
        raise StoreWriteError("dim must be positive")

    name_bytes = encoder_name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise StoreWriteError("encoder_name too long")
    parts = [
        MAGIC,
        struct.pack("<IIQB", VERSION, dim, len(ids), MODALITY_CODES[modality]),
        struct.pack("<H", len(name_bytes)),
        name_bytes,
    ]
    for sample_id, vec in zip(ids, vectors):
        id_bytes = sample_id.encode("utf-8")
        if not id_bytes or len(id_bytes) > 0xFFFF:
            raise StoreWriteError(f"bad record id {sample_id!r}")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(vec.astype("<f4", copy=False).tobytes())
    blob = b"".join(parts)

    path = Path(path)
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
