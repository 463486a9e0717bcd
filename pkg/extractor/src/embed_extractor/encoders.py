"""Encoder pair protocol and registry.

An encoder pair maps audio files and sentences into one joint embedding
space. The two built-in families (ms-clap, laion-clap) import their
packages lazily; loading them downloads pretrained weights on first
use, so environments without the packages or without network get an
actionable error instead of an import crash. Tests and other tooling
can register additional encoders through :func:`register_encoder`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class ExtractorConfig:
    """Everything one extraction run needs."""

    encoder: str
    corpus_path: Path
    audio_root: Path
    out_audio: Path
    out_text: Path
    strip_prefix_for_text: bool = False
    batch_size: int = 8
    device: str = "cpu"
    window_policy: str = "center"  # or "mean" for mean-pooled sliding windows
    lenient: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise EncoderError("batch_size must be >= 1")
        if self.window_policy not in ("center", "mean"):
            raise EncoderError(f"unknown window policy {self.window_policy!r}")


class EncoderPair(Protocol):
    """Joint audio-text encoder with a recorded checkpoint identity."""

    name: str  # resolved checkpoint identifier, recorded in store headers
    dim: int

    def embed_audio(self, paths: Sequence[Path]) -> np.ndarray: ...

    def embed_text(self, texts: Sequence[str]) -> np.ndarray: ...


EncoderFactory = Callable[[ExtractorConfig], EncoderPair]

_REGISTRY: dict[str, EncoderFactory] = {}


def register_encoder(family: str, factory: EncoderFactory) -> None:
    _REGISTRY[family] = factory


def available_encoders() -> list[str]:
    return sorted(_REGISTRY)


def load_encoder(config: ExtractorConfig) -> EncoderPair:
    if config.encoder not in _REGISTRY:
        raise EncoderError(
            f"unknown encoder family {config.encoder!r}; "
            f"available: {', '.join(available_encoders())}"
        )
    return _REGISTRY[config.encoder](config)


def _as_float32_matrix(raw, what: str) -> np.ndarray:
    arr = np.asarray(raw)
    if hasattr(raw, "detach"):  # torch tensor
        arr = raw.detach().cpu().numpy()
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise EncoderError(f"{what} embeddings have shape {arr.shape}, expected (n, dim)")
    return arr


class MsClapEncoder:
    """Wrapper over the msclap package (2023 checkpoint by default)."""

    def __init__(self, config: ExtractorConfig, version: str = "2023"):
        try:
            from msclap import CLAP
        except ImportError as exc:
            raise EncoderError(
                "encoder family 'ms-clap' needs the msclap package "
                "(pip install msclap); loading it downloads the checkpoint"
            ) from exc
        self._model = CLAP(version=version, use_cuda=config.device != "cpu")
        self.name = f"ms-clap-{version}"
        probe = _as_float32_matrix(self._model.get_text_embeddings(["probe"]), "text")
        self.dim = probe.shape[1]

    def embed_audio(self, paths: Sequence[Path]) -> np.ndarray:
        raw = self._model.get_audio_embeddings([str(p) for p in paths])
        return _as_float32_matrix(raw, "audio")

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        return _as_float32_matrix(self._model.get_text_embeddings(list(texts)), "text")


class LaionClapEncoder:
    """Wrapper over the laion_clap package (default public checkpoint)."""

    def __init__(self, config: ExtractorConfig):
        try:
            import laion_clap
        except ImportError as exc:
            raise EncoderError(
                "encoder family 'laion-clap' needs the laion-clap package "
                "(pip install laion-clap); loading it downloads the checkpoint"
            ) from exc
        self._model = laion_clap.CLAP_Module(enable_fusion=False, device=config.device)
        self._model.load_ckpt()  # default pretrained checkpoint
        self.name = "laion-clap-htsat-fused-630k"
        probe = _as_float32_matrix(
            self._model.get_text_embedding(["probe", "probe"], use_tensor=False), "text"
        )
        self.dim = probe.shape[1]

    def embed_audio(self, paths: Sequence[Path]) -> np.ndarray:
        raw = self._model.get_audio_embedding_from_filelist(
            x=[str(p) for p in paths], use_tensor=False
        )
        return _as_float32_matrix(raw, "audio")

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        raw = self._model.get_text_embedding(list(texts), use_tensor=False)
        return _as_float32_matrix(raw, "text")


register_encoder("ms-clap", MsClapEncoder)
register_encoder("laion-clap", LaionClapEncoder)
