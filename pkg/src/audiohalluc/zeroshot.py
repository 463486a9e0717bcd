"""Zero-shot hallucination classifier.

Scores each (audio, sentence) pair by the cosine similarity of its
embeddings and outputs "hallucinated" when the score is strictly below
the threshold alpha; a score exactly equal to alpha is therefore not
hallucinated. Cosine is accumulated in float64 even over float32 stored
vectors, so results are deterministic and safe against cancellation.

All functions here are pure; batch classification may fan out across
threads as long as output stays ordered by input index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evaluation import compute_metrics


@dataclass(frozen=True)
class ZeroShotConfig:
    """Threshold configuration.

    ``strip_prefix_for_text`` records whether the text side was embedded
    after prefix stripping; it is provenance metadata only and does not
    change classification.
    """

    alpha: float
    strip_prefix_for_text: bool = False

    def __post_init__(self) -> None:
        if not -1.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [-1, 1], got {self.alpha}")


@dataclass(frozen=True)
class Verdict:
    sample_id: str
    score: float
    hallucinated: bool


def cosine(u, v) -> float:
    """Cosine similarity dot(u,v)/(|u||v|), clamped into [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError("cosine expects 1-D vectors")
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        raise ValueError("cosine is undefined for zero-norm vectors")
    score = float(np.dot(u, v)) / (norm_u * norm_v)
    return min(1.0, max(-1.0, score))


def classify(audio_vec, text_vec, config: ZeroShotConfig, sample_id: str = "") -> Verdict:
    """Label a pair hallucinated iff its cosine score is strictly below alpha."""
    score = cosine(audio_vec, text_vec)
    return Verdict(sample_id=sample_id, score=score, hallucinated=score < config.alpha)


def default_grid(points: int = 201) -> np.ndarray:
    """Evenly spaced candidate thresholds over [0, 1] (default step 0.005)."""
    if points < 1:
        raise ValueError("grid needs at least one point")
    return np.linspace(0.0, 1.0, points)


def calibrate_alpha(
    val_triples: Sequence[tuple[bool, np.ndarray, np.ndarray]],
    grid: Sequence[float],
) -> tuple[float, float]:
    """Pick the grid alpha maximizing F1 on validation triples.

    Evaluates every grid point; ties are broken by the smallest alpha.
    Returns (best_alpha, best_f1) with F1 as a fraction in [0, 1].
    Refuses single-class validation sets, where precision is degenerate
    at every threshold and F1 cannot rank candidates.
    """
    grid_arr = [float(a) for a in grid]
    if not grid_arr:
        raise ValueError("calibration grid is empty")
    if not val_triples:
        raise ValueError("validation set is empty")
    labels = [bool(label) for label, _, _ in val_triples]
    if all(labels) or not any(labels):
        raise ValueError(
            "validation set contains a single class; F1 is undefined for calibration"
        )
    scores = np.array([cosine(a, t) for _, a, t in val_triples])
    labels_arr = np.asarray(labels, dtype=bool)

    best_alpha = None
    best_f1 = -1.0
    for alpha in grid_arr:
        preds = scores < alpha
        f1 = compute_metrics(preds.tolist(), labels_arr.tolist()).f1
        if f1 > best_f1 or (f1 == best_f1 and alpha < best_alpha):
            best_alpha, best_f1 = alpha, f1
    return best_alpha, best_f1


def verdict_to_json(verdict: Verdict, alpha: float) -> dict:
    """One verdict-batch record: {sample_id, score, hallucinated, alpha}."""
    return {
        "sample_id": verdict.sample_id,
        "score": verdict.score,
        "hallucinated": verdict.hallucinated,
        "alpha": alpha,
    }
