"""Classification metrics and reports.

Hallucinated is the positive class throughout. Metric-level functions
return fractions in [0, 1]; :class:`EvaluationReport` carries the same
numbers as percentages, which is how human-facing tables display them
(one decimal place; machine output keeps full precision).

Any 0/0 ratio (no positives predicted, or no positives present) is
defined as 0 and flagged in ``degenerate`` rather than raising, so
single-class edge cases still produce a total report.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import HallucType

BREAKDOWN_KEYS = ("not_hallucinated", "A", "B", "C")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    """Recall/precision/F1 as fractions, plus which ratios were 0/0."""

    recall: float
    precision: float
    f1: float
    degenerate: tuple[str, ...] = ()


def confusion_counts(
    predictions: Sequence[bool], labels: Sequence[bool]
) -> ConfusionCounts:
    if len(predictions) != len(labels):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if not labels:
        raise ValueError("cannot evaluate an empty prediction set")
    tp = fp = tn = fn = 0
    for pred, label in zip(predictions, labels):
        if pred and label:
            tp += 1
        elif pred and not label:
            fp += 1
        elif not pred and label:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _safe_ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def metrics_from_counts(counts: ConfusionCounts) -> Metrics:
    recall, r_deg = _safe_ratio(counts.tp, counts.tp + counts.fn)
    precision, p_deg = _safe_ratio(counts.tp, counts.tp + counts.fp)
    f1 = f1_score(precision, recall)
    degenerate = tuple(
        name for name, deg in (("recall", r_deg), ("precision", p_deg)) if deg
    )
    return Metrics(recall=recall, precision=precision, f1=f1, degenerate=degenerate)


def compute_metrics(
    predictions: Sequence[bool], labels: Sequence[bool]
) -> Metrics:
    """Recall, precision and F1 with hallucinated as the positive class."""
    return metrics_from_counts(confusion_counts(predictions, labels))


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean 2PR/(P+R); scale-agnostic, so it accepts fractions or percents."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def misclassification_breakdown(
    predictions: Sequence[bool],
    labels: Sequence[bool],
    types: Sequence[Optional[HallucType]],
) -> dict[str, int]:
    """Count misclassified samples per category.

    False positives are counted under ``not_hallucinated`` (the model
    said hallucinated but the ground truth is not); false negatives are
    counted under their annotated hallucination type.
    """
    if not (len(predictions) == len(labels) == len(types)):
        raise ValueError("predictions, labels and types must have equal lengths")
    breakdown = {key: 0 for key in BREAKDOWN_KEYS}
    for i, (pred, label, halluc_type) in enumerate(zip(predictions, labels, types)):
        if label and halluc_type is None:
            raise ValueError(f"hallucinated label at index {i} is missing its type")
        if pred and not label:
            breakdown["not_hallucinated"] += 1
        elif not pred and label:
            breakdown[HallucType(halluc_type).value] += 1
    return breakdown


@dataclass(frozen=True)
class RandomBaselineResult:
    """Fair-coin predictor: closed form plus a Monte-Carlo estimate.

    ``analytic``: expected (recall, precision, f1) = (0.5, prevalence,
    2*0.5*p/(0.5+p)). ``mc_mean`` / ``mc_std`` are per-trial means and
    standard deviations over ``trials`` simulated predictors; all values
    are fractions.
    """

    analytic: Metrics
    mc_mean: Metrics
    mc_std: Metrics
    trials: int
    prevalence: float


def analytic_random_metrics(prevalence: float) -> Metrics:
    recall = 0.5
    precision = prevalence
    return Metrics(recall=recall, precision=precision, f1=f1_score(precision, recall))


def random_baseline(
    labels: Sequence[bool], trials: int, seed: int
) -> RandomBaselineResult:
    """Monte-Carlo fair-coin predictor averaged over ``trials`` runs."""
    labels_arr = np.asarray(labels, dtype=bool)
    if labels_arr.size == 0:
        raise ValueError("labels must be non-empty")
    if labels_arr.all() or not labels_arr.any():
        raise ValueError("random baseline needs both classes present")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    p = float(labels_arr.mean())
    n_pos = int(labels_arr.sum())

    rng = np.random.default_rng(seed)
    preds = rng.random((trials, labels_arr.size)) < 0.5
    tp = (preds & labels_arr).sum(axis=1)
    pred_pos = preds.sum(axis=1)
    recall = tp / n_pos
    precision = np.divide(
        tp, pred_pos, out=np.zeros(trials, dtype=float), where=pred_pos > 0
    )
    pr_sum = precision + recall
    f1 = np.divide(
        2.0 * precision * recall, pr_sum,
        out=np.zeros(trials, dtype=float), where=pr_sum > 0,
    )

    def _stats(arr: np.ndarray) -> tuple[float, float]:
        return float(arr.mean()), float(arr.std())

    r_mean, r_std = _stats(recall)
    p_mean, p_std = _stats(precision)
    f_mean, f_std = _stats(f1)
    return RandomBaselineResult(
        analytic=analytic_random_metrics(p),
        mc_mean=Metrics(recall=r_mean, precision=p_mean, f1=f_mean),
        mc_std=Metrics(recall=r_std, precision=p_std, f1=f_std),
        trials=trials,
        prevalence=p,
    )


@dataclass(frozen=True)
class EvaluationReport:
    """Percent metrics, confusion counts and the per-type error breakdown."""

    recall: float
    precision: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    breakdown: dict[str, int] = field(default_factory=dict)
    degenerate: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def build_report(
    predictions: Sequence[bool],
    labels: Sequence[bool],
    types: Sequence[Optional[HallucType]],
) -> EvaluationReport:
    counts = confusion_counts(predictions, labels)
    metrics = metrics_from_counts(counts)
    breakdown = misclassification_breakdown(predictions, labels, types)
    return EvaluationReport(
        recall=metrics.recall * 100.0,
        precision=metrics.precision * 100.0,
        f1=metrics.f1 * 100.0,
        tp=counts.tp,
        fp=counts.fp,
        tn=counts.tn,
        fn=counts.fn,
        breakdown=breakdown,
        degenerate=metrics.degenerate,
    )


def report_to_json(report: EvaluationReport) -> dict:
    """Machine-readable report, full precision."""
    return {
        "recall": report.recall,
        "precision": report.precision,
        "f1": report.f1,
        "counts": {
            "tp": report.tp,
            "fp": report.fp,
            "tn": report.tn,
            "fn": report.fn,
            "total": report.total,
        },
        "breakdown": dict(report.breakdown),
        "degenerate": list(report.degenerate),
    }


def render_report(report: EvaluationReport, title: str = "Evaluation") -> str:
    """Aligned plain-text tables; percentages shown to one decimal place."""
    lines = [
        title,
        "=" * len(title),
        "",
        f"{'':<14}{'Recall':>8}{'Precision':>11}{'F1':>8}",
        f"{'scores':<14}{report.recall:>8.1f}{report.precision:>11.1f}{report.f1:>8.1f}",
        "",
        f"counts: tp={report.tp} fp={report.fp} tn={report.tn} fn={report.fn} "
        f"(n={report.total})",
        "",
        "misclassified samples",
        f"{'Not hallucinated':<18}{'Type (A)':>10}{'Type (B)':>10}{'Type (C)':>10}",
        f"{report.breakdown.get('not_hallucinated', 0):<18}"
        f"{report.breakdown.get('A', 0):>10}"
        f"{report.breakdown.get('B', 0):>10}"
        f"{report.breakdown.get('C', 0):>10}",
    ]
    if report.degenerate:
        lines.append("")
        lines.append(
            "note: degenerate 0/0 ratio(s) defined as 0: " + ", ".join(report.degenerate)
        )
    return "\n".join(lines) + "\n"
