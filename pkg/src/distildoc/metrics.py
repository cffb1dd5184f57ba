"""Evaluation metrics: accuracy, ECE, AURC and ANLS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class PredictionRecord:
    """Top-1 confidence and correctness of one prediction."""

    confidence: float
    correct: bool
    probabilities: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0.0 < self.confidence <= 1.0:
            raise DomainError(f"confidence must lie in (0, 1], got {self.confidence}")

    @classmethod
    def from_probabilities(cls, probs, label: int) -> "PredictionRecord":
        try:
            p = np.asarray(probs, dtype=np.float64)
        except (TypeError, ValueError):
            raise DomainError("probabilities must be a list of numbers") from None
        if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
            raise DomainError(f"probabilities must be a non-empty finite vector, got shape {p.shape}")
        if isinstance(label, bool) or not isinstance(label, (int, np.integer)):
            raise DomainError(f"label must be an integer, got {label!r}")
        pred = int(np.argmax(p))
        return cls(float(p[pred]), pred == int(label), tuple(float(v) for v in p))

    @property
    def prediction(self) -> int | None:
        if self.probabilities is None:
            return None
        return int(np.argmax(self.probabilities))


@dataclass(frozen=True)
class RiskCoveragePoint:
    coverage: float
    selective_risk: float


def _arrays(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    if len(records) == 0:
        raise DomainError("metrics need at least one record")
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([bool(r.correct) for r in records], dtype=bool)
    return conf, correct


def accuracy(records: Sequence[PredictionRecord]) -> float:
    _, correct = _arrays(records)
    return float(correct.mean())


def ece(records: Sequence[PredictionRecord], n_bins: int = 10) -> float:
    """Expected calibration error over equal-width bins (lo, hi] on (0, 1]."""
    if n_bins < 1:
        raise DomainError(f"n_bins must be positive, got {n_bins}")
    conf, correct = _arrays(records)
    edges = np.arange(n_bins + 1) / n_bins
    # side="left" puts conf in bin b iff edges[b] < conf <= edges[b+1]
    bins = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    n = conf.size
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(correct[mask].mean() - conf[mask].mean())
        total += count / n * gap
    return float(total)


def risk_coverage_curve(records: Sequence[PredictionRecord]) -> list[RiskCoveragePoint]:
    """Selective risk at coverage i/N, keeping the i most confident predictions.

    Confidence ties keep their input order, so the curve depends on that order
    when ties exist.
    """
    conf, correct = _arrays(records)
    order = np.argsort(-conf, kind="stable")
    errors = np.cumsum(~correct[order])
    n = conf.size
    i = np.arange(1, n + 1)
    risks = errors / i
    return [RiskCoveragePoint(float(c), float(r)) for c, r in zip(i / n, risks)]


def aurc(records: Sequence[PredictionRecord]) -> float:
    """Area under the risk-coverage curve as the mean risk over all N coverages."""
    conf, correct = _arrays(records)
    order = np.argsort(-conf, kind="stable")
    errors = np.cumsum(~correct[order])
    return float(np.mean(errors / np.arange(1, conf.size + 1)))


def metrics_report(records: Sequence[PredictionRecord], n_bins: int = 10, anls: float | None = None) -> dict:
    report = {
        "n": len(records),
        "accuracy": accuracy(records),
        "ece": {"n_bins": n_bins, "value": ece(records, n_bins)},
        "aurc": aurc(records),
    }
    if anls is not None:
        report["anls"] = anls
    return report


# ANLS -------------------------------------------------------------------------

def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


def nls(prediction: str, gold: str) -> float:
    """Normalized Levenshtein similarity of two already-normalized strings."""
    longest = max(len(prediction), len(gold))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(prediction, gold) / longest


def anls_single(prediction: str, golds: Sequence[str], threshold: float = 0.5) -> float:
    if isinstance(golds, str):
        golds = [golds]
    if len(golds) == 0:
        raise DomainError("at least one gold answer is required")
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"threshold must lie in [0, 1], got {threshold}")
    pred = normalize_answer(prediction)
    best = max(nls(pred, normalize_answer(g)) for g in golds)
    return best if best >= threshold else 0.0


def anls_dataset(items: Iterable[tuple[str, Sequence[str]]], threshold: float = 0.5) -> float:
    scores = [anls_single(p, g, threshold) for p, g in items]
    if not scores:
        raise DomainError("ANLS over an empty dataset")
    return float(np.mean(scores))
