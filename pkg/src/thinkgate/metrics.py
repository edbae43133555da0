"""Aggregation: routing outcomes, threshold sweeps, and calibration metrics.

The evaluation unit is a :class:`PairedInstance` holding one question's
cached long-mode and short-mode outcomes plus its scorer values. At a
threshold, each instance is routed to exactly one branch; accuracy, mean
generated tokens, and the short-mode ratio summarize the routed set.

Calibration metrics (ROC-AUC, ECE, Brier) compare scorer confidences
against the short-mode correctness bit. Each metric here has a brute-force
oracle twin in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .scorers import (
    LOWER_EXITS,
    ScoreValue,
    ScorerKind,
    decide,
    orientation_for,
    score_random,
)
from .answers import QuestionRecord


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given inputs (e.g. one-class labels)."""


@dataclass(frozen=True)
class BranchOutcome:
    """Summary of one cached generation: correctness and generated tokens."""

    correct: bool
    tokens: int

    def __post_init__(self) -> None:
        if self.tokens < 0:
            raise ValueError("token count must be >= 0")


@dataclass(frozen=True)
class PairedInstance:
    """One question's two cached branches plus all scorer values."""

    question_id: str
    thinking: BranchOutcome
    nothinking: BranchOutcome
    scores: Mapping[ScorerKind, ScoreValue] = field(default_factory=dict)


@dataclass(frozen=True)
class SweepPoint:
    """Routing outcome at one threshold."""

    lam: float
    accuracy: float
    mean_tokens: float
    nothinking_ratio: float
    n: int


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    brier: float
    roc_auc: float
    n_bins: int
    positives: int
    negatives: int


def compose_at_threshold(
    instances: Sequence[PairedInstance],
    scorer: ScorerKind,
    lam: float,
    alpha: float = 1.0,
) -> SweepPoint:
    """Route every instance at one threshold and aggregate the outcomes.

    Instances missing a value for ``scorer`` must be filtered out by the
    caller (the pipeline excludes and counts them); an empty list is an
    error.
    """
    if not instances:
        raise ValueError("cannot compose over an empty instance list")
    exits = 0
    correct = 0
    tokens = 0
    for inst in instances:
        try:
            score = inst.scores[scorer]
        except KeyError:
            raise ValueError(
                f"instance {inst.question_id!r} has no {scorer.value} score;"
                " filter missing-feature instances before composing"
            ) from None
        exit_flag = decide(score, lam, alpha).exit
        branch = inst.nothinking if exit_flag else inst.thinking
        exits += exit_flag
        correct += branch.correct
        tokens += branch.tokens
    n = len(instances)
    return SweepPoint(
        lam=lam,
        accuracy=correct / n,
        mean_tokens=tokens / n,
        nothinking_ratio=exits / n,
        n=n,
    )


def sweep_thresholds(
    instances: Sequence[PairedInstance],
    scorer: ScorerKind,
    lambdas: Sequence[float],
    alpha: float = 1.0,
) -> list[SweepPoint]:
    """One sweep point per threshold, in input order.

    For the entropy monitor the grid values act as the ceiling multiplier
    (its decision knob); for everything else they are the confidence
    threshold.
    """
    if not lambdas:
        raise ValueError("lambda grid must be non-empty")
    if any(not 0.0 <= v <= 1.0 for v in lambdas):
        raise ValueError("lambda grid values must lie in [0,1]")
    lower = orientation_for(scorer) == LOWER_EXITS
    return [
        compose_at_threshold(
            instances, scorer, lam=v, alpha=v if lower else alpha
        )
        for v in lambdas
    ]


DEFAULT_LAMBDA_GRID = tuple(i / 10 for i in range(1, 11))


def thinking_baseline(instances: Sequence[PairedInstance]) -> SweepPoint:
    """Aggregate as if every instance ran the long mode."""
    if not instances:
        raise ValueError("cannot aggregate an empty instance list")
    n = len(instances)
    return SweepPoint(
        lam=float("nan"),
        accuracy=sum(i.thinking.correct for i in instances) / n,
        mean_tokens=sum(i.thinking.tokens for i in instances) / n,
        nothinking_ratio=0.0,
        n=n,
    )


def nothinking_baseline(instances: Sequence[PairedInstance]) -> SweepPoint:
    """Aggregate as if every instance ran the short mode."""
    if not instances:
        raise ValueError("cannot aggregate an empty instance list")
    n = len(instances)
    return SweepPoint(
        lam=float("nan"),
        accuracy=sum(i.nothinking.correct for i in instances) / n,
        mean_tokens=sum(i.nothinking.tokens for i in instances) / n,
        nothinking_ratio=1.0,
        n=n,
    )


def best_point(points: Sequence[SweepPoint]) -> SweepPoint:
    """Best sweep point: argmax accuracy, ties broken by fewer tokens."""
    if not points:
        raise ValueError("no sweep points")
    return max(points, key=lambda p: (p.accuracy, -p.mean_tokens))


def random_baseline_curve(
    instances: Sequence[PairedInstance],
    p_grid: Sequence[float],
    seed: int = 0,
) -> list[SweepPoint]:
    """Routing curve for the seeded random selector at each exit probability.

    Draws share the per-question uniform (common random numbers), so the
    curve is monotone in the exit fraction by construction.
    """
    if any(not 0.0 <= p <= 1.0 for p in p_grid):
        raise ValueError("p grid values must lie in [0,1]")
    points = []
    for p in p_grid:
        routed = []
        for inst in instances:
            value = score_random(
                QuestionRecord(id=inst.question_id, text="-", gold="-", answer_type="string"),
                p_exit=p,
                seed=seed,
            )
            routed.append(
                PairedInstance(
                    question_id=inst.question_id,
                    thinking=inst.thinking,
                    nothinking=inst.nothinking,
                    scores={ScorerKind.RANDOM: value},
                )
            )
        point = compose_at_threshold(routed, ScorerKind.RANDOM, lam=0.5)
        points.append(
            SweepPoint(
                lam=p,
                accuracy=point.accuracy,
                mean_tokens=point.mean_tokens,
                nothinking_ratio=point.nothinking_ratio,
                n=point.n,
            )
        )
    return points


# ---------------------------------------------------------------------------
# Calibration metrics
# ---------------------------------------------------------------------------


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group mean rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Probability a random positive outranks a random negative (ties 0.5).

    Computed from average ranks (the Mann-Whitney statistic). Callers using
    uncertainty-oriented scores negate them first so that higher always
    predicts the positive class.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"ROC-AUC needs both classes (positives={n_pos}, negatives={n_neg})"
        )
    ranks = _average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def ece(
    confidences: Sequence[float],
    labels: Sequence[bool],
    n_bins: int = 10,
) -> float:
    """Expected calibration error over equal-width, right-closed bins.

    Bin k covers (k/n_bins, (k+1)/n_bins], with 0.0 falling into the first
    bin; ECE is the instance-weighted mean absolute gap between a bin's
    mean confidence and its accuracy.
    """
    c = np.asarray(confidences, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if c.shape != y.shape or c.ndim != 1 or c.size == 0:
        raise ValueError("confidences and labels must be equal-length, non-empty")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if c.min() < 0.0 or c.max() > 1.0:
        raise ValueError("confidences must lie in [0,1]")
    idx = np.clip(np.ceil(c * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    n = c.size
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(float(c[mask].mean()) - float(y[mask].mean()))
        total += (count / n) * gap
    return total


def brier(confidences: Sequence[float], labels: Sequence[bool]) -> float:
    """Mean squared error between confidence and the 0/1 outcome."""
    c = np.asarray(confidences, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if c.shape != y.shape or c.ndim != 1 or c.size == 0:
        raise ValueError("confidences and labels must be equal-length, non-empty")
    return float(np.mean((c - y) ** 2))


def calibration_report(
    confidences: Sequence[float],
    labels: Sequence[bool],
    n_bins: int = 10,
) -> CalibrationReport:
    """ECE, Brier, and ROC-AUC against the short-mode correctness labels."""
    y = np.asarray(labels, dtype=bool)
    return CalibrationReport(
        ece=ece(confidences, labels, n_bins),
        brier=brier(confidences, labels),
        roc_auc=roc_auc(confidences, labels),
        n_bins=n_bins,
        positives=int(y.sum()),
        negatives=int((~y).sum()),
    )
