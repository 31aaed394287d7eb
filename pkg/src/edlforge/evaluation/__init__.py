"""Scoring of exercise runs: metric scorers, essays, aggregation, SA and reporting."""

from .aggregate import ScoreTree, UnknownMetric, aggregate
from .essay import EssayFeatures, Providers, clarity_score, essay_features, essay_score, flesch_reading_ease
from .metrics import (
    BadParams,
    BadPredicate,
    EmptyReference,
    MetricResult,
    score_quantity,
    score_sequence,
    score_task,
    score_time,
)
from .report import HashMismatch, evaluate, report
from .sa import SAReport, sa_report

__all__ = [
    "BadParams", "BadPredicate", "EmptyReference", "EssayFeatures", "HashMismatch", "MetricResult",
    "Providers", "SAReport", "ScoreTree", "UnknownMetric", "aggregate", "clarity_score", "essay_features",
    "essay_score", "evaluate", "flesch_reading_ease", "report", "sa_report", "score_quantity",
    "score_sequence", "score_task", "score_time",
]
