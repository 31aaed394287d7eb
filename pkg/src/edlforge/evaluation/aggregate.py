"""Hierarchical aggregation: metrics -> units -> service, per trainee and per team."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from ..translator import ScoringConfig
from .metrics import MetricResult


class UnknownMetric(KeyError):
    pass


class DuplicateResult(ValueError):
    pass


@dataclass(frozen=True)
class MetricScore:
    metric_id: str
    kind: str
    weight: float
    score: float
    missing: bool
    result: MetricResult | None


@dataclass(frozen=True)
class UnitScore:
    unit_id: str
    kind: str
    weight: float
    score: float
    metrics: tuple[MetricScore, ...]


@dataclass(frozen=True)
class TraineeScore:
    trainee_id: str
    team_id: str
    units: tuple[UnitScore, ...]
    service: float


@dataclass(frozen=True)
class TeamScore:
    team_id: str
    members: tuple[str, ...]
    metrics: Mapping[str, float]
    units: Mapping[str, float]
    service: float


@dataclass(frozen=True)
class ScoreTree:
    service_id: str
    doc_hash: str
    trainees: tuple[TraineeScore, ...]
    teams: tuple[TeamScore, ...]
    missing_policy: str = "zero"

    def trainee(self, trainee_id: str) -> TraineeScore:
        return next(t for t in self.trainees if t.trainee_id == trainee_id)

    def team(self, team_id: str) -> TeamScore:
        return next(t for t in self.teams if t.team_id == team_id)


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def weighted(parts: Iterable[tuple[float, float, bool]], missing: str) -> float:
    """Weighted sum of (weight, score, is_missing); ``exclude`` renormalizes over present parts."""
    parts = list(parts)
    if missing == "exclude":
        present = [(w, s) for w, s, gone in parts if not gone]
        total = math.fsum(w for w, _ in present)
        if total <= 0:
            return 0.0
        return _clamp01(math.fsum(w * s for w, s in present) / total)
    return _clamp01(math.fsum(w * s for w, s, _ in parts))


def aggregate(results: Iterable[MetricResult], cfg: ScoringConfig,
              teams: Mapping[str, str] | None = None, missing: str = "zero") -> ScoreTree:
    """Fold metric results into a :class:`ScoreTree`.

    A metric with no result for a trainee scores 0 and is flagged missing;
    with ``missing="exclude"`` it is dropped and the remaining weights rescaled.
    """
    if missing not in ("zero", "exclude"):
        raise ValueError(f"missing policy must be zero or exclude, not {missing!r}")
    teams = dict(teams or {})
    known = {m.metric_id for u in cfg.units for m in u.metrics}
    by_key: dict[tuple[str, str], MetricResult] = {}
    for r in results:
        if r.metric_id not in known:
            raise UnknownMetric(r.metric_id)
        key = (r.trainee_id, r.metric_id)
        if key in by_key:
            raise DuplicateResult(f"two results for metric {r.metric_id!r} and trainee {r.trainee_id!r}")
        by_key[key] = r
    trainee_ids = sorted({t for t, _ in by_key} | set(teams))

    trainees = []
    for tid in trainee_ids:
        units = []
        for u in cfg.units:
            scores = []
            for m in u.metrics:
                r = by_key.get((tid, m.metric_id))
                gone = r is None or r.missing
                scores.append(MetricScore(m.metric_id, m.kind, m.weight, 0.0 if r is None else r.score, gone, r))
            unit_gone = bool(scores) and all(s.missing for s in scores)
            value = weighted(((s.weight, s.score, s.missing) for s in scores), missing)
            units.append((UnitScore(u.unit_id, u.kind, u.weight, value, tuple(scores)), unit_gone))
        service = weighted(((us.weight, us.score, gone) for us, gone in units), missing)
        trainees.append(TraineeScore(tid, teams.get(tid, tid), tuple(us for us, _ in units), service))

    members: dict[str, list[TraineeScore]] = {}
    for t in trainees:
        members.setdefault(t.team_id, []).append(t)
    team_scores = []
    for team_id in sorted(members):
        group = members[team_id]
        n = len(group)
        metric_means = {m.metric_id: math.fsum(ms.score for t in group for us in t.units for ms in us.metrics
                                               if ms.metric_id == m.metric_id) / n
                        for u in cfg.units for m in u.metrics}
        unit_means = {u.unit_id: math.fsum(us.score for t in group for us in t.units if us.unit_id == u.unit_id) / n
                      for u in cfg.units}
        team_scores.append(TeamScore(team_id, tuple(t.trainee_id for t in group), metric_means, unit_means,
                                     math.fsum(t.service for t in group) / n))
    return ScoreTree(cfg.service_id, cfg.doc_hash, tuple(trainees), tuple(team_scores), missing)
