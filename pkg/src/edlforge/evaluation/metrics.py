"""Metric scorers: time, quantity, sequence, task and essay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ..commands import matches, normalize_command
from ..config import load_settings
from ..engine import HINT_COMMAND, EventLogRecord, RunLog
from ..translator import MetricScoring
from . import essay as essay_mod


class BadParams(ValueError):
    pass


class EmptyReference(ValueError):
    pass


class BadPredicate(ValueError):
    pass


@dataclass(frozen=True)
class MetricResult:
    metric_id: str
    trainee_id: str
    raw: Any
    score: float
    evidence: tuple[int, ...] = ()
    missing: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def record_text(rec: EventLogRecord) -> str:
    """The matchable text of a record: the command or action it carries."""
    p = rec.payload
    for key in ("command", "action", "hint", "goal", "event"):
        if key in p:
            return str(p[key])
    return ""


def select_records(log: RunLog | Iterable[EventLogRecord], metric: MetricScoring,
                   trainee_id: str) -> list[EventLogRecord]:
    """Records visible to one trainee through *metric*'s log locator.

    Kinds must be listed in the locator, trainee records must belong to
    *trainee_id*, and records that name a target must name the locator asset.
    Hint requests are help-desk traffic, not exercise actions, and are skipped.
    """
    records = log.records if isinstance(log, RunLog) else log
    out = []
    for rec in records:
        if rec.kind not in metric.kinds:
            continue
        if rec.actor_kind == "trainee" and rec.actor_id != trainee_id:
            continue
        if rec.kind == "trainee_action" and normalize_command(str(rec.payload.get("command", ""))) == HINT_COMMAND:
            continue
        target = rec.payload.get("target")
        if target is not None and target != metric.asset_id:
            continue
        out.append(rec)
    return out


def time_score(duration: float, target_s: float, limit_s: float) -> float:
    if duration <= target_s:
        return 1.0
    if duration >= limit_s:
        return 0.0
    return (limit_s - duration) / (limit_s - target_s)


def score_time(records: Sequence[EventLogRecord], params: Mapping[str, Any], pattern: str | None = None,
               start_t: int = 0, metric_id: str = "", trainee_id: str = "") -> MetricResult:
    """Duration from *start_t* to the first record matching *pattern* (any record when None)."""
    target, limit = params.get("target_s"), params.get("limit_s")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (target, limit)) or not target < limit:
        raise BadParams(f"time metric needs target_s < limit_s, got {target!r}, {limit!r}")
    for rec in records:
        if rec.t_s < start_t:
            continue
        if pattern is None or matches(record_text(rec), pattern):
            duration = rec.t_s - start_t
            return MetricResult(metric_id, trainee_id, {"duration_s": duration},
                                time_score(duration, target, limit), (rec.seq,))
    return MetricResult(metric_id, trainee_id, {"duration_s": None}, 0.0)


def score_quantity(records: Sequence[EventLogRecord], params: Mapping[str, Any], accepted: Sequence[str] = ("*",),
                   metric_id: str = "", trainee_id: str = "") -> MetricResult:
    """Share of ``expected_count`` reached by records matching any accepted pattern, capped at 1."""
    expected = params.get("expected_count")
    if isinstance(expected, bool) or not isinstance(expected, int) or expected < 1:
        raise BadParams(f"expected_count must be an integer >= 1, got {expected!r}")
    hits = tuple(rec.seq for rec in records if any(matches(record_text(rec), p) for p in accepted))
    return MetricResult(metric_id, trainee_id, {"correct_count": len(hits)},
                        min(len(hits) / expected, 1.0), hits)


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    """Token edit distance with unit insert, delete and substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev_diag, row[0] = row[0], i
        for j, y in enumerate(b, 1):
            prev_diag, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev_diag + (x != y))
    return row[-1]


def sequence_score(observed: Sequence[str], reference: Sequence[str]) -> float:
    if not reference:
        raise EmptyReference("sequence metric has no reference tokens")
    obs = [normalize_command(t) for t in observed]
    ref = [normalize_command(t) for t in reference]
    return 1.0 - levenshtein(obs, ref) / max(len(obs), len(ref))


def score_sequence(observed: Sequence[str], reference: Sequence[str], evidence: Sequence[int] = (),
                   metric_id: str = "", trainee_id: str = "") -> MetricResult:
    score = sequence_score(observed, reference)
    return MetricResult(metric_id, trainee_id, {"observed": [normalize_command(t) for t in observed]},
                        score, tuple(evidence))


def score_task(records: Sequence[EventLogRecord], params: Mapping[str, Any], predicate: str | None = None,
               end_s: int | None = None, metric_id: str = "", trainee_id: str = "") -> MetricResult:
    """1 iff a record at or before *end_s* matches *predicate*; ``params['end_s']`` wins over *end_s*."""
    predicate = predicate if predicate is not None else params.get("predicate")
    if not isinstance(predicate, str) or not predicate.strip():
        raise BadPredicate(f"task predicate must be a non-empty pattern, got {predicate!r}")
    end_s = params.get("end_s", end_s)
    for rec in records:
        if end_s is not None and rec.t_s > end_s:
            break
        if matches(record_text(rec), predicate):
            return MetricResult(metric_id, trainee_id, {"matched_at": rec.t_s}, 1.0, (rec.seq,))
    return MetricResult(metric_id, trainee_id, {"matched_at": None}, 0.0)


def score_essay(answer: str, reference: str, settings, providers: essay_mod.Providers | None = None,
                metric_id: str = "", trainee_id: str = "") -> MetricResult:
    settings = settings or load_settings()
    if providers is None:
        providers = essay_mod.Providers(dictionary=essay_mod.SpellDictionary(settings.extra_words))
    f = essay_mod.essay_features(answer, reference, providers, settings.essay_weights)
    clar = essay_mod.clarity_score(f, settings.gaussians)
    es = min(max(essay_mod.essay_score(f, clar), 0.0), 1.0)
    raw = {"sim_s": f.sim_s, "spell_s": f.spell_s, "clar_s": clar, "fre": f.fre}
    return MetricResult(metric_id, trainee_id, raw, es)


@dataclass
class ScoringContext:
    """Inputs shared by every metric of one unit."""

    log: RunLog | None
    answers: Mapping[tuple[str, str], str] = field(default_factory=dict)  # (trainee, metric) -> text
    duration_s: int | None = None
    settings: Any = None
    providers: essay_mod.Providers | None = None

    def fired_at(self, event_id: str) -> int | None:
        if self.log is None:
            return None
        for rec in self.log.records:
            if rec.kind == "event_fired" and rec.payload.get("event") == event_id:
                return rec.t_s
        return None


def score_metric(metric: MetricScoring, trainee_id: str, ctx: ScoringContext) -> MetricResult:
    """Dispatch on metric kind; a log-based metric without a log is scored 0 and flagged missing."""
    mid = metric.metric_id
    if metric.kind == "essay":
        answer = ctx.answers.get((trainee_id, mid))
        if answer is None:
            return MetricResult(mid, trainee_id, None, 0.0, missing=True)
        return score_essay(answer, metric.reference.text or "", ctx.settings, ctx.providers, mid, trainee_id)
    if ctx.log is None:
        return MetricResult(mid, trainee_id, None, 0.0, missing=True)
    records = select_records(ctx.log, metric, trainee_id)
    if metric.kind == "time":
        start = 0
        if metric.params.get("start_event") is not None:
            start = ctx.fired_at(metric.params["start_event"])
            if start is None:
                return MetricResult(mid, trainee_id, {"duration_s": None}, 0.0)
        return score_time(records, metric.params, metric.reference.pattern, start, mid, trainee_id)
    if metric.kind == "quantity":
        return score_quantity(records, metric.params, metric.reference.tokens or ("*",), mid, trainee_id)
    if metric.kind == "sequence":
        own = [r for r in records if r.kind == "trainee_action"]
        return score_sequence([record_text(r) for r in own], metric.reference.tokens,
                              [r.seq for r in own], mid, trainee_id)
    if metric.kind == "task":
        return score_task(records, metric.params, metric.reference.pattern, ctx.duration_s, mid, trainee_id)
    raise BadParams(f"unknown metric kind {metric.kind!r}")
