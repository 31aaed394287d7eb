"""End-to-end scoring of run logs and answers into a canonical report."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .. import yamlutil
from ..config import Settings, load_settings, recommendation_table
from ..engine import RunLog
from ..translator import ScoringConfig
from .aggregate import ScoreTree, aggregate
from .essay import Providers, SpellDictionary
from .metrics import MetricResult, ScoringContext, score_metric
from .sa import SAReport, sa_report, team_map

REPORT_FORMAT = "edlforge-report/1"
DIGITS = 6


class HashMismatch(ValueError):
    pass


class AnswersError(ValueError):
    pass


def _round(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, DIGITS) + 0.0
    if isinstance(value, Mapping):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    return value


def parse_answers(data: Any) -> dict[tuple[str, str], str]:
    """``answers.yaml``: a list of {trainee_id, metric_id, text} (or ``{answers: [...]}``)."""
    if data is None:
        return {}
    if isinstance(data, Mapping):
        data = data.get("answers") or []
    if not isinstance(data, list):
        raise AnswersError("answers must be a list of {trainee_id, metric_id, text}")
    out: dict[tuple[str, str], str] = {}
    for k, item in enumerate(data):
        if not isinstance(item, Mapping) or not {"trainee_id", "metric_id", "text"} <= set(item):
            raise AnswersError(f"answer {k} needs trainee_id, metric_id and text")
        key = (str(item["trainee_id"]), str(item["metric_id"]))
        if key in out:
            raise AnswersError(f"duplicate answer for trainee {key[0]!r}, metric {key[1]!r}")
        out[key] = str(item["text"])
    return out


def evaluate(cfg: ScoringConfig, logs: Sequence[RunLog], answers: Mapping[tuple[str, str], str] | None = None,
             settings: Settings | None = None,
             providers: Providers | None = None) -> tuple[ScoreTree, list[SAReport], list[MetricResult]]:
    """Score every (metric, trainee) pair, aggregate and build one SA report per logged unit."""
    settings = settings or load_settings()
    answers = dict(answers or {})
    if providers is None:
        providers = Providers(dictionary=SpellDictionary(settings.extra_words))
    by_unit: dict[str, RunLog] = {}
    for log in logs:
        if log.header.get("doc_hash") != cfg.doc_hash:
            raise HashMismatch(f"run log for {log.header.get('unit_id')!r} was produced from "
                               f"{log.header.get('doc_hash')}, scoring config expects {cfg.doc_hash}")
        unit_id = str(log.header.get("unit_id"))
        if unit_id in by_unit:
            raise ValueError(f"two run logs for unit {unit_id!r}")
        by_unit[unit_id] = log

    teams = dict(team_map(by_unit.values()))
    trainees = sorted(set(teams) | {t for t, _ in answers})
    results: list[MetricResult] = []
    sa_reports: list[SAReport] = []
    for unit in cfg.units:
        log = by_unit.get(unit.unit_id)
        ctx = ScoringContext(log, answers, unit.sa.duration_s if unit.sa else None, settings, providers)
        for metric in unit.metrics:
            for tid in trainees:
                results.append(score_metric(metric, tid, ctx))
        if log is not None and unit.sa is not None:
            sa_reports.append(sa_report(log, unit.sa, settings.sa_weights, unit.unit_id,
                                        {teams.get(t, t) for t in teams}))
    results.sort(key=lambda r: (r.trainee_id, r.metric_id))
    tree = aggregate(results, cfg, teams, settings.missing)
    return tree, sa_reports, results


def recommendations(tree: ScoreTree, table: Mapping[str, Mapping[str, str]] | None = None) -> list[dict]:
    """Lowest-scoring metric kinds (mean over trainees, below 1) mapped to suggested unit kinds."""
    table = table if table is not None else recommendation_table()
    per_kind: dict[str, list[float]] = {}
    for t in tree.trainees:
        for u in t.units:
            for m in u.metrics:
                per_kind.setdefault(m.kind, []).append(m.score)
    if not per_kind:
        return []
    means = {kind: math.fsum(v) / len(v) for kind, v in per_kind.items()}
    low = min(means.values())
    if low >= 1.0 - 1e-12:
        return []
    out = []
    for kind in sorted(k for k, v in means.items() if v - low <= 1e-12):
        entry = table.get(kind, {})
        out.append({"metric_kind": kind, "mean_score": low,
                    "unit_kind": entry.get("unit_kind"), "tag": entry.get("tag")})
    return out


def report(tree: ScoreTree, sa: Iterable[SAReport] = (),
           table: Mapping[str, Mapping[str, str]] | None = None) -> dict:
    """The report document as plain data, ready for canonical serialization."""
    sa = list(sa)
    for s in sa:
        if s.doc_hash != tree.doc_hash:
            raise HashMismatch(f"SA report for {s.unit_id!r} has doc hash {s.doc_hash}, scores have {tree.doc_hash}")
    trainees = {}
    for t in tree.trainees:
        units = {}
        for u in t.units:
            units[u.unit_id] = {
                "kind": u.kind,
                "weight": u.weight,
                "score": u.score,
                "metrics": {
                    m.metric_id: {
                        "kind": m.kind,
                        "weight": m.weight,
                        "score": m.score,
                        "missing": m.missing,
                        "raw": m.result.raw if m.result is not None else None,
                        "evidence": list(m.result.evidence) if m.result is not None else [],
                    }
                    for m in u.metrics
                },
            }
        trainees[t.trainee_id] = {"team": t.team_id, "service_score": t.service, "units": units}
    teams = {
        team.team_id: {"members": list(team.members), "service_score": team.service,
                       "units": dict(team.units), "metrics": dict(team.metrics)}
        for team in tree.teams
    }
    sa_out = {
        s.unit_id: {
            team.team_id: {
                "hints_used": team.hints_used,
                "goals_achieved": team.goals_achieved,
                "reported_actions": team.reported_actions,
                "series": [{"t_s": t, "sa_level": level} for t, level in team.series],
            }
            for team in s.teams
        }
        for s in sorted(sa, key=lambda s: s.unit_id)
    }
    doc = {
        "format": REPORT_FORMAT,
        "service_id": tree.service_id,
        "doc_hash": tree.doc_hash,
        "missing_policy": tree.missing_policy,
        "trainees": trainees,
        "teams": teams,
        "situational_awareness": sa_out,
        "recommendations": recommendations(tree, table),
    }
    return _round(doc)


def dump_report(doc: Mapping) -> str:
    return yamlutil.dump(doc)


def csv_rows(tree: ScoreTree) -> list[list]:
    rows = [["trainee_id", "team_id", "unit_id", "metric_id", "kind", "weight", "score", "missing"]]
    for t in tree.trainees:
        for u in t.units:
            for m in u.metrics:
                rows.append([t.trainee_id, t.team_id, u.unit_id, m.metric_id, m.kind,
                             round(m.weight, DIGITS), round(m.score, DIGITS), str(m.missing).lower()])
    return rows


def dump_csv(tree: ScoreTree) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(csv_rows(tree))
    return buf.getvalue()


def write_report(doc: Mapping, path: str | Path, tree: ScoreTree | None = None,
                 csv_path: str | Path | None = None) -> None:
    Path(path).write_text(dump_report(doc), encoding="utf-8", newline="\n")
    if csv_path is not None and tree is not None:
        Path(csv_path).write_text(dump_csv(tree), encoding="utf-8", newline="\n")
