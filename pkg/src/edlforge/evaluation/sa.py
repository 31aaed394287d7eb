"""Situational-awareness series aligned to event firings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..commands import matches
from ..engine import InvalidLog, RunLog, replay_check
from ..translator import SAConfig

DEFAULT_WEIGHTS = (0.6, 0.2, 0.4)


@dataclass(frozen=True)
class TeamSA:
    team_id: str
    series: tuple[tuple[int, float], ...]
    hints_used: int
    goals_achieved: int
    reported_actions: int


@dataclass(frozen=True)
class SAReport:
    unit_id: str
    doc_hash: str
    teams: tuple[TeamSA, ...]

    def team(self, team_id: str) -> TeamSA:
        return next(t for t in self.teams if t.team_id == team_id)


def sa_raw(g: float, h: float, r: float, weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    w_g, w_h, w_r = weights
    return w_g * g - w_h * h + w_r * r


def sa_level(g: float, h: float, r: float, weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    return min(max(sa_raw(g, h, r, weights), 0.0), 1.0)


def _ratio(n: int, d: int) -> float:
    return n / d if d else 0.0


def _team_counts(records, team: str, upto: int | None, sa: SAConfig) -> tuple[int, int, int, int]:
    """(goals, hints, reported, expected) for *team* over records with t_s <= *upto*."""
    goals, hints = set(), 0
    deliveries = []
    actions = []
    for rec in records:
        if upto is not None and rec.t_s > upto:
            break
        p = rec.payload
        if rec.kind == "goal_achieved" and p.get("team") == team and p.get("goal") in sa.goals:
            goals.add(p["goal"])
        elif rec.kind == "hint_issued" and p.get("team") == team:
            hints += 1
        elif rec.kind == "inject_delivered":
            deliveries.append((rec.t_s, sa.expected_actions.get(p.get("inject"), ())))
        elif rec.kind == "trainee_action" and p.get("team") == team:
            actions.append((rec.t_s, str(p.get("command", ""))))
    reported = expected = 0
    for t0, patterns in deliveries:
        for pattern in patterns:
            expected += 1
            if any(t >= t0 and matches(cmd, pattern) for t, cmd in actions):
                reported += 1
    return len(goals), hints, reported, expected


def teams_in(log: RunLog) -> list[str]:
    return sorted({str(r.payload["team"]) for r in log.records
                   if r.kind == "trainee_action" and "team" in r.payload})


def sa_report(log: RunLog, sa: SAConfig, weights: Sequence[float] = DEFAULT_WEIGHTS,
              unit_id: str | None = None, teams: Iterable[str] = ()) -> SAReport:
    """SA level per team at every distinct event-firing instant.

    G, H and R are achieved goals, issued hints and reported expected actions,
    each as a share of its total so far (0 when the total is 0).  One closing
    sample is added at the exercise end (``duration_s``, else the last record)
    when that falls after the last firing.
    """
    check = replay_check(log, sa.prerequisites)
    if not check.ok:
        first = check.issues[0]
        raise InvalidLog(f"{first.code} at seq {first.seq}: {first.message}")
    if any(w < 0 for w in weights):
        raise ValueError(f"SA weights must be non-negative, got {tuple(weights)}")
    records = log.records
    instants = sorted({r.t_s for r in records if r.kind == "event_fired"})
    end = sa.duration_s if sa.duration_s is not None else max((r.t_s for r in records), default=None)
    if end is not None and instants and end > instants[-1]:
        instants.append(end)
    out = []
    for team in sorted(set(teams_in(log)) | set(teams)):
        series = []
        for t in instants:
            g, h, r, e = _team_counts(records, team, t, sa)
            series.append((t, sa_level(_ratio(g, len(sa.goals)), _ratio(h, len(sa.hints)), _ratio(r, e), weights)))
        g, h, r, _ = _team_counts(records, team, None, sa)
        out.append(TeamSA(team, tuple(series), h, g, r))
    return SAReport(unit_id or str(log.header.get("unit_id", "")), str(log.header.get("doc_hash", "")), tuple(out))


def team_map(logs: Iterable[RunLog]) -> Mapping[str, str]:
    """trainee id -> team id as recorded in trainee actions."""
    out: dict[str, str] = {}
    for log in logs:
        for r in log.records:
            if r.kind == "trainee_action":
                out.setdefault(r.actor_id, str(r.payload.get("team", r.actor_id)))
    return out
