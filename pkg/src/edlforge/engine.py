"""Deterministic discrete-event execution of a scenario storyline.

Scheduling rules:

* temporal events fire at ``offset_s``; conditional events fire one tick
  (1 s) after their last prerequisite fired;
* an event's injects are delivered at the firing instant, in declaration order;
* records at the same instant are ordered system < red < blue < grey < trainee,
  then by actor id, then by the actor's own ordering.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .commands import matches, normalize_command
from .edl_io import doc_hash
from .model import RECORD_KINDS, CycleError, ExerciseDescription, Storyline, topological_event_order

LOG_FORMAT = "edlforge-run/1"
TICK_S = 1
HINT_COMMAND = "hint"
ACTOR_RANK = {"system": 0, "red": 1, "blue": 2, "grey": 3, "trainee": 4}
SYSTEM_ACTOR = "engine"
RECORD_FIELDS = ("t_s", "seq", "actor_kind", "actor_id", "kind", "payload")


class InvalidUnit(ValueError):
    pass


class OverrideUnknownUser(KeyError):
    pass


class InvalidOverride(ValueError):
    pass


class InvalidScript(ValueError):
    pass


class InvalidLog(ValueError):
    pass


@dataclass(frozen=True)
class EventLogRecord:
    t_s: int
    seq: int
    actor_kind: str
    actor_id: str
    kind: str
    payload: Mapping[str, Any]

    def to_json(self) -> str:
        body = {
            "t_s": self.t_s,
            "seq": self.seq,
            "actor_kind": self.actor_kind,
            "actor_id": self.actor_id,
            "kind": self.kind,
            "payload": {k: self.payload[k] for k in sorted(self.payload)},
        }
        return json.dumps(body, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class RunLog:
    header: Mapping[str, Any]
    records: tuple[EventLogRecord, ...]

    def to_jsonl(self) -> str:
        head = json.dumps({"header": {k: self.header[k] for k in sorted(self.header)}},
                          ensure_ascii=False, separators=(",", ":"))
        return "\n".join([head, *(r.to_json() for r in self.records)]) + "\n"


@dataclass(frozen=True)
class TimelineOverride:
    user_id: str
    effective_t_s: int
    timeline: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True)
class TraineeAction:
    t_s: int
    command: str
    target: str | None = None


@dataclass(frozen=True)
class TraineeScript:
    trainee_id: str
    actions: tuple[TraineeAction, ...]
    team: str | None = None

    @property
    def team_id(self) -> str:
        return self.team or self.trainee_id


def _apply_overrides(storyline: Storyline, overrides: Sequence[TimelineOverride]) -> dict[str, list[tuple[int, str]]]:
    timelines = {u.id: list(u.timeline) for u in storyline.simulated_users}
    for ov in sorted(overrides, key=lambda o: o.effective_t_s):
        if ov.user_id not in timelines:
            raise OverrideUnknownUser(ov.user_id)
        if ov.effective_t_s < 0:
            raise InvalidOverride(f"override for {ov.user_id!r} starts before t=0")
        previous = ov.effective_t_s
        for t_s, _ in ov.timeline:
            if t_s < previous:
                raise InvalidOverride(f"override for {ov.user_id!r}: action at t={t_s} breaks ordering "
                                      f"or precedes effective_t_s={ov.effective_t_s}")
            previous = t_s
        kept = [step for step in timelines[ov.user_id] if step[0] < ov.effective_t_s]
        timelines[ov.user_id] = kept + list(ov.timeline)
    return timelines


def _check_scripts(scripts: Sequence[TraineeScript]) -> None:
    seen = set()
    for script in scripts:
        if script.trainee_id in seen:
            raise InvalidScript(f"two scripts for trainee {script.trainee_id!r}")
        seen.add(script.trainee_id)
        previous = 0
        for action in script.actions:
            if action.t_s < previous:
                raise InvalidScript(f"trainee {script.trainee_id!r}: t={action.t_s} after t={previous}")
            previous = action.t_s


def run(doc: ExerciseDescription, unit_id: str, overrides: Sequence[TimelineOverride] = (),
        scripts: Sequence[TraineeScript] = (), seed: int = 0) -> RunLog:
    """Simulate one scenario unit and return its event log."""
    unit = doc.service.unit(unit_id)
    if unit is None or unit.kind != "cr_scenario" or unit.storyline is None:
        raise InvalidUnit(f"{unit_id!r} is not a cr_scenario unit of {doc.service.id!r}")
    story = unit.storyline
    try:
        order = topological_event_order(story)
    except CycleError as exc:
        raise InvalidUnit(str(exc)) from exc
    timelines = _apply_overrides(story, overrides)
    _check_scripts(scripts)

    events = {e.id: e for e in story.events}
    rank_in_order = {eid: i for i, eid in enumerate(order)}
    owner = story.inject_owner()
    prereqs: dict[str, set[str]] = {}
    dependents: dict[str, list[str]] = {eid: [] for eid in events}
    for e in story.events:
        deps = {ref if ref in events else owner[ref] for ref in e.trigger.after}
        prereqs[e.id] = deps
        for dep in deps:
            dependents[dep].append(e.id)

    # heap entries: (t, actor rank, actor id, local order, kind, data)
    queue: list[tuple] = []
    for e in story.events:
        if e.trigger.kind == "temporal":
            heapq.heappush(queue, (e.trigger.offset_s, 0, SYSTEM_ACTOR, rank_in_order[e.id], "event", e.id))
    roles = {u.id: u.role for u in story.simulated_users}
    for user_id, steps in timelines.items():
        for k, (t_s, action) in enumerate(steps):
            heapq.heappush(queue, (t_s, ACTOR_RANK[roles[user_id]], user_id, k, "user", action))
    for script in scripts:
        for k, action in enumerate(script.actions):
            heapq.heappush(queue, (action.t_s, ACTOR_RANK["trainee"], script.trainee_id, k, "trainee",
                                   (action, script.team_id)))

    fired: dict[str, int] = {}
    hints_used: dict[str, int] = {}
    goals_done: dict[str, set[str]] = {}
    out: list[tuple[int, str, str, str, dict]] = []
    while queue:
        t_s, _rank, actor_id, _local, what, data = heapq.heappop(queue)
        if what == "event":
            if data in fired:
                continue
            fired[data] = t_s
            event = events[data]
            payload = {"event": event.id, "name": event.name}
            if event.attack_technique:
                payload["attack_technique"] = event.attack_technique
            out.append((t_s, "system", SYSTEM_ACTOR, "event_fired", payload))
            for inj in event.injects:
                out.append((t_s, "system", SYSTEM_ACTOR, "inject_delivered",
                            {"event": event.id, "inject": inj.id, "target": inj.target_asset, "action": inj.action}))
            for child in dependents[data]:
                if child not in fired and prereqs[child] <= fired.keys():
                    heapq.heappush(queue, (t_s + TICK_S, 0, SYSTEM_ACTOR, rank_in_order[child], "event", child))
        elif what == "user":
            role = roles[actor_id]
            out.append((t_s, role, actor_id, "user_action", {"user": actor_id, "role": role, "action": data}))
        else:
            action, team = data
            payload = {"command": action.command, "team": team}
            if action.target is not None:
                payload["target"] = action.target
            out.append((t_s, "trainee", actor_id, "trainee_action", payload))
            if normalize_command(action.command) == HINT_COMMAND:
                used = hints_used.get(team, 0)
                if used < len(story.hints):
                    hint = story.hints[used]
                    hints_used[team] = used + 1
                    out.append((t_s, "trainee", actor_id, "hint_issued",
                                {"hint": hint.id, "text": hint.text, "team": team}))
            done = goals_done.setdefault(team, set())
            for goal in story.goals:
                if goal.id in done or not matches(action.command, goal.pattern):
                    continue
                if goal.target_asset is not None and goal.target_asset != action.target:
                    continue
                done.add(goal.id)
                out.append((t_s, "trainee", actor_id, "goal_achieved", {"goal": goal.id, "team": team}))

    records = tuple(EventLogRecord(t, seq, kind, actor, rec_kind, payload)
                    for seq, (t, kind, actor, rec_kind, payload) in enumerate(out))
    digest = doc_hash(doc)
    header = {
        "format": LOG_FORMAT,
        "doc_hash": digest,
        "service_id": doc.service.id,
        "unit_id": unit_id,
        "seed": seed,
        "salt": hashlib.sha256(f"{seed}:{digest}:{unit_id}".encode()).hexdigest()[:16],
    }
    return RunLog(header, records)


# -- file formats ----------------------------------------------------------------------


def parse_run(text: str) -> RunLog:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise InvalidLog("empty run log")
    try:
        head = json.loads(lines[0])
        header = head["header"]
        records = []
        for line in lines[1:]:
            raw = json.loads(line)
            if set(raw) != set(RECORD_FIELDS):
                raise InvalidLog(f"record fields {sorted(raw)} differ from {list(RECORD_FIELDS)}")
            records.append(EventLogRecord(raw["t_s"], raw["seq"], raw["actor_kind"], raw["actor_id"],
                                          raw["kind"], raw["payload"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidLog(f"malformed run log: {exc}") from exc
    if not isinstance(header, dict):
        raise InvalidLog("header must be an object")
    return RunLog(header, tuple(records))


def read_run(path: str | Path) -> RunLog:
    return parse_run(Path(path).read_text(encoding="utf-8"))


def write_run(log: RunLog, path: str | Path) -> None:
    Path(path).write_text(log.to_jsonl(), encoding="utf-8", newline="\n")


def override_from_dict(raw: Mapping[str, Any]) -> TimelineOverride:
    return TimelineOverride(
        user_id=str(raw["user_id"]),
        effective_t_s=int(raw["effective_t_s"]),
        timeline=tuple((int(s["t_s"]), str(s["action"])) for s in raw.get("timeline") or ()),
    )


def script_from_dict(raw: Mapping[str, Any]) -> TraineeScript:
    return TraineeScript(
        trainee_id=str(raw["trainee_id"]),
        team=raw.get("team"),
        actions=tuple(TraineeAction(int(a["t_s"]), str(a["command"]), a.get("target"))
                      for a in raw.get("actions") or ()),
    )


# -- replay validation --------------------------------------------------------------------


@dataclass(frozen=True)
class LogIssue:
    code: str
    seq: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[LogIssue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues


def replay_check(log: RunLog | Iterable[EventLogRecord],
                 prerequisites: Mapping[str, Sequence[str]] | None = None,
                 expected_events: Sequence[str] | None = None) -> ValidationReport:
    """Check ordering, single-fire and trigger precedence of a log.

    *prerequisites* (event id -> prerequisite event ids) enables the precedence
    check; *expected_events* turns "at most once" into "exactly once".
    """
    records = list(log.records if isinstance(log, RunLog) else log)
    issues: list[LogIssue] = []
    previous: tuple[int, int] | None = None
    fired: dict[str, int] = {}
    for rec in records:
        if not isinstance(rec.t_s, int) or not isinstance(rec.seq, int) or rec.t_s < 0:
            issues.append(LogIssue("FORMAT", None, f"bad t_s/seq in {rec}"))
            continue
        if rec.actor_kind not in ACTOR_RANK or rec.kind not in RECORD_KINDS or not isinstance(rec.payload, Mapping):
            issues.append(LogIssue("FORMAT", rec.seq, f"unknown actor or record kind {rec.actor_kind}/{rec.kind}"))
        key = (rec.t_s, rec.seq)
        if previous is not None and (key <= previous or rec.seq <= previous[1]):
            issues.append(LogIssue("ORDER", rec.seq, f"record (t={rec.t_s}, seq={rec.seq}) follows {previous}"))
        previous = key if previous is None else max(previous, key)
        if rec.kind == "event_fired":
            event_id = rec.payload.get("event") if isinstance(rec.payload, Mapping) else None
            if event_id in fired:
                issues.append(LogIssue("SINGLE_FIRE", rec.seq, f"event {event_id!r} fired again"))
                continue
            fired[event_id] = rec.t_s
            for dep in (prerequisites or {}).get(event_id, ()):
                if dep not in fired or fired[dep] >= rec.t_s:
                    issues.append(LogIssue("PRECEDENCE", rec.seq,
                                           f"event {event_id!r} fired at t={rec.t_s} before prerequisite {dep!r}"))
        elif rec.kind == "inject_delivered":
            event_id = rec.payload.get("event") if isinstance(rec.payload, Mapping) else None
            if fired.get(event_id) != rec.t_s:
                issues.append(LogIssue("PRECEDENCE", rec.seq, f"inject for {event_id!r} delivered off its firing"))
    for event_id in expected_events or ():
        if event_id not in fired:
            issues.append(LogIssue("SINGLE_FIRE", None, f"event {event_id!r} never fired"))
    return ValidationReport(tuple(issues))
