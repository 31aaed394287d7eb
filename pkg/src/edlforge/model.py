"""Exercise description data model.

All types are frozen dataclasses.  Sequences are tuples; the few mapping
fields (weights, metric params, ``x-`` extensions) are plain dicts that are
never mutated after construction.
"""

from __future__ import annotations

import heapq
import ipaddress
import math
import re
from dataclasses import dataclass, field, fields
from typing import Any, Iterator

from .violations import Violation, join_path, ordered

UNIT_KINDS = ("content_training", "cr_scenario", "tabletop")
ASSET_KINDS = ("compute", "network", "custom")
TRIGGER_KINDS = ("temporal", "conditional")
USER_ROLES = ("blue", "red", "grey")
METRIC_KINDS = ("time", "quantity", "sequence", "task", "essay")
RECORD_KINDS = ("event_fired", "inject_delivered", "user_action", "trainee_action", "hint_issued", "goal_achieved")

ID_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_.-]*$")
SEMVER_RE = re.compile(r"^\d+\.\d+\.\d+$")
CWE_RE = re.compile(r"^CWE-\d+$")
ATTACK_RE = re.compile(r"^T\d+(\.\d+)?$")
D3FEND_RE = re.compile(r"^D3-[A-Z]+$")
NICE_RE = re.compile(r"^[A-Z]{2}-[A-Z]{3}-\d{3}$")

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class CapacityVector:
    cpu_cores: int = 0
    ram_gb: int = 0
    storage_gb: int = 0
    vm_slots: int = 0
    bandwidth_mbps: int = 0

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def components(self) -> tuple[int, ...]:
        return tuple(getattr(self, n) for n in self.names())

    @classmethod
    def of(cls, values) -> CapacityVector:
        return cls(*values)

    def __add__(self, other: CapacityVector) -> CapacityVector:
        return CapacityVector.of(a + b for a, b in zip(self.components(), other.components()))

    def __sub__(self, other: CapacityVector) -> CapacityVector:
        return CapacityVector.of(a - b for a, b in zip(self.components(), other.components()))

    def fits(self, other: CapacityVector) -> bool:
        """True when ``self <= other`` component-wise."""
        return all(a <= b for a, b in zip(self.components(), other.components()))

    def maximum(self, other: CapacityVector) -> CapacityVector:
        return CapacityVector.of(max(a, b) for a, b in zip(self.components(), other.components()))

    def scaled(self, k: int) -> CapacityVector:
        return CapacityVector.of(a * k for a in self.components())

    def is_zero(self) -> bool:
        return not any(self.components())


@dataclass(frozen=True)
class CapabilityProfile:
    range_id: str
    tags: frozenset[str]
    total: CapacityVector
    reserved: CapacityVector = CapacityVector()


@dataclass(frozen=True)
class Asset:
    id: str
    kind: str
    capacity_demand: CapacityVector = CapacityVector()
    capability_demand: frozenset[str] = frozenset()
    locality: str | None = None
    cwe_refs: tuple[str, ...] = ()
    standalone: bool = False
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class NetworkSegment:
    id: str
    cidr: str
    attached: tuple[str, ...]
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Topology:
    assets: tuple[Asset, ...]
    segments: tuple[NetworkSegment, ...] = ()
    extensions: dict[str, Any] = field(default_factory=dict)

    def asset(self, asset_id: str) -> Asset | None:
        return next((a for a in self.assets if a.id == asset_id), None)


@dataclass(frozen=True)
class Trigger:
    kind: str
    offset_s: int | None = None
    after: tuple[str, ...] = ()
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Inject:
    id: str
    target_asset: str
    action: str
    expected_actions: tuple[str, ...] = ()
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Event:
    id: str
    name: str
    trigger: Trigger
    injects: tuple[Inject, ...]
    attack_technique: str | None = None
    defend_refs: tuple[str, ...] = ()
    cwe_refs: tuple[str, ...] = ()
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SimulatedUser:
    id: str
    role: str
    timeline: tuple[tuple[int, str], ...] = ()
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Goal:
    """A trainee objective; achieved by the first trainee action matching ``pattern``."""

    id: str
    description: str
    pattern: str
    target_asset: str | None = None
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Hint:
    id: str
    text: str
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Storyline:
    id: str
    events: tuple[Event, ...]
    simulated_users: tuple[SimulatedUser, ...] = ()
    goals: tuple[Goal, ...] = ()
    hints: tuple[Hint, ...] = ()
    duration_s: int | None = None
    extensions: dict[str, Any] = field(default_factory=dict)

    def inject_owner(self) -> dict[str, str]:
        return {i.id: e.id for e in self.events for i in e.injects}


@dataclass(frozen=True)
class Locator:
    """Where a metric's observations come from: an asset's log or a quiz."""

    asset: str | None = None
    kinds: tuple[str, ...] = ("trainee_action",)
    quiz: str | None = None
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ReferenceSolution:
    tokens: tuple[str, ...] = ()
    pattern: str | None = None
    text: str | None = None
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricDef:
    id: str
    kind: str
    source: Locator
    reference: ReferenceSolution = ReferenceSolution()
    params: dict[str, Any] = field(default_factory=dict)
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Unit:
    id: str
    kind: str
    name: str = ""
    topology: Topology | None = None
    storyline: Storyline | None = None
    metrics: tuple[MetricDef, ...] = ()
    metric_weights: dict[str, float] = field(default_factory=dict)
    extensions: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    name: str
    nice_roles: tuple[str, ...]
    units: tuple[Unit, ...]
    unit_weights: dict[str, float] = field(default_factory=dict)
    extensions: dict[str, Any] = field(default_factory=dict)

    def unit(self, unit_id: str) -> Unit | None:
        return next((u for u in self.units if u.id == unit_id), None)

    def assets(self) -> Iterator[Asset]:
        for unit in self.units:
            if unit.topology is not None:
                yield from unit.topology.assets

    def metrics(self) -> Iterator[tuple[Unit, MetricDef]]:
        for unit in self.units:
            for metric in unit.metrics:
                yield unit, metric


@dataclass(frozen=True)
class ExerciseDescription:
    schema_version: str
    service: ServiceSpec
    extensions: dict[str, Any] = field(default_factory=dict)


def uniform_weights(ids) -> dict[str, float]:
    ids = list(ids)
    return {i: 1.0 / len(ids) for i in ids} if ids else {}


# -- trigger graph -------------------------------------------------------------


class CycleError(ValueError):
    def __init__(self, members):
        self.members = tuple(members)
        super().__init__(f"trigger cycle among {{{', '.join(self.members)}}}")


def _dependency_graph(storyline: Storyline) -> dict[str, list[str]]:
    """event id -> prerequisite event ids; unresolved references are dropped."""
    owner = storyline.inject_owner()
    event_ids = {e.id for e in storyline.events}
    graph: dict[str, list[str]] = {}
    for event in storyline.events:
        deps: list[str] = []
        for ref in event.trigger.after:
            target = ref if ref in event_ids else owner.get(ref)
            if target is not None and target not in deps:
                deps.append(target)
        graph[event.id] = deps
    return graph


def _cycles(graph: dict[str, list[str]], order: list[str]) -> list[list[str]]:
    """Strongly connected components that contain a cycle (Tarjan, iterative)."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    found: list[list[str]] = []
    counter = 0
    for root in order:
        if root in index:
            continue
        work = [(root, iter(graph[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, children = work[-1]
            advanced = False
            for child in children:
                if child not in index:
                    index[child] = low[child] = counter
                    counter += 1
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(graph[child])))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1 or node in graph[node]:
                    position = {e: i for i, e in enumerate(order)}
                    found.append(sorted(component, key=position.__getitem__))
    return found


def topological_event_order(storyline: Storyline) -> list[str]:
    """Event ids with every prerequisite first; ties go to declaration order."""
    order = [e.id for e in storyline.events]
    position = {e: i for i, e in enumerate(order)}
    graph = _dependency_graph(storyline)
    pending = {e: len(deps) for e, deps in graph.items()}
    dependents: dict[str, list[str]] = {e: [] for e in order}
    for event_id, deps in graph.items():
        for dep in deps:
            dependents[dep].append(event_id)
    ready = [position[e] for e in order if pending[e] == 0]
    heapq.heapify(ready)
    result: list[str] = []
    while ready:
        event_id = order[heapq.heappop(ready)]
        result.append(event_id)
        for child in dependents[event_id]:
            pending[child] -= 1
            if pending[child] == 0:
                heapq.heappush(ready, position[child])
    if len(result) != len(order):
        cycles = _cycles(graph, order)
        raise CycleError(cycles[0] if cycles else [e for e in order if e not in result])
    return result


# -- validation ----------------------------------------------------------------


class _Checker:
    def __init__(self) -> None:
        self.out: list[Violation] = []
        self.declared: dict[str, str] = {}

    def add(self, code: str, path, message: str) -> None:
        self.out.append(Violation(code, join_path(path), message))

    def declare(self, ident: str, path: list) -> None:
        if not isinstance(ident, str) or not ID_RE.match(ident):
            self.add("E_PATTERN", path, f"{ident!r} is not a valid identifier")
            return
        if ident in self.declared:
            self.add("E_DUPLICATE_ID", path, f"{ident!r} already declared at {self.declared[ident]}")
        else:
            self.declared[ident] = join_path(path)

    def refs(self, values, pattern: re.Pattern, code: str, path: list, what: str) -> None:
        for i, value in enumerate(values):
            if not isinstance(value, str) or not pattern.match(value):
                self.add(code, path + [i], f"{value!r} is not a valid {what}")

    def enum(self, value, allowed, path: list) -> bool:
        if value not in allowed:
            self.add("E_ENUM", path, f"{value!r} not in {list(allowed)}")
            return False
        return True

    def weights(self, weights: dict, ids: list[str], path: list, what: str) -> None:
        for key, w in weights.items():
            if key not in ids:
                self.add("E_REF_UNRESOLVED", path + [key], f"weight for undeclared {what} {key!r}")
            if not isinstance(w, (int, float)) or not 0.0 <= w <= 1.0:
                self.add("E_WEIGHT_RANGE", path + [key], f"weight {w!r} outside [0, 1]")
        if ids and weights:
            total = math.fsum(w for w in weights.values() if isinstance(w, (int, float)))
            if abs(total - 1.0) > WEIGHT_TOL:
                self.add("E_WEIGHT_SUM", path, f"{what} weights sum to {total!r}, expected 1")


def validate_model(doc: ExerciseDescription) -> list[Violation]:
    """Every invariant violation of *doc*, path-ordered; empty means valid."""
    c = _Checker()
    if not isinstance(doc.schema_version, str) or not SEMVER_RE.match(doc.schema_version):
        c.add("E_SCHEMA_VERSION", ["schema_version"], f"{doc.schema_version!r} is not MAJOR.MINOR.PATCH")
    svc = doc.service
    sp: list = ["service"]
    c.declare(svc.id, sp + ["id"])
    c.refs(svc.nice_roles, NICE_RE, "E_NICE_PATTERN", sp + ["nice_roles"], "NICE work-role code")
    if not svc.units:
        c.add("E_EMPTY", sp + ["units"], "a service needs at least one unit")
    for ui, unit in enumerate(svc.units):
        _check_unit(c, unit, sp + ["units", ui])
    c.weights(svc.unit_weights, [u.id for u in svc.units], sp + ["unit_weights"], "unit")
    return ordered(c.out)


def _check_unit(c: _Checker, unit: Unit, up: list) -> None:
    c.declare(unit.id, up + ["id"])
    if c.enum(unit.kind, UNIT_KINDS, up + ["kind"]):
        if unit.kind == "cr_scenario":
            if unit.topology is None:
                c.add("E_UNIT_TOPOLOGY_REQUIRED", up + ["topology"], "cr_scenario units need a topology")
            if unit.storyline is None:
                c.add("E_UNIT_STORYLINE_REQUIRED", up + ["storyline"], "cr_scenario units need a storyline")
        elif unit.topology is not None:
            c.add("E_UNIT_TOPOLOGY_FORBIDDEN", up + ["topology"], f"{unit.kind} units carry no topology")
    asset_ids: set[str] = set()
    if unit.topology is not None:
        asset_ids = _check_topology(c, unit.topology, up + ["topology"])
    events: set[str] = set()
    if unit.storyline is not None:
        events = _check_storyline(c, unit.storyline, up + ["storyline"], asset_ids if unit.topology else None)
    for mi, metric in enumerate(unit.metrics):
        _check_metric(c, metric, up + ["metrics", mi], asset_ids, events)
    c.weights(unit.metric_weights, [m.id for m in unit.metrics], up + ["metric_weights"], "metric")


def _check_topology(c: _Checker, topo: Topology, tp: list) -> set[str]:
    ids: set[str] = set()
    for ai, asset in enumerate(topo.assets):
        ap = tp + ["assets", ai]
        c.declare(asset.id, ap + ["id"])
        ids.add(asset.id)
        c.enum(asset.kind, ASSET_KINDS, ap + ["kind"])
        for name, value in zip(CapacityVector.names(), asset.capacity_demand.components()):
            if value < 0:
                c.add("E_CAPACITY_NEGATIVE", ap + ["capacity_demand", name], f"{name} = {value} < 0")
        c.refs(asset.cwe_refs, CWE_RE, "E_CWE_PATTERN", ap + ["cwe_refs"], "CWE id")
    attached: set[str] = set()
    for si, seg in enumerate(topo.segments):
        sp = tp + ["segments", si]
        c.declare(seg.id, sp + ["id"])
        try:
            ipaddress.IPv4Network(seg.cidr, strict=True)
        except (ValueError, TypeError):
            c.add("E_CIDR_INVALID", sp + ["cidr"], f"{seg.cidr!r} is not an IPv4 network")
        if not seg.attached:
            c.add("E_SEGMENT_EMPTY", sp + ["attached"], "segment attaches no asset")
        seen: set[str] = set()
        for k, asset_id in enumerate(seg.attached):
            if asset_id in seen:
                c.add("E_DUPLICATE_ATTACHMENT", sp + ["attached", k], f"{asset_id!r} attached twice")
            seen.add(asset_id)
            if asset_id not in ids:
                c.add("E_REF_UNRESOLVED", sp + ["attached", k], f"undeclared asset {asset_id!r}")
        attached |= seen
    for ai, asset in enumerate(topo.assets):
        if asset.id not in attached and not asset.standalone:
            c.add("E_ASSET_UNATTACHED", tp + ["assets", ai], f"{asset.id!r} is on no segment")
    return ids


def _check_storyline(c: _Checker, story: Storyline, sp: list, asset_ids: set[str] | None) -> set[str]:
    c.declare(story.id, sp + ["id"])
    if story.duration_s is not None and story.duration_s < 0:
        c.add("E_TIMESTAMP_NEGATIVE", sp + ["duration_s"], "duration must be >= 0")
    referable = {e.id for e in story.events} | set(story.inject_owner())
    for ei, event in enumerate(story.events):
        ep = sp + ["events", ei]
        c.declare(event.id, ep + ["id"])
        if event.attack_technique is not None and not ATTACK_RE.match(str(event.attack_technique)):
            c.add("E_ATTACK_PATTERN", ep + ["attack_technique"], f"{event.attack_technique!r} is not an ATT&CK technique id")
        c.refs(event.defend_refs, D3FEND_RE, "E_D3FEND_PATTERN", ep + ["defend_refs"], "D3FEND id")
        c.refs(event.cwe_refs, CWE_RE, "E_CWE_PATTERN", ep + ["cwe_refs"], "CWE id")
        trig, tpath = event.trigger, ep + ["trigger"]
        if c.enum(trig.kind, TRIGGER_KINDS, tpath + ["kind"]):
            if trig.kind == "temporal":
                if trig.after:
                    c.add("E_TRIGGER_SHAPE", tpath + ["after"], "temporal triggers take no `after`")
                if trig.offset_s is None:
                    c.add("E_TRIGGER_SHAPE", tpath + ["offset_s"], "temporal triggers need offset_s")
                elif trig.offset_s < 0:
                    c.add("E_TIMESTAMP_NEGATIVE", tpath + ["offset_s"], "offset must be >= 0")
            else:
                if not trig.after:
                    c.add("E_TRIGGER_SHAPE", tpath + ["after"], "conditional triggers need `after`")
                if trig.offset_s is not None:
                    c.add("E_TRIGGER_SHAPE", tpath + ["offset_s"], "conditional triggers take no offset_s")
        for k, ref in enumerate(trig.after):
            if ref not in referable:
                c.add("E_REF_UNRESOLVED", tpath + ["after", k], f"undeclared event or inject {ref!r}")
        if not event.injects:
            c.add("E_EMPTY", ep + ["injects"], "an event needs at least one inject")
        for ii, inject in enumerate(event.injects):
            ip = ep + ["injects", ii]
            c.declare(inject.id, ip + ["id"])
            if asset_ids is not None and inject.target_asset not in asset_ids:
                c.add("E_REF_UNRESOLVED", ip + ["target_asset"], f"undeclared asset {inject.target_asset!r}")
    position = {e.id: i for i, e in enumerate(story.events)}
    for members in _cycles(_dependency_graph(story), [e.id for e in story.events]):
        first = position[members[0]]
        c.add("E_TRIGGER_CYCLE", sp + ["events", first, "trigger", "after"],
              "trigger cycle among {" + ", ".join(members) + "}")
    for ui, user in enumerate(story.simulated_users):
        up = sp + ["simulated_users", ui]
        c.declare(user.id, up + ["id"])
        c.enum(user.role, USER_ROLES, up + ["role"])
        previous = 0
        for k, (t_s, _action) in enumerate(user.timeline):
            if t_s < 0:
                c.add("E_TIMESTAMP_NEGATIVE", up + ["timeline", k, "t_s"], "timestamp must be >= 0")
            elif t_s < previous:
                c.add("E_TIMELINE_ORDER", up + ["timeline", k, "t_s"], f"{t_s} follows {previous}")
            previous = max(previous, t_s)
    for gi, goal in enumerate(story.goals):
        gp = sp + ["goals", gi]
        c.declare(goal.id, gp + ["id"])
        if asset_ids is not None and goal.target_asset is not None and goal.target_asset not in asset_ids:
            c.add("E_REF_UNRESOLVED", gp + ["target_asset"], f"undeclared asset {goal.target_asset!r}")
    for hi, hint in enumerate(story.hints):
        c.declare(hint.id, sp + ["hints", hi, "id"])
    return {e.id for e in story.events}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_metric(c: _Checker, metric: MetricDef, mp: list, asset_ids: set[str], events: set[str]) -> None:
    c.declare(metric.id, mp + ["id"])
    if not c.enum(metric.kind, METRIC_KINDS, mp + ["kind"]):
        return
    src, ref, params = metric.source, metric.reference, metric.params
    if metric.kind == "essay":
        if not src.quiz or src.asset is not None:
            c.add("E_LOCATOR", mp + ["source"], "essay metrics read a quiz locator")
        if not ref.text:
            c.add("E_METRIC_PARAMS", mp + ["reference", "text"], "essay metrics need a reference text")
    else:
        if not src.asset or src.quiz is not None:
            c.add("E_LOCATOR", mp + ["source"], f"{metric.kind} metrics read an asset log locator")
        elif src.asset not in asset_ids:
            c.add("E_REF_UNRESOLVED", mp + ["source", "asset"], f"undeclared asset {src.asset!r}")
        for k, kind in enumerate(src.kinds):
            c.enum(kind, RECORD_KINDS, mp + ["source", "kinds", k])
    if metric.kind == "sequence" and not ref.tokens:
        c.add("E_METRIC_PARAMS", mp + ["reference", "tokens"], "sequence metrics need reference tokens")
    elif metric.kind == "quantity":
        count = params.get("expected_count")
        if not _is_int(count) or count < 1:
            c.add("E_METRIC_PARAMS", mp + ["params", "expected_count"], "expected_count must be an integer >= 1")
        if not ref.tokens:
            c.add("E_METRIC_PARAMS", mp + ["reference", "tokens"], "quantity metrics list the accepted actions")
    elif metric.kind == "time":
        target, limit = params.get("target_s"), params.get("limit_s")
        if not (_is_int(target) and _is_int(limit) and 0 <= target < limit):
            c.add("E_METRIC_PARAMS", mp + ["params"], "time metrics need integers 0 <= target_s < limit_s")
        if not ref.pattern:
            c.add("E_METRIC_PARAMS", mp + ["reference", "pattern"], "time metrics need a completion pattern")
        start = params.get("start_event")
        if start is not None and start not in events:
            c.add("E_REF_UNRESOLVED", mp + ["params", "start_event"], f"undeclared event {start!r}")
    elif metric.kind == "task" and not ref.pattern:
        c.add("E_METRIC_PARAMS", mp + ["reference", "pattern"], "task metrics need a predicate pattern")
