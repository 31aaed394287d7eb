"""Capacity-capability registry and federation matchmaking.

The registry is a value: every mutation returns a new :class:`Registry`.
:class:`RegistryStore` adds the single-writer discipline for a registry that
lives on disk and may be shared by several processes.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from filelock import FileLock

from . import yamlutil
from .model import ID_RE, CapabilityProfile, CapacityVector, ExerciseDescription

K_ALTERNATIVES = 3
EXACT_RANGE_LIMIT = 8

Window = tuple[int, int]


class DuplicateRange(ValueError):
    pass


class StalePlanError(RuntimeError):
    """The plan is no longer feasible against the current registry."""


class UnknownRequest(KeyError):
    pass


class RegistryError(ValueError):
    """A persisted registry is malformed or inconsistent."""


@dataclass(frozen=True)
class Reservation:
    request_id: str
    range_id: str
    consumed: CapacityVector
    window: Window

    def __post_init__(self) -> None:
        start, end = self.window
        if end <= start:
            raise ValueError(f"reservation window {self.window} is empty")
        if any(c < 0 for c in self.consumed.components()):
            raise ValueError("consumed capacity must be non-negative")


@dataclass(frozen=True)
class Demand:
    asset_id: str
    capacity: CapacityVector
    tags: frozenset[str] = frozenset()
    locality: str | None = None


@dataclass(frozen=True)
class MatchRequest:
    request_id: str
    demands: tuple[Demand, ...]
    window: Window

    def __post_init__(self) -> None:
        ids = [d.asset_id for d in self.demands]
        if len(set(ids)) != len(ids):
            raise ValueError("demand asset ids must be unique")
        if self.window[1] <= self.window[0]:
            raise ValueError(f"request window {self.window} is empty")


@dataclass(frozen=True)
class FederationPlan:
    request_id: str
    assignment: Mapping[str, str]
    window: Window
    heuristic: bool = False
    relaxation: str | None = None

    def ranges(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.assignment.values())))


RankKey = tuple[int, Fraction, tuple[tuple[str, ...], tuple[str, ...]]]


@dataclass(frozen=True)
class RankedPlan:
    plan: FederationPlan
    rank_key: RankKey


@dataclass(frozen=True)
class NoFit:
    alternatives: tuple[RankedPlan, ...] = ()


@dataclass(frozen=True)
class Registry:
    ranges: Mapping[str, CapabilityProfile] = field(default_factory=lambda: MappingProxyType({}))
    reservations: tuple[Reservation, ...] = ()

    def profile(self, range_id: str) -> CapabilityProfile:
        return self.ranges[range_id]


# -- capacity accounting ----------------------------------------------------------


def _overlaps(a: Window, b: Window) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def reserved_in(reg: Registry, range_id: str, window: Window) -> CapacityVector:
    """Peak concurrent consumption on *range_id* at any instant of *window*."""
    active = [r for r in reg.reservations if r.range_id == range_id and _overlaps(r.window, window)]
    peak = CapacityVector()
    for instant in {window[0]} | {r.window[0] for r in active if r.window[0] > window[0]}:
        load = CapacityVector()
        for r in active:
            if r.window[0] <= instant < r.window[1]:
                load = load + r.consumed
        peak = peak.maximum(load)
    return peak


def free_in(reg: Registry, range_id: str, window: Window) -> CapacityVector:
    return reg.ranges[range_id].total - reserved_in(reg, range_id, window)


def _all_time(reg: Registry) -> Window | None:
    if not reg.reservations:
        return None
    return (min(r.window[0] for r in reg.reservations), max(r.window[1] for r in reg.reservations))


def _refresh(reg: Registry, ranges: dict[str, CapabilityProfile], reservations: tuple[Reservation, ...]) -> Registry:
    draft = Registry(MappingProxyType(dict(ranges)), reservations)
    span = _all_time(draft)
    updated = {
        rid: replace(p, reserved=reserved_in(draft, rid, span) if span else CapacityVector())
        for rid, p in sorted(ranges.items())
    }
    return Registry(MappingProxyType(updated), reservations)


def safety_violations(reg: Registry) -> list[str]:
    """Ranges whose reservations exceed total capacity at some instant."""
    problems = []
    for rid, profile in reg.ranges.items():
        if not profile.reserved.fits(profile.total):
            problems.append(f"{rid}: reserved {profile.reserved} exceeds total {profile.total}")
    for r in reg.reservations:
        if r.range_id not in reg.ranges:
            problems.append(f"reservation {r.request_id} names unknown range {r.range_id}")
    return problems


# -- lifecycle ----------------------------------------------------------------------


def register(reg: Registry, profile: CapabilityProfile) -> Registry:
    if not ID_RE.match(profile.range_id):
        raise ValueError(f"invalid range id {profile.range_id!r}")
    if any(c < 0 for c in profile.total.components()):
        raise ValueError("total capacity must be non-negative")
    fresh = replace(profile, tags=frozenset(profile.tags), reserved=CapacityVector())
    existing = reg.ranges.get(profile.range_id)
    if existing is not None:
        if (existing.tags, existing.total) == (fresh.tags, fresh.total):
            return reg
        raise DuplicateRange(profile.range_id)
    return _refresh(reg, {**reg.ranges, profile.range_id: fresh}, reg.reservations)


def _loads(plan: FederationPlan, demands: Mapping[str, CapacityVector]) -> dict[str, CapacityVector]:
    loads: dict[str, CapacityVector] = {}
    for asset_id, range_id in plan.assignment.items():
        loads[range_id] = loads.get(range_id, CapacityVector()) + demands[asset_id]
    return loads


def reserve(reg: Registry, plan: FederationPlan, demands: Mapping[str, CapacityVector],
            window: Window | None = None) -> Registry:
    """Re-check *plan* against current free capacity and append its reservations.

    *demands* maps asset id to the capacity it consumes.
    """
    window = window or plan.window
    loads = _loads(plan, demands)
    if not loads:
        return reg
    if any(r.request_id == plan.request_id for r in reg.reservations):
        raise StalePlanError(f"request {plan.request_id!r} already holds a reservation")
    for range_id, load in sorted(loads.items()):
        if range_id not in reg.ranges or not load.fits(free_in(reg, range_id, window)):
            raise StalePlanError(f"range {range_id!r} can no longer host {plan.request_id!r}")
    added = tuple(Reservation(plan.request_id, rid, load, window) for rid, load in sorted(loads.items()))
    return _refresh(reg, dict(reg.ranges), reg.reservations + added)


def release(reg: Registry, request_id: str) -> Registry:
    kept = tuple(r for r in reg.reservations if r.request_id != request_id)
    if len(kept) == len(reg.reservations):
        raise UnknownRequest(request_id)
    return _refresh(reg, dict(reg.ranges), kept)


# -- matchmaking ----------------------------------------------------------------------


def _candidates(reg: Registry, demand: Demand, window: Window, honor_locality: bool) -> list[str]:
    out = []
    for rid in sorted(reg.ranges):
        profile = reg.ranges[rid]
        if honor_locality and demand.locality is not None and demand.locality != rid:
            continue
        if demand.tags <= profile.tags and demand.capacity.fits(free_in(reg, rid, window)):
            out.append(rid)
    return out


def _unit_cost(demand: CapacityVector, total: CapacityVector) -> Fraction:
    return sum((Fraction(d, t) for d, t in zip(demand.components(), total.components()) if t > 0), Fraction(0))


def rank_key(reg: Registry, req: MatchRequest, assignment: Mapping[str, str], window: Window | None = None) -> RankKey:
    """(range count, negated normalized slack, (sorted ranges, per-demand ranges))."""
    window = window or req.window
    loads: dict[str, CapacityVector] = {}
    for d in req.demands:
        rid = assignment[d.asset_id]
        loads[rid] = loads.get(rid, CapacityVector()) + d.capacity
    slack = Fraction(0)
    for rid, load in loads.items():
        total = reg.ranges[rid].total
        slack += _unit_cost(free_in(reg, rid, window) - load, total)
    used = tuple(sorted(loads))
    return (len(used), -slack, (used, tuple(assignment[d.asset_id] for d in req.demands)))


def _search_exact(reg: Registry, req: MatchRequest, cands: list[list[str]], window: Window) -> dict[str, str] | None:
    demands = req.demands
    pool = sorted(set(itertools.chain.from_iterable(cands)))
    free = {rid: free_in(reg, rid, window) for rid in pool}
    cost = [{rid: _unit_cost(d.capacity, reg.ranges[rid].total) for rid in c} for d, c in zip(demands, cands)]
    for k in range(1, len(pool) + 1):
        best: tuple[Fraction, tuple[str, ...], tuple[str, ...]] | None = None
        for subset in itertools.combinations(pool, k):
            members = set(subset)
            options = [[rid for rid in c if rid in members] for c in cands]
            if any(not o for o in options):
                continue
            base = sum((_unit_cost(free[rid], reg.ranges[rid].total) for rid in subset), Fraction(0))
            floor = [min(cost[i][rid] for rid in options[i]) for i in range(len(demands))]
            suffix = list(itertools.accumulate(reversed(floor), initial=Fraction(0)))[::-1]
            local: dict = {"cost": None, "pick": None}
            load = {rid: CapacityVector() for rid in subset}
            pick: list[str] = []

            def descend(i: int, spent: Fraction) -> None:
                bound = spent + suffix[i]
                if local["cost"] is not None and bound >= local["cost"]:
                    return
                if best is not None and (bound - base, subset) >= best[:2]:
                    return
                if i == len(demands):
                    local["cost"], local["pick"] = spent, tuple(pick)
                    return
                for rid in options[i]:
                    new = load[rid] + demands[i].capacity
                    if not new.fits(free[rid]):
                        continue
                    load[rid] = new
                    pick.append(rid)
                    descend(i + 1, spent + cost[i][rid])
                    pick.pop()
                    load[rid] = new - demands[i].capacity

            descend(0, Fraction(0))
            if local["pick"] is not None:
                key = (local["cost"] - base, subset, local["pick"])
                if best is None or key < best:
                    best = key
        if best is not None:
            return {d.asset_id: rid for d, rid in zip(demands, best[2])}
    return None


def _search_first_fit(reg: Registry, req: MatchRequest, cands: list[list[str]], window: Window) -> dict[str, str] | None:
    order = sorted(range(len(req.demands)), key=lambda i: (-sum(req.demands[i].capacity.components()), i))
    free = {rid: free_in(reg, rid, window) for rid in reg.ranges}
    chosen: dict[str, str] = {}
    for i in order:
        d = req.demands[i]
        for rid in cands[i]:
            if d.capacity.fits(free[rid]):
                free[rid] = free[rid] - d.capacity
                chosen[d.asset_id] = rid
                break
        else:
            return None
    return {d.asset_id: chosen[d.asset_id] for d in req.demands}


def _solve(reg: Registry, req: MatchRequest, window: Window, honor_locality: bool,
           relaxation: str | None) -> RankedPlan | None:
    cands = [_candidates(reg, d, window, honor_locality) for d in req.demands]
    if any(not c for c in cands):
        return None
    pool = set(itertools.chain.from_iterable(cands))
    heuristic = len(pool) > EXACT_RANGE_LIMIT
    if heuristic:
        assignment = _search_first_fit(reg, req, cands, window)
    else:
        assignment = _search_exact(reg, req, cands, window) if req.demands else {}
    if assignment is None:
        return None
    plan = FederationPlan(req.request_id, MappingProxyType(assignment), window, heuristic, relaxation)
    return RankedPlan(plan, rank_key(reg, req, assignment, window))


def match(reg: Registry, req: MatchRequest) -> RankedPlan | NoFit:
    """Rank-minimal feasible plan, or up to three relaxed alternatives."""
    found = _solve(reg, req, req.window, True, None)
    if found is not None:
        return found
    alternatives: list[RankedPlan] = []
    if any(d.locality is not None for d in req.demands):
        relaxed = _solve(reg, req, req.window, False, "locality")
        if relaxed is not None:
            alternatives.append(relaxed)
    length = req.window[1] - req.window[0]
    starts = sorted({r.window[1] for r in reg.reservations if r.window[1] > req.window[0]})
    for start in starts:
        if len(alternatives) >= K_ALTERNATIVES:
            break
        later = (start, start + length)
        shifted = _solve(reg, req, later, True, f"window:{later[0]}-{later[1]}")
        if shifted is not None:
            alternatives.append(shifted)
    return NoFit(tuple(alternatives[:K_ALTERNATIVES]))


def request_from_doc(doc: ExerciseDescription, window: Window, request_id: str | None = None) -> MatchRequest:
    demands = tuple(
        Demand(a.id, a.capacity_demand, frozenset(a.capability_demand), a.locality) for a in doc.service.assets()
    )
    return MatchRequest(request_id or doc.service.id, demands, window)


# -- persistence ------------------------------------------------------------------------


def _capacity_dict(c: CapacityVector) -> dict[str, int]:
    return dict(zip(CapacityVector.names(), c.components()))


def registry_to_dict(reg: Registry) -> dict:
    return {
        "ranges": [
            {"range_id": p.range_id, "tags": sorted(p.tags), "total": _capacity_dict(p.total)}
            for _, p in sorted(reg.ranges.items())
        ],
        "reservations": [
            {"request_id": r.request_id, "range_id": r.range_id,
             "consumed": _capacity_dict(r.consumed), "window": list(r.window)}
            for r in reg.reservations
        ],
    }


def _capacity_from(raw) -> CapacityVector:
    if not isinstance(raw, dict) or set(raw) - set(CapacityVector.names()):
        raise RegistryError(f"bad capacity vector {raw!r}")
    values = [raw.get(n, 0) for n in CapacityVector.names()]
    if any(not isinstance(v, int) or isinstance(v, bool) or v < 0 for v in values):
        raise RegistryError(f"capacity components must be non-negative integers: {raw!r}")
    return CapacityVector.of(values)


def registry_from_dict(data) -> Registry:
    if not isinstance(data, dict):
        raise RegistryError("registry must be a mapping")
    reg = Registry()
    try:
        for raw in data.get("ranges") or []:
            profile = CapabilityProfile(str(raw["range_id"]), frozenset(raw.get("tags") or ()),
                                        _capacity_from(raw.get("total", {})))
            if profile.range_id in reg.ranges:
                raise RegistryError(f"range {profile.range_id!r} listed twice")
            reg = register(reg, profile)
        reservations = []
        for raw in data.get("reservations") or []:
            start, end = raw["window"]
            reservations.append(Reservation(str(raw["request_id"]), str(raw["range_id"]),
                                            _capacity_from(raw["consumed"]), (int(start), int(end))))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RegistryError):
            raise
        raise RegistryError(f"malformed registry: {exc}") from exc
    reg = _refresh(reg, dict(reg.ranges), tuple(reservations))
    problems = safety_violations(reg)
    if problems:
        raise RegistryError("; ".join(problems))
    return reg


def load_registry(path: str | Path) -> Registry:
    return registry_from_dict(yamlutil.load(Path(path).read_text(encoding="utf-8")))


def save_registry(reg: Registry, path: str | Path) -> None:
    Path(path).write_text(yamlutil.dump(registry_to_dict(reg)), encoding="utf-8", newline="\n")


def reservation_records(reservations: Iterable[Reservation], op: str, timestamp: str | None = None) -> list[dict]:
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    return [
        {"op": op, "request_id": r.request_id, "range_id": r.range_id,
         "consumed": _capacity_dict(r.consumed), "window": list(r.window), "timestamp": stamp}
        for r in reservations
    ]


def append_log(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plan_to_dict(ranked: RankedPlan) -> dict:
    plan = ranked.plan
    count, neg_slack, (used, _per_demand) = ranked.rank_key
    out = {"request_id": plan.request_id, "window": list(plan.window), "heuristic": plan.heuristic}
    if plan.relaxation:
        out["relaxation"] = plan.relaxation
    out["assignment"] = dict(plan.assignment)
    out["rank_key"] = {"range_count": count, "neg_slack": str(neg_slack), "lexical": ",".join(used)}
    return out


def plan_from_dict(data) -> FederationPlan:
    try:
        start, end = data["window"]
        assignment = {str(k): str(v) for k, v in dict(data["assignment"]).items()}
        return FederationPlan(str(data["request_id"]), MappingProxyType(assignment), (int(start), int(end)),
                              bool(data.get("heuristic", False)), data.get("relaxation"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed plan: {exc}") from exc


class RegistryStore:
    """Single-writer access to a registry file and its append-only reservation log.

    Check-and-reserve runs under one lock, so no other reservation can commit
    between the feasibility check and the write.
    """

    def __init__(self, path: str | Path, log_path: str | Path | None = None):
        self.path = Path(path)
        self.log_path = Path(log_path) if log_path else self.path.with_name("reservations.jsonl")
        self._thread_lock = threading.Lock()
        self._file_lock = FileLock(str(self.path) + ".lock")

    def snapshot(self) -> Registry:
        return load_registry(self.path)

    def reserve(self, plan: FederationPlan, demands: Mapping[str, CapacityVector]) -> Registry:
        with self._thread_lock, self._file_lock:
            before = load_registry(self.path)
            after = reserve(before, plan, demands)
            added = after.reservations[len(before.reservations):]
            save_registry(after, self.path)
            append_log(self.log_path, reservation_records(added, "reserve"))
            return after

    def release(self, request_id: str) -> Registry:
        with self._thread_lock, self._file_lock:
            before = load_registry(self.path)
            after = release(before, request_id)
            dropped = [r for r in before.reservations if r.request_id == request_id]
            save_registry(after, self.path)
            append_log(self.log_path, reservation_records(dropped, "release"))
            return after
