"""Compile an exercise description and a federation plan into deployable artefacts.

Output is one :class:`DeploymentManifest` per range plus a single
:class:`ScoringConfig` that tells the evaluator what to score and where the
observations come from.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import yamlutil
from .broker import FederationPlan
from .edl_io import doc_hash, to_dict
from .model import (
    CapacityVector,
    ExerciseDescription,
    ReferenceSolution,
    topological_event_order,
)
from .violations import Violation, join_path, ordered


class LocalityViolation(ValueError):
    pass


class AddressExhaustion(ValueError):
    pass


class IncompletePlan(ValueError):
    pass


@dataclass(frozen=True)
class ManifestAsset:
    id: str
    unit_id: str
    kind: str
    capacity_demand: CapacityVector
    capability_demand: tuple[str, ...]
    addresses: tuple[tuple[str, str], ...]  # (segment id, address)


@dataclass(frozen=True)
class ManifestSegment:
    id: str
    cidr: str
    members: tuple[tuple[str, str], ...]  # (asset id, address)


@dataclass(frozen=True)
class CrossRangeLink:
    segment: str
    peer_range: str
    peer_segment: str


@dataclass(frozen=True)
class DeploymentManifest:
    range_id: str
    service_id: str
    doc_hash: str
    assets: tuple[ManifestAsset, ...]
    segments: tuple[ManifestSegment, ...]
    cross_range_links: tuple[CrossRangeLink, ...]


@dataclass(frozen=True)
class MetricScoring:
    metric_id: str
    kind: str
    weight: float
    range_id: str | None
    asset_id: str | None
    kinds: tuple[str, ...]
    quiz: str | None
    reference: ReferenceSolution
    params: Mapping[str, Any]


@dataclass(frozen=True)
class SAConfig:
    goals: tuple[str, ...]
    hints: tuple[str, ...]
    expected_actions: Mapping[str, tuple[str, ...]]  # inject id -> reference responses
    prerequisites: Mapping[str, tuple[str, ...]]  # event id -> prerequisite event ids
    event_order: tuple[str, ...]
    duration_s: int | None


@dataclass(frozen=True)
class UnitScoring:
    unit_id: str
    kind: str
    weight: float
    metrics: tuple[MetricScoring, ...]
    sa: SAConfig | None = None


@dataclass(frozen=True)
class ScoringConfig:
    service_id: str
    doc_hash: str
    units: tuple[UnitScoring, ...]
    extras: Mapping[str, Any] = field(default_factory=dict)

    def metric(self, metric_id: str) -> tuple[UnitScoring, MetricScoring] | None:
        for unit in self.units:
            for m in unit.metrics:
                if m.metric_id == metric_id:
                    return unit, m
        return None


def _assign_addresses(doc: ExerciseDescription) -> dict[tuple[str, str], str]:
    """(segment, asset) -> address: lowest free host, attachment declaration order."""
    addresses: dict[tuple[str, str], str] = {}
    for unit in doc.service.units:
        if unit.topology is None:
            continue
        for seg in unit.topology.segments:
            network = ipaddress.IPv4Network(seg.cidr, strict=True)
            hosts = network.hosts()
            for asset_id in seg.attached:
                host = next(hosts, None)
                if host is None:
                    raise AddressExhaustion(
                        f"segment {seg.id} ({seg.cidr}) cannot address {len(seg.attached)} assets")
                addresses[(seg.id, asset_id)] = str(host)
    return addresses


def _prerequisites(storyline) -> dict[str, tuple[str, ...]]:
    owner = storyline.inject_owner()
    events = {e.id for e in storyline.events}
    out = {}
    for event in storyline.events:
        deps: list[str] = []
        for ref in event.trigger.after:
            target = ref if ref in events else owner.get(ref)
            if target is not None and target not in deps:
                deps.append(target)
        out[event.id] = tuple(deps)
    return out


def compile(doc: ExerciseDescription, plan: FederationPlan) -> tuple[list[DeploymentManifest], ScoringConfig]:
    """Partition assets by assigned range, assign addresses and link split segments."""
    assigned = dict(plan.assignment)
    for asset in doc.service.assets():
        if asset.id not in assigned:
            raise IncompletePlan(f"plan assigns no range to asset {asset.id!r}")
        if asset.locality is not None and assigned[asset.id] != asset.locality:
            raise LocalityViolation(
                f"asset {asset.id!r} must run on {asset.locality!r}, plan puts it on {assigned[asset.id]!r}")
    addresses = _assign_addresses(doc)
    digest = doc_hash(doc)

    per_range_assets: dict[str, list[ManifestAsset]] = {}
    per_range_segments: dict[str, list[ManifestSegment]] = {}
    per_range_links: dict[str, list[CrossRangeLink]] = {}
    for unit in doc.service.units:
        if unit.topology is None:
            continue
        for asset in unit.topology.assets:
            rid = assigned[asset.id]
            addrs = tuple((seg.id, addresses[(seg.id, asset.id)])
                          for seg in unit.topology.segments if asset.id in seg.attached)
            per_range_assets.setdefault(rid, []).append(ManifestAsset(
                asset.id, unit.id, asset.kind, asset.capacity_demand,
                tuple(sorted(asset.capability_demand)), addrs))
        for seg in unit.topology.segments:
            ranges_here: list[str] = []
            for asset_id in seg.attached:
                if assigned[asset_id] not in ranges_here:
                    ranges_here.append(assigned[asset_id])
            for rid in ranges_here:
                members = tuple((a, addresses[(seg.id, a)]) for a in seg.attached if assigned[a] == rid)
                per_range_segments.setdefault(rid, []).append(ManifestSegment(seg.id, seg.cidr, members))
                for peer in sorted(ranges_here):
                    if peer != rid:
                        per_range_links.setdefault(rid, []).append(CrossRangeLink(seg.id, peer, seg.id))

    manifests = [
        DeploymentManifest(
            range_id=rid,
            service_id=doc.service.id,
            doc_hash=digest,
            assets=tuple(per_range_assets.get(rid, ())),
            segments=tuple(per_range_segments.get(rid, ())),
            cross_range_links=tuple(sorted(per_range_links.get(rid, ()),
                                           key=lambda link: (link.segment, link.peer_range))),
        )
        for rid in sorted(set(assigned.values()))
    ]
    return manifests, _scoring_config(doc, assigned, digest)


def _scoring_config(doc: ExerciseDescription, assigned: Mapping[str, str], digest: str) -> ScoringConfig:
    units = []
    for unit in doc.service.units:
        metrics = tuple(
            MetricScoring(
                metric_id=m.id,
                kind=m.kind,
                weight=unit.metric_weights.get(m.id, 0.0),
                range_id=assigned.get(m.source.asset) if m.source.asset else None,
                asset_id=m.source.asset,
                kinds=m.source.kinds if m.source.asset else (),
                quiz=m.source.quiz,
                reference=m.reference,
                params=dict(m.params),
            )
            for m in unit.metrics
        )
        sa = None
        story = unit.storyline
        if story is not None:
            sa = SAConfig(
                goals=tuple(g.id for g in story.goals),
                hints=tuple(h.id for h in story.hints),
                expected_actions={i.id: i.expected_actions for e in story.events for i in e.injects},
                prerequisites=_prerequisites(story),
                event_order=tuple(topological_event_order(story)),
                duration_s=story.duration_s,
            )
        units.append(UnitScoring(unit.id, unit.kind, doc.service.unit_weights.get(unit.id, 0.0), metrics, sa))
    return ScoringConfig(doc.service.id, digest, tuple(units))


# -- consistency ------------------------------------------------------------------------


def consistency_check(manifests: Iterable[DeploymentManifest], doc: ExerciseDescription) -> list[Violation]:
    """Partition, coverage, address and link-symmetry checks; empty iff consistent."""
    manifests = list(manifests)
    out: list[Violation] = []
    declared = {a.id for a in doc.service.assets()}
    segments = {s.id: s for u in doc.service.units if u.topology for s in u.topology.segments}
    home: dict[str, str] = {}
    for m in manifests:
        for ai, asset in enumerate(m.assets):
            path = ["manifests", m.range_id, "assets", ai]
            if asset.id not in declared:
                out.append(Violation("E_ASSET_UNKNOWN", join_path(path), f"{asset.id!r} is not in the topology"))
            elif asset.id in home:
                out.append(Violation("E_ASSET_DUPLICATED", join_path(path),
                                     f"{asset.id!r} already deployed on {home[asset.id]!r}"))
            else:
                home[asset.id] = m.range_id
    for asset in doc.service.assets():
        if asset.id not in home:
            out.append(Violation("E_ASSET_MISSING", join_path(["manifests"]), f"{asset.id!r} is deployed nowhere"))

    used: dict[str, set[str]] = {}
    for m in manifests:
        for si, seg in enumerate(m.segments):
            declared_seg = segments.get(seg.id)
            for k, (asset_id, address) in enumerate(seg.members):
                path = join_path(["manifests", m.range_id, "segments", si, "members", k])
                taken = used.setdefault(seg.id, set())
                inside = False
                if declared_seg is not None:
                    try:
                        inside = ipaddress.IPv4Address(address) in ipaddress.IPv4Network(declared_seg.cidr)
                    except ValueError:
                        inside = False
                if not inside or address in taken:
                    out.append(Violation("E_ADDRESS_CONFLICT", path, f"{address} for {asset_id!r} on {seg.id!r}"))
                taken.add(address)

    links = {(m.range_id, link.segment, link.peer_range, link.peer_segment) for m in manifests
             for link in m.cross_range_links}
    for m in manifests:
        for li, link in enumerate(m.cross_range_links):
            if (link.peer_range, link.peer_segment, m.range_id, link.segment) not in links:
                out.append(Violation("E_LINK_ASYMMETRIC", join_path(["manifests", m.range_id, "cross_range_links", li]),
                                     f"{link.peer_range!r} has no link back for segment {link.segment!r}"))
    spans: dict[str, set[str]] = {}
    for m in manifests:
        for seg in m.segments:
            spans.setdefault(seg.id, set()).add(m.range_id)
    for seg_id, ranges in sorted(spans.items()):
        for rid in sorted(ranges):
            for peer in sorted(ranges - {rid}):
                if (rid, seg_id, peer, seg_id) not in links:
                    out.append(Violation("E_LINK_ASYMMETRIC", join_path(["manifests", rid, "cross_range_links"]),
                                         f"segment {seg_id!r} spans {peer!r} without a link"))
    return ordered(out)


# -- serialization ----------------------------------------------------------------------


def manifest_to_dict(m: DeploymentManifest) -> dict:
    return {
        "range_id": m.range_id,
        "service_id": m.service_id,
        "doc_hash": m.doc_hash,
        "assets": [
            {"id": a.id, "unit_id": a.unit_id, "kind": a.kind,
             "capacity_demand": to_dict(a.capacity_demand),
             "capability_demand": list(a.capability_demand),
             "addresses": [{"segment": s, "address": ip} for s, ip in a.addresses]}
            for a in m.assets
        ],
        "segments": [
            {"id": s.id, "cidr": s.cidr, "members": [{"asset": a, "address": ip} for a, ip in s.members]}
            for s in m.segments
        ],
        "cross_range_links": [
            {"segment": link.segment, "peer_range": link.peer_range, "peer_segment": link.peer_segment}
            for link in m.cross_range_links
        ],
    }


def manifest_from_dict(data: dict) -> DeploymentManifest:
    return DeploymentManifest(
        range_id=data["range_id"],
        service_id=data["service_id"],
        doc_hash=data["doc_hash"],
        assets=tuple(
            ManifestAsset(a["id"], a["unit_id"], a["kind"], CapacityVector(**a["capacity_demand"]),
                          tuple(a["capability_demand"]),
                          tuple((x["segment"], x["address"]) for x in a["addresses"]))
            for a in data["assets"]
        ),
        segments=tuple(
            ManifestSegment(s["id"], s["cidr"], tuple((x["asset"], x["address"]) for x in s["members"]))
            for s in data["segments"]
        ),
        cross_range_links=tuple(
            CrossRangeLink(x["segment"], x["peer_range"], x["peer_segment"]) for x in data["cross_range_links"]
        ),
    )


def _reference_dict(ref: ReferenceSolution) -> dict:
    return to_dict(ref)


def scoring_to_dict(cfg: ScoringConfig) -> dict:
    units = []
    for u in cfg.units:
        entry: dict[str, Any] = {"unit_id": u.unit_id, "kind": u.kind, "weight": u.weight, "metrics": []}
        for m in u.metrics:
            source: dict[str, Any]
            if m.quiz is not None:
                source = {"quiz": m.quiz}
            else:
                source = {"range_id": m.range_id, "asset_id": m.asset_id, "kinds": list(m.kinds)}
            entry["metrics"].append({
                "id": m.metric_id, "kind": m.kind, "weight": m.weight, "source": source,
                "reference": _reference_dict(m.reference),
                "params": {k: m.params[k] for k in sorted(m.params)},
            })
        if u.sa is not None:
            entry["sa"] = {
                "goals": list(u.sa.goals),
                "hints": list(u.sa.hints),
                "expected_actions": {k: list(v) for k, v in u.sa.expected_actions.items()},
                "prerequisites": {k: list(v) for k, v in u.sa.prerequisites.items()},
                "event_order": list(u.sa.event_order),
                "duration_s": u.sa.duration_s,
            }
        units.append(entry)
    return {"service_id": cfg.service_id, "doc_hash": cfg.doc_hash, "units": units}


def scoring_from_dict(data: dict) -> ScoringConfig:
    units = []
    for u in data["units"]:
        metrics = []
        for m in u.get("metrics") or []:
            src = m["source"]
            ref = m.get("reference") or {}
            metrics.append(MetricScoring(
                metric_id=m["id"], kind=m["kind"], weight=float(m["weight"]),
                range_id=src.get("range_id"), asset_id=src.get("asset_id"),
                kinds=tuple(src.get("kinds", ())), quiz=src.get("quiz"),
                reference=ReferenceSolution(tuple(ref.get("tokens", ())), ref.get("pattern"), ref.get("text")),
                params=dict(m.get("params") or {}),
            ))
        sa = None
        if u.get("sa") is not None:
            raw = u["sa"]
            sa = SAConfig(
                goals=tuple(raw.get("goals", ())),
                hints=tuple(raw.get("hints", ())),
                expected_actions={k: tuple(v) for k, v in (raw.get("expected_actions") or {}).items()},
                prerequisites={k: tuple(v) for k, v in (raw.get("prerequisites") or {}).items()},
                event_order=tuple(raw.get("event_order", ())),
                duration_s=raw.get("duration_s"),
            )
        units.append(UnitScoring(u["unit_id"], u["kind"], float(u["weight"]), tuple(metrics), sa))
    return ScoringConfig(data["service_id"], data["doc_hash"], tuple(units))


def write_outputs(manifests: list[DeploymentManifest], cfg: ScoringConfig, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for m in manifests:
        path = out / f"{m.range_id}.manifest.yaml"
        path.write_text(yamlutil.dump(manifest_to_dict(m)), encoding="utf-8", newline="\n")
        written.append(path)
    path = out / f"{cfg.service_id}.fpe.yaml"
    path.write_text(yamlutil.dump(scoring_to_dict(cfg)), encoding="utf-8", newline="\n")
    written.append(path)
    return written
