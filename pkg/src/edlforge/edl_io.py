"""Parsing, schema validation and canonical serialization of ``.edl.yaml`` documents."""

from __future__ import annotations

import copy
import hashlib
import re
from dataclasses import dataclass, fields, is_dataclass
from functools import lru_cache
from importlib import resources
from typing import Any

import jsonschema

from . import yamlutil
from .model import (
    Asset,
    CapacityVector,
    Event,
    ExerciseDescription,
    Goal,
    Hint,
    Inject,
    Locator,
    MetricDef,
    NetworkSegment,
    ReferenceSolution,
    ServiceSpec,
    SimulatedUser,
    Storyline,
    Topology,
    Trigger,
    Unit,
    uniform_weights,
    validate_model,
)
from .violations import Violation, join_path, ordered
from .yamlutil import EdlSyntaxError

EXTENSION_PREFIX = "x-"
_EXTENSION_RE = re.compile(r"^x-")

# keyword -> violation code when the failing schema node carries no x-code
_GENERIC_CODES = {
    "required": "E_MISSING_KEY",
    "additionalProperties": "E_UNKNOWN_KEY",
    "type": "E_TYPE",
    "enum": "E_ENUM",
    "const": "E_ENUM",
    "pattern": "E_PATTERN",
    "minItems": "E_EMPTY",
    "maxItems": "E_RANGE",
    "minimum": "E_RANGE",
    "maximum": "E_RANGE",
}
_UNCODED = {"type", "additionalProperties"}


class SchemaError(ValueError):
    """A document parsed but violates the schema or the model invariants."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        lines = "\n".join(f"  {v}" for v in violations)
        super().__init__(f"{len(violations)} violation(s):\n{lines}")


@dataclass(frozen=True)
class SchemaDescriptor:
    version: str
    rules: dict[str, Any]


@lru_cache(maxsize=1)
def load_schema() -> SchemaDescriptor:
    text = resources.files("edlforge").joinpath("data/edl.schema.yaml").read_text(encoding="utf-8")
    raw = yamlutil.load(text)
    return SchemaDescriptor(version=raw["version"], rules=raw["rules"])


@lru_cache(maxsize=1)
def _validator() -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(load_schema().rules)


def schema_violations(data: Any) -> tuple[list[Violation], bool]:
    """Structural violations and whether any of them prevents building a model."""
    out: list[Violation] = []
    blocking = False
    for error in _validator().iter_errors(data):
        base = list(error.absolute_path)
        node = error.schema if isinstance(error.schema, dict) else {}
        custom = node.get("x-code") if error.validator not in _UNCODED else None
        code = custom or _GENERIC_CODES.get(error.validator, "E_TYPE")
        if error.validator == "required":
            blocking |= custom is None
            for key in error.validator_value:
                if isinstance(error.instance, dict) and key not in error.instance:
                    out.append(Violation(code, join_path(base + [key]), f"missing required key {key!r}"))
        elif error.validator == "additionalProperties":
            known = set(node.get("properties", {}))
            for key in error.instance:
                if key not in known and not _EXTENSION_RE.match(str(key)):
                    out.append(Violation(code, join_path(base + [key]), f"unknown key {key!r}"))
        else:
            blocking |= error.validator == "type"
            out.append(Violation(code, join_path(base), error.message))
    return out, blocking


# -- dict -> model ---------------------------------------------------------------


def _ext(raw: dict) -> dict[str, Any]:
    return {k: copy.deepcopy(v) for k, v in raw.items() if isinstance(k, str) and k.startswith(EXTENSION_PREFIX)}


def _capacity(raw: dict | None) -> CapacityVector:
    raw = raw or {}
    return CapacityVector(**{name: raw.get(name, 0) for name in CapacityVector.names()})


def _weights(raw: dict | None, ids: list[str]) -> dict[str, float]:
    if raw is None:
        return uniform_weights(ids)
    return dict(raw)


def _topology(raw: dict) -> Topology:
    assets = tuple(
        Asset(
            id=a["id"],
            kind=a["kind"],
            capacity_demand=_capacity(a.get("capacity_demand")),
            capability_demand=frozenset(a.get("capability_demand", ())),
            locality=a.get("locality"),
            cwe_refs=tuple(a.get("cwe_refs", ())),
            standalone=bool(a.get("standalone", False)),
            extensions=_ext(a),
        )
        for a in raw.get("assets", ())
    )
    segments = tuple(
        NetworkSegment(id=s["id"], cidr=s["cidr"], attached=tuple(s.get("attached", ())), extensions=_ext(s))
        for s in raw.get("segments", ())
    )
    return Topology(assets=assets, segments=segments, extensions=_ext(raw))


def _event(raw: dict) -> Event:
    trig = raw["trigger"]
    return Event(
        id=raw["id"],
        name=raw["name"],
        trigger=Trigger(kind=trig["kind"], offset_s=trig.get("offset_s"), after=tuple(trig.get("after", ())),
                        extensions=_ext(trig)),
        injects=tuple(
            Inject(id=i["id"], target_asset=i["target_asset"], action=i["action"],
                   expected_actions=tuple(i.get("expected_actions", ())), extensions=_ext(i))
            for i in raw.get("injects", ())
        ),
        attack_technique=raw.get("attack_technique"),
        defend_refs=tuple(raw.get("defend_refs", ())),
        cwe_refs=tuple(raw.get("cwe_refs", ())),
        extensions=_ext(raw),
    )


def _storyline(raw: dict) -> Storyline:
    return Storyline(
        id=raw["id"],
        events=tuple(_event(e) for e in raw.get("events", ())),
        simulated_users=tuple(
            SimulatedUser(id=u["id"], role=u["role"],
                          timeline=tuple((step["t_s"], step["action"]) for step in u.get("timeline", ())),
                          extensions=_ext(u))
            for u in raw.get("simulated_users", ())
        ),
        goals=tuple(
            Goal(id=g["id"], description=g["description"], pattern=g["pattern"],
                 target_asset=g.get("target_asset"), extensions=_ext(g))
            for g in raw.get("goals", ())
        ),
        hints=tuple(Hint(id=h["id"], text=h["text"], extensions=_ext(h)) for h in raw.get("hints", ())),
        duration_s=raw.get("duration_s"),
        extensions=_ext(raw),
    )


def _metric(raw: dict) -> MetricDef:
    src = raw.get("source") or {}
    ref = raw.get("reference") or {}
    return MetricDef(
        id=raw["id"],
        kind=raw["kind"],
        source=Locator(asset=src.get("asset"), kinds=tuple(src.get("kinds", ("trainee_action",))),
                       quiz=src.get("quiz"), extensions=_ext(src)),
        reference=ReferenceSolution(tokens=tuple(ref.get("tokens", ())), pattern=ref.get("pattern"),
                                    text=ref.get("text"), extensions=_ext(ref)),
        params=dict(raw.get("params") or {}),
        extensions=_ext(raw),
    )


def _unit(raw: dict) -> Unit:
    metrics = tuple(_metric(m) for m in raw.get("metrics", ()))
    return Unit(
        id=raw["id"],
        kind=raw["kind"],
        name=raw.get("name", ""),
        topology=_topology(raw["topology"]) if raw.get("topology") is not None else None,
        storyline=_storyline(raw["storyline"]) if raw.get("storyline") is not None else None,
        metrics=metrics,
        metric_weights=_weights(raw.get("metric_weights"), [m.id for m in metrics]),
        extensions=_ext(raw),
    )


def from_dict(data: dict) -> ExerciseDescription:
    """Build a model from already-loaded data; weights omitted are filled uniformly.

    No validation happens here; pair with :func:`validate_model`.
    """
    svc = data["service"]
    units = tuple(_unit(u) for u in svc.get("units", ()))
    service = ServiceSpec(
        id=svc["id"],
        name=svc["name"],
        nice_roles=tuple(svc.get("nice_roles", ())),
        units=units,
        unit_weights=_weights(svc.get("unit_weights"), [u.id for u in units]),
        extensions=_ext(svc),
    )
    return ExerciseDescription(schema_version=data["schema_version"], service=service, extensions=_ext(data))


# -- model -> dict ---------------------------------------------------------------


def _canonical(value: Any) -> Any:
    if is_dataclass(value):
        return to_dict(value)
    if isinstance(value, dict):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (frozenset, set)):
        return sorted(value)
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def to_dict(obj: Any) -> dict[str, Any]:
    """Canonical plain-data form: declared field order, defaults omitted, extensions last."""
    out: dict[str, Any] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if f.name == "extensions":
            continue
        if isinstance(obj, CapacityVector):
            out[f.name] = value
            continue
        default = f.default_factory() if callable(f.default_factory) else f.default  # type: ignore[misc]
        if value == default and f.name not in ("unit_weights", "metric_weights"):
            continue
        if isinstance(obj, SimulatedUser) and f.name == "timeline":
            out[f.name] = [{"t_s": t, "action": a} for t, a in value]
        else:
            out[f.name] = _canonical(value)
    for key in sorted(getattr(obj, "extensions", {}) or {}):
        out[key] = _canonical(obj.extensions[key])
    return out


# -- text-level operations --------------------------------------------------------


def _load_and_check(text: str) -> tuple[ExerciseDescription | None, list[Violation]]:
    data = yamlutil.load(text)
    found, blocking = schema_violations(data)
    doc = None
    if not blocking:
        doc = from_dict(data)
        found += validate_model(doc)
    return doc, ordered(found)


def parse(text: str) -> ExerciseDescription:
    """Parse and fully validate a document.

    Raises :class:`EdlSyntaxError` for malformed text and :class:`SchemaError`
    when the document violates any structural or model rule.
    """
    doc, found = _load_and_check(text)
    if found or doc is None:
        raise SchemaError(found)
    return doc


def serialize(doc: ExerciseDescription) -> str:
    return yamlutil.dump(to_dict(doc))


def validate_schema(text: str) -> list[Violation]:
    """Syntax, schema and model violations of *text*, ordered by document path."""
    try:
        _doc, found = _load_and_check(text)
    except EdlSyntaxError as exc:
        return [Violation("E_SYNTAX", "", str(exc))]
    return found


def doc_hash(doc: ExerciseDescription) -> str:
    return "sha256:" + hashlib.sha256(serialize(doc).encode("utf-8")).hexdigest()
