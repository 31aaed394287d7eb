"""Violation records and the closed set of violation codes."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

# Closed enumeration. Codes are part of the CI contract: never rename, only add.
CODES: dict[str, str] = {
    # syntax / structure
    "E_SYNTAX": "document is not well-formed in the supported YAML subset",
    "E_MISSING_KEY": "a required key is absent",
    "E_UNKNOWN_KEY": "a key is not allowed here (use an `x-` prefix for extensions)",
    "E_TYPE": "value has the wrong type",
    "E_ENUM": "value is not one of the allowed literals",
    "E_PATTERN": "identifier does not match the identifier pattern",
    "E_EMPTY": "list must not be empty",
    "E_RANGE": "number outside its allowed range",
    "E_SCHEMA_VERSION": "schema_version is not MAJOR.MINOR.PATCH",
    # cross-references to external taxonomies (syntactic only)
    "E_CWE_PATTERN": "CWE reference does not match CWE-<digits>",
    "E_ATTACK_PATTERN": "ATT&CK technique does not match T<digits>(.<digits>)",
    "E_D3FEND_PATTERN": "D3FEND reference does not match D3-<LETTERS>",
    "E_NICE_PATTERN": "NICE work-role code is malformed",
    # model invariants
    "E_DUPLICATE_ID": "identifier declared more than once",
    "E_REF_UNRESOLVED": "reference names an undeclared entity",
    "E_TRIGGER_CYCLE": "trigger dependencies form a cycle",
    "E_TRIGGER_SHAPE": "trigger fields inconsistent with its kind",
    "E_WEIGHT_RANGE": "weight outside [0, 1]",
    "E_WEIGHT_SUM": "weights do not sum to 1",
    "E_UNIT_TOPOLOGY_REQUIRED": "cr_scenario unit lacks a topology",
    "E_UNIT_STORYLINE_REQUIRED": "cr_scenario unit lacks a storyline",
    "E_UNIT_TOPOLOGY_FORBIDDEN": "content_training/tabletop unit declares a topology",
    "E_CAPACITY_NEGATIVE": "capacity component is negative",
    "E_CIDR_INVALID": "segment CIDR does not parse as IPv4",
    "E_SEGMENT_EMPTY": "segment has no attached assets",
    "E_DUPLICATE_ATTACHMENT": "asset attached twice to the same segment",
    "E_ASSET_UNATTACHED": "asset on no segment and not flagged standalone",
    "E_TIMELINE_ORDER": "timeline timestamps decrease",
    "E_TIMESTAMP_NEGATIVE": "timestamp or offset is negative",
    "E_METRIC_PARAMS": "metric parameters or reference inconsistent with its kind",
    "E_LOCATOR": "metric source locator inconsistent with its kind",
    # translator consistency
    "E_ASSET_DUPLICATED": "asset appears in more than one manifest",
    "E_ASSET_MISSING": "topology asset appears in no manifest",
    "E_ASSET_UNKNOWN": "manifest lists an asset absent from the topology",
    "E_LINK_ASYMMETRIC": "cross-range link has no matching peer link",
    "E_ADDRESS_CONFLICT": "address outside its segment or assigned twice",
}


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def __post_init__(self) -> None:
        if self.code not in CODES:
            raise ValueError(f"unknown violation code {self.code!r}")

    def as_dict(self) -> dict[str, str]:
        return {"code": self.code, "path": self.path, "message": self.message}

    def __str__(self) -> str:
        return f"{self.code} at {self.path or '<root>'}: {self.message}"


_PATH_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


def join_path(parts: Iterable[str | int]) -> str:
    """Render ``["service", "units", 0, "id"]`` as ``service.units[0].id``."""
    out = ""
    for part in parts:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out


def path_key(path: str) -> tuple:
    """Sort key treating list indices numerically (``[2]`` before ``[10]``)."""
    key = []
    for name, index in _PATH_TOKEN.findall(path):
        key.append((1, int(index), "") if index else (0, 0, name))
    return tuple(key)


def ordered(violations: Iterable[Violation]) -> list[Violation]:
    """Deduplicate on (code, path) and order by document path, then code."""
    seen: dict[tuple[str, str], Violation] = {}
    for v in violations:
        seen.setdefault((v.code, v.path), v)
    return sorted(seen.values(), key=lambda v: (path_key(v.path), v.code))


def codes(violations: Sequence[Violation]) -> list[str]:
    return [v.code for v in violations]
