"""Regenerate corpus/faults/: single-fault mutations of the sc01 sample.

Each mutation must trip exactly one rule; the expected code and path are
written to corpus/faults/expected.yaml.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path

from edlforge import yamlutil
from edlforge.edl_io import validate_schema

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def _unit(d):
    return d["service"]["units"][0]


def _story(d):
    return _unit(d)["storyline"]


def _assets(d):
    return _unit(d)["topology"]["assets"]


def _event(d, eid):
    return next(e for e in _story(d)["events"] if e["id"] == eid)


def missing_name(d):
    del d["service"]["name"]


def unknown_key(d):
    _unit(d)["colour"] = "red"


def bad_type(d):
    _assets(d)[0]["standalone"] = "yes"


def bad_enum(d):
    _assets(d)[1]["kind"] = "server"


def bad_schema_version(d):
    d["schema_version"] = "1.0"


def bad_cwe(d):
    _assets(d)[0]["cwe_refs"] = ["CWE829"]


def bad_attack(d):
    _event(d, "ev-usb")["attack_technique"] = "TA0001"


def bad_d3fend(d):
    _event(d, "ev-usb")["defend_refs"] = ["D3-psa"]


def bad_nice(d):
    d["service"]["nice_roles"][0] = "PR-CDA-1"


def duplicate_id(d):
    _story(d)["hints"][1]["id"] = "g-block"


def unresolved_ref(d):
    _event(d, "ev-crp")["injects"][0]["target_asset"] = "navy-crp-2"


def trigger_cycle(d):
    _event(d, "ev-usb")["trigger"] = {"kind": "conditional", "after": ["ev-lateral"]}


def trigger_shape(d):
    _event(d, "ev-crp")["trigger"]["after"] = ["ev-usb"]


def weight_sum(d):
    _unit(d)["metric_weights"]["m-sc01-isolation-time"] = 0.5


def capacity_negative(d):
    _assets(d)[2]["capacity_demand"]["cpu_cores"] = -4


def cidr_invalid(d):
    _unit(d)["topology"]["segments"][1]["cidr"] = "10.20.0.0/33"


def segment_empty(d):
    _unit(d)["topology"]["segments"].append({"id": "dmz", "cidr": "10.99.0.0/24", "attached": []})


def duplicate_attachment(d):
    _unit(d)["topology"]["segments"][0]["attached"].append("hq-ws01")


def asset_unattached(d):
    _assets(d).append({"id": "spare-ws", "kind": "compute"})


def timeline_order(d):
    _story(d)["simulated_users"][0]["timeline"][1]["t_s"] = 20


def timestamp_negative(d):
    _story(d)["simulated_users"][2]["timeline"][0]["t_s"] = -5


def metric_params(d):
    _unit(d)["metrics"][0]["params"]["target_s"] = 700


def topology_forbidden(d):
    d["service"]["units"][1]["topology"] = {"assets": []}


def locator(d):
    d["service"]["units"][1]["metrics"][0]["source"] = {"asset": "hq-ws01"}


FAULTS = [
    ("missing-key", missing_name, "E_MISSING_KEY"),
    ("unknown-key", unknown_key, "E_UNKNOWN_KEY"),
    ("type", bad_type, "E_TYPE"),
    ("enum", bad_enum, "E_ENUM"),
    ("schema-version", bad_schema_version, "E_SCHEMA_VERSION"),
    ("cwe-pattern", bad_cwe, "E_CWE_PATTERN"),
    ("attack-pattern", bad_attack, "E_ATTACK_PATTERN"),
    ("d3fend-pattern", bad_d3fend, "E_D3FEND_PATTERN"),
    ("nice-pattern", bad_nice, "E_NICE_PATTERN"),
    ("duplicate-id", duplicate_id, "E_DUPLICATE_ID"),
    ("unresolved-ref", unresolved_ref, "E_REF_UNRESOLVED"),
    ("trigger-cycle", trigger_cycle, "E_TRIGGER_CYCLE"),
    ("trigger-shape", trigger_shape, "E_TRIGGER_SHAPE"),
    ("weight-sum", weight_sum, "E_WEIGHT_SUM"),
    ("capacity-negative", capacity_negative, "E_CAPACITY_NEGATIVE"),
    ("cidr-invalid", cidr_invalid, "E_CIDR_INVALID"),
    ("segment-empty", segment_empty, "E_SEGMENT_EMPTY"),
    ("duplicate-attachment", duplicate_attachment, "E_DUPLICATE_ATTACHMENT"),
    ("asset-unattached", asset_unattached, "E_ASSET_UNATTACHED"),
    ("timeline-order", timeline_order, "E_TIMELINE_ORDER"),
    ("timestamp-negative", timestamp_negative, "E_TIMESTAMP_NEGATIVE"),
    ("metric-params", metric_params, "E_METRIC_PARAMS"),
    ("topology-forbidden", topology_forbidden, "E_UNIT_TOPOLOGY_FORBIDDEN"),
    ("locator", locator, "E_LOCATOR"),
]
SYNTAX_FAULT = ("syntax", "E_SYNTAX")


def main() -> int:
    base = yamlutil.load((CORPUS / "valid" / "sc01.edl.yaml").read_text(encoding="utf-8"))
    out = CORPUS / "faults"
    out.mkdir(exist_ok=True)
    for old in out.glob("*.edl.yaml"):
        old.unlink()
    expected = {}
    bad = 0
    texts = []
    for k, (name, mutate, code) in enumerate(FAULTS, 1):
        doc = copy.deepcopy(base)
        mutate(doc)
        texts.append((f"{k:02d}-{name}.edl.yaml", yamlutil.dump(doc), code))
    broken = yamlutil.dump(base).replace("  units:\n", "  units: [\n", 1)
    texts.append((f"{len(FAULTS) + 1:02d}-{SYNTAX_FAULT[0]}.edl.yaml", broken, SYNTAX_FAULT[1]))
    for fname, text, code in texts:
        found = validate_schema(text)
        status = "ok" if [v.code for v in found] == [code] else "BAD"
        if status == "BAD":
            bad += 1
        print(f"{status} {fname}: {[str(v) for v in found]}")
        (out / fname).write_text(text, encoding="utf-8", newline="\n")
        expected[fname] = {"code": code, "path": found[0].path if len(found) == 1 else None}
    (out / "expected.yaml").write_text(yamlutil.dump(expected), encoding="utf-8", newline="\n")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
