import dataclasses
import ipaddress

import pytest
from hypothesis import given, strategies as st

from edlforge import broker, translator, yamlutil
from edlforge.broker import FederationPlan
from edlforge.translator import (
    CrossRangeLink,
    IncompletePlan,
    LocalityViolation,
    compile,
    consistency_check,
)

from conftest import CORPUS


def golden_plan(name):
    return broker.plan_from_dict(yamlutil.load((CORPUS / "golden" / name / "plan.yaml").read_text()))


def by_range(manifests):
    return {m.range_id: m for m in manifests}


def test_sc02_split_segment_links_both_ways(sc02):
    manifests, _ = compile(sc02, golden_plan("sc02"))
    ms = by_range(manifests)
    assert sorted(ms) == ["cr-maritime", "cr-space"]
    assert ms["cr-space"].cross_range_links == (CrossRangeLink("sat-link", "cr-maritime", "sat-link"),)
    assert ms["cr-maritime"].cross_range_links == (CrossRangeLink("sat-link", "cr-space", "sat-link"),)
    assert consistency_check(manifests, sc02) == []


def test_addresses_lowest_hosts_in_attachment_order(sc02):
    manifests, _ = compile(sc02, golden_plan("sc02"))
    members = {}
    for m in manifests:
        for seg in m.segments:
            members.update({(seg.id, a): ip for a, ip in seg.members})
    assert members[("sat-link", "gnss-ground-station")] == "172.16.5.1"
    assert members[("sat-link", "gnss-uplink")] == "172.16.5.2"
    assert members[("sat-link", "ship-nav-receiver")] == "172.16.5.3"
    assert members[("port-lan", "port-ops-server")] == "192.168.40.1"


def test_locality_violation(sc02):
    plan = golden_plan("sc02")
    bad = dict(plan.assignment, **{"gnss-ground-station": "cr-maritime"})
    with pytest.raises(LocalityViolation):
        compile(sc02, FederationPlan(plan.request_id, bad, plan.window))


def test_incomplete_plan(sc02):
    plan = golden_plan("sc02")
    partial = {k: v for k, v in plan.assignment.items() if k != "port-ops-server"}
    with pytest.raises(IncompletePlan):
        compile(sc02, FederationPlan(plan.request_id, partial, plan.window))


def test_scoring_config_resolves_ranges(sc02):
    _, cfg = compile(sc02, golden_plan("sc02"))
    for unit in cfg.units:
        for m in unit.metrics:
            if m.asset_id is not None:
                assert m.range_id == dict(golden_plan("sc02").assignment)[m.asset_id]
    assert translator.scoring_from_dict(translator.scoring_to_dict(cfg)) == cfg


def test_manifest_dict_round_trip(sc02):
    for m in compile(sc02, golden_plan("sc02"))[0]:
        assert translator.manifest_from_dict(translator.manifest_to_dict(m)) == m


@pytest.mark.parametrize("name", ["sc01", "sc02", "sc03"])
def test_outputs_match_golden_bytes(name, tmp_path, request):
    doc = request.getfixturevalue(name)
    manifests, cfg = compile(doc, golden_plan(name))
    for path in translator.write_outputs(manifests, cfg, tmp_path):
        assert path.read_bytes() == (CORPUS / "golden" / name / path.name).read_bytes()


def codes(violations):
    return [v.code for v in violations]


def test_consistency_detects_duplicate_and_missing(sc02):
    manifests, _ = compile(sc02, golden_plan("sc02"))
    ms = by_range(manifests)
    space, sea = ms["cr-space"], ms["cr-maritime"]
    dup = dataclasses.replace(sea, assets=sea.assets + space.assets)
    assert "E_ASSET_DUPLICATED" in codes(consistency_check([space, dup], sc02))
    dropped = dataclasses.replace(sea, assets=sea.assets[1:])
    assert "E_ASSET_MISSING" in codes(consistency_check([space, dropped], sc02))
    ghost = dataclasses.replace(sea.assets[0], id="ghost")
    assert "E_ASSET_UNKNOWN" in codes(consistency_check([space, dataclasses.replace(sea, assets=sea.assets + (ghost,))], sc02))


def test_consistency_detects_address_conflict(sc02):
    manifests, _ = compile(sc02, golden_plan("sc02"))
    sea = by_range(manifests)["cr-maritime"]
    seg = sea.segments[0]
    clash = dataclasses.replace(seg, members=tuple((a, seg.members[0][1]) for a, _ in seg.members))
    broken = dataclasses.replace(sea, segments=(clash,) + sea.segments[1:])
    found = consistency_check([by_range(manifests)["cr-space"], broken], sc02)
    assert "E_ADDRESS_CONFLICT" in codes(found)
    outside = dataclasses.replace(seg, members=(("x", "8.8.8.8"),) + seg.members[1:])
    found = consistency_check([by_range(manifests)["cr-space"],
                               dataclasses.replace(sea, segments=(outside,) + sea.segments[1:])], sc02)
    assert "E_ADDRESS_CONFLICT" in codes(found)


def test_consistency_detects_asymmetric_link(sc02):
    manifests, _ = compile(sc02, golden_plan("sc02"))
    ms = by_range(manifests)
    one_way = dataclasses.replace(ms["cr-space"], cross_range_links=())
    assert codes(consistency_check([one_way, ms["cr-maritime"]], sc02)).count("E_LINK_ASYMMETRIC") == 2


RANGES = ("cr-maritime", "cr-space", "cr-x")


@given(st.data())
def test_any_locality_respecting_plan_is_consistent(sc02, data):
    assignment = {}
    for asset in sc02.service.assets():
        assignment[asset.id] = asset.locality or data.draw(st.sampled_from(RANGES))
    manifests, cfg = compile(sc02, FederationPlan("r", assignment, (0, 10)))
    assert consistency_check(manifests, sc02) == []
    deployed = sorted(a.id for m in manifests for a in m.assets)
    assert deployed == sorted(a.id for a in sc02.service.assets())
    for m in manifests:
        for seg in m.segments:
            for _, ip in seg.members:
                assert ipaddress.IPv4Address(ip) in ipaddress.IPv4Network(seg.cidr)
