from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from edlforge.model import (
    CapacityVector,
    CycleError,
    Event,
    Inject,
    Storyline,
    Trigger,
    topological_event_order,
    validate_model,
)
from edlforge.violations import Violation, join_path, ordered


def _event(eid, after=()):
    trigger = Trigger("conditional", after=tuple(after)) if after else Trigger("temporal", offset_s=0)
    return Event(eid, eid, trigger, (Inject(f"{eid}-i", "a", "x"),))


def test_capacity_arithmetic():
    a = CapacityVector(1, 2, 3, 4, 5)
    b = CapacityVector(1, 1, 1, 1, 1)
    assert (a - b) + b == a
    assert b.fits(a) and not a.fits(b)
    assert a.maximum(CapacityVector(9)) == CapacityVector(9, 2, 3, 4, 5)
    assert CapacityVector().is_zero()


def test_violation_rejects_unknown_code():
    with pytest.raises(ValueError):
        Violation("E_NOPE", "x", "y")


def test_paths_sort_indices_numerically():
    vs = [Violation("E_ENUM", join_path(["a", 10]), ""), Violation("E_ENUM", join_path(["a", 2]), ""),
          Violation("E_ENUM", join_path(["a", 2]), "")]
    assert [v.path for v in ordered(vs)] == ["a[2]", "a[10]"]


def test_topological_order_ties_follow_declaration():
    story = Storyline("s", (_event("c", ["a"]), _event("b"), _event("a")))
    assert topological_event_order(story) == ["b", "a", "c"]


def test_inject_prerequisite_resolves_to_event():
    story = Storyline("s", (_event("late", ["early-i"]), _event("early")))
    assert topological_event_order(story) == ["early", "late"]


def test_cycle_reported_with_members():
    story = Storyline("s", (_event("a", ["c"]), _event("b", ["a"]), _event("c", ["b"]), _event("d")))
    with pytest.raises(CycleError) as info:
        topological_event_order(story)
    assert set(info.value.members) == {"a", "b", "c"}


@st.composite
def dags(draw):
    n = draw(st.integers(1, 9))
    events = []
    for i in range(n):
        deps = draw(st.lists(st.integers(0, max(i - 1, 0)), max_size=3, unique=True)) if i else []
        events.append((f"e{i}", [f"e{j}" for j in deps]))
    order = draw(st.permutations(range(n)))
    return [events[k] for k in order]


@given(dags())
def test_topological_order_respects_prerequisites(events):
    story = Storyline("s", tuple(_event(e, deps) for e, deps in events))
    order = topological_event_order(story)
    assert sorted(order) == sorted(e for e, _ in events)
    pos = {e: i for i, e in enumerate(order)}
    for e, deps in events:
        assert all(pos[d] < pos[e] for d in deps)


@given(dags())
def test_back_edge_makes_cycle(events):
    deps = {e: d for e, d in events}
    chained = [e for e, d in events if d]
    if not chained:
        return
    child = chained[0]
    parent = deps[child][0]
    new = [(e, list(d) + ([child] if e == parent else [])) for e, d in events]
    story = Storyline("s", tuple(_event(e, d) for e, d in new))
    with pytest.raises(CycleError):
        topological_event_order(story)


def test_valid_samples_have_no_model_violations(sc01, sc02, sc03):
    for doc in (sc01, sc02, sc03):
        assert validate_model(doc) == []


def test_duplicate_id_across_units(sc01):
    units = list(sc01.service.units)
    units[1] = replace(units[1], id="sc01-range")
    doc = replace(sc01, service=replace(sc01.service, units=tuple(units), unit_weights={}))
    codes = [v.code for v in validate_model(doc)]
    assert "E_DUPLICATE_ID" in codes


def test_weight_sum_tolerance(sc01):
    unit = sc01.service.units[0]
    weights = dict(unit.metric_weights)
    weights["m-sc01-triage"] += 5e-10
    doc = replace(sc01, service=replace(sc01.service, units=(replace(unit, metric_weights=weights),
                                                             sc01.service.units[1])))
    assert validate_model(doc) == []
    weights["m-sc01-triage"] += 1e-6
    doc = replace(sc01, service=replace(sc01.service, units=(replace(unit, metric_weights=weights),
                                                             sc01.service.units[1])))
    assert [v.code for v in validate_model(doc)] == ["E_WEIGHT_SUM"]
