import random
import threading
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from edlforge import broker
from edlforge.broker import (
    Demand,
    DuplicateRange,
    FederationPlan,
    MatchRequest,
    NoFit,
    RankedPlan,
    Registry,
    RegistryStore,
    Reservation,
    StalePlanError,
    UnknownRequest,
    free_in,
    match,
    register,
    release,
    reserve,
    reserved_in,
)
from edlforge.model import CapabilityProfile, CapacityVector

from broker_oracle import brute_force, random_case
from conftest import CORPUS


def cv(*xs):
    return CapacityVector.of(list(xs) + [0] * (5 - len(xs)))


def reg_of(*profiles):
    reg = Registry()
    for rid, tags, total in profiles:
        reg = register(reg, CapabilityProfile(rid, frozenset(tags), total))
    return reg


def demands_of(req):
    return {d.asset_id: d.capacity for d in req.demands}


def test_register_idempotent_and_duplicate():
    reg = reg_of(("a", {"x"}, cv(4)))
    assert register(reg, CapabilityProfile("a", frozenset({"x"}), cv(4))) is reg
    with pytest.raises(DuplicateRange):
        register(reg, CapabilityProfile("a", frozenset(), cv(4)))


def test_reserved_is_peak_concurrency():
    reg = reg_of(("a", set(), cv(10)))
    reg = broker._refresh(reg, dict(reg.ranges), (
        Reservation("p", "a", cv(3), (0, 10)), Reservation("q", "a", cv(4), (10, 20)),
        Reservation("r", "a", cv(2), (5, 15))))
    assert reserved_in(reg, "a", (0, 20)) == cv(6)
    assert reserved_in(reg, "a", (0, 5)) == cv(3)
    assert reserved_in(reg, "a", (20, 30)) == cv(0)
    assert free_in(reg, "a", (12, 13)) == cv(4)
    assert reg.profile("a").reserved == cv(6)


def test_single_range_preferred_over_split():
    reg = reg_of(("a", set(), cv(4)), ("b", set(), cv(4)), ("c", set(), cv(8)))
    req = MatchRequest("r", (Demand("x", cv(3)), Demand("y", cv(3))), (0, 10))
    result = match(reg, req)
    assert isinstance(result, RankedPlan)
    assert dict(result.plan.assignment) == {"x": "c", "y": "c"}
    assert result.rank_key[0] == 1


def test_slack_breaks_count_ties():
    reg = reg_of(("a", set(), cv(4, 4)), ("b", set(), cv(8, 8)))
    req = MatchRequest("r", (Demand("x", cv(2, 2)),), (0, 10))
    plan = match(reg, req).plan
    assert dict(plan.assignment) == {"x": "b"}


def test_lexical_breaks_full_ties():
    reg = reg_of(("b", set(), cv(4)), ("a", set(), cv(4)))
    plan = match(reg, MatchRequest("r", (Demand("x", cv(1)),), (0, 10))).plan
    assert dict(plan.assignment) == {"x": "a"}


def test_capability_forces_federation():
    reg = reg_of(("space", {"gnss"}, cv(8)), ("sea", {"ot"}, cv(8)))
    req = MatchRequest("r", (Demand("g", cv(1), frozenset({"gnss"})), Demand("s", cv(1), frozenset({"ot"}))), (0, 5))
    result = match(reg, req)
    assert result.plan.ranges() == ("sea", "space")


def test_empty_registry_no_alternatives():
    result = match(Registry(), MatchRequest("r", (Demand("x", cv(1)),), (0, 10)))
    assert result == NoFit(())


def test_nofit_offers_locality_relaxation_and_later_windows():
    reg = reg_of(("a", set(), cv(4)), ("b", set(), cv(4)))
    reg = broker._refresh(reg, dict(reg.ranges), (
        Reservation("p", "a", cv(4), (0, 100)), Reservation("q", "a", cv(4), (100, 200)),
        Reservation("s", "b", cv(0), (0, 300))))
    req = MatchRequest("r", (Demand("x", cv(2), locality="a"),), (50, 60))
    result = match(reg, req)
    assert isinstance(result, NoFit)
    assert [a.plan.relaxation for a in result.alternatives] == ["locality", "window:200-210", "window:300-310"]
    assert dict(result.alternatives[0].plan.assignment) == {"x": "b"}
    assert len(result.alternatives) <= broker.K_ALTERNATIVES


def test_heuristic_above_exact_limit():
    reg = reg_of(*[(f"r{i}", set(), cv(2)) for i in range(broker.EXACT_RANGE_LIMIT + 1)])
    req = MatchRequest("r", tuple(Demand(f"x{j}", cv(1)) for j in range(4)), (0, 10))
    result = match(reg, req)
    assert result.plan.heuristic
    assert reserve(reg, result.plan, demands_of(req)) is not None


def test_reserve_rechecks_and_rejects_stale():
    reg = reg_of(("a", set(), cv(4)))
    req = MatchRequest("r", (Demand("x", cv(3)),), (0, 10))
    plan = match(reg, req).plan
    taken = reserve(reg, FederationPlan("other", {"x": "a"}, (5, 15)), demands_of(req))
    with pytest.raises(StalePlanError):
        reserve(taken, plan, demands_of(req))
    with pytest.raises(StalePlanError):
        reserve(reserve(reg, plan, demands_of(req)), plan, demands_of(req))


def test_release_unknown():
    with pytest.raises(UnknownRequest):
        release(reg_of(("a", set(), cv(1))), "nope")


@pytest.mark.parametrize("seed", range(40))
def test_match_equals_brute_force(seed):
    reg, req = random_case(random.Random(seed))
    result = match(reg, req)
    oracle = brute_force(reg, req)
    if oracle is None:
        assert isinstance(result, NoFit)
    else:
        assert dict(result.plan.assignment) == oracle[1]
        count, neg_slack, (used, per_demand) = result.rank_key
        assert (count, neg_slack, used, per_demand) == oracle[0]


@given(st.integers(0, 10**6))
def test_reserve_release_inverse(seed):
    reg, req = random_case(random.Random(seed))
    result = match(reg, req)
    if isinstance(result, NoFit):
        return
    after = reserve(reg, result.plan, demands_of(req))
    assert broker.safety_violations(after) == []
    assert release(after, req.request_id) == reg


def test_registry_persistence_round_trip(tmp_path):
    reg = broker.load_registry(CORPUS / "registry.yaml")
    req = MatchRequest("r", (Demand("x", cv(2, 2)),), (0, 10))
    reg = reserve(reg, match(reg, req).plan, demands_of(req))
    path = tmp_path / "reg.yaml"
    broker.save_registry(reg, path)
    assert broker.load_registry(path) == reg


def test_oversubscribed_registry_file_rejected(tmp_path):
    path = tmp_path / "reg.yaml"
    path.write_text("ranges:\n  - range_id: a\n    total: {cpu_cores: 1}\nreservations:\n"
                    "  - {request_id: p, range_id: a, consumed: {cpu_cores: 2}, window: [0, 5]}\n")
    with pytest.raises(broker.RegistryError):
        broker.load_registry(path)


def test_plan_dict_round_trip():
    reg = reg_of(("a", set(), cv(4)))
    ranked = match(reg, MatchRequest("r", (Demand("x", cv(1)),), (0, 10)))
    data = broker.plan_to_dict(ranked)
    assert broker.plan_from_dict(data) == ranked.plan
    assert Fraction(data["rank_key"]["neg_slack"]) == ranked.rank_key[1]


def test_store_serializes_concurrent_reservations(tmp_path):
    path = tmp_path / "reg.yaml"
    broker.save_registry(reg_of(("a", set(), cv(10))), path)
    store = RegistryStore(path)
    outcomes = []

    def attempt(i):
        plan = FederationPlan(f"req{i}", {"x": "a"}, (0, 10))
        try:
            store.reserve(plan, {"x": cv(3)})
            outcomes.append("ok")
        except StalePlanError:
            outcomes.append("stale")

    threads = [threading.Thread(target=attempt, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(outcomes) == ["ok"] * 3 + ["stale"] * 3
    final = store.snapshot()
    assert broker.safety_violations(final) == []
    assert final.profile("a").reserved == cv(9)
    log = broker.read_log(path.with_name("reservations.jsonl"))
    assert [r["op"] for r in log] == ["reserve"] * 3
    store.release(log[0]["request_id"])
    assert broker.read_log(path.with_name("reservations.jsonl"))[-1]["op"] == "release"
