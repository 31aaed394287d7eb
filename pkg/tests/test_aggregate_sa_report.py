import csv
import io
import random

import pytest
from hypothesis import given, strategies as st

from edlforge import translator, yamlutil
from edlforge.engine import InvalidLog, RunLog
from edlforge.evaluation.aggregate import DuplicateResult, UnknownMetric, aggregate
from edlforge.evaluation.metrics import MetricResult
from edlforge.evaluation.report import (
    HashMismatch,
    dump_csv,
    evaluate,
    parse_answers,
    recommendations,
    report,
)
from edlforge.evaluation.sa import SAReport, sa_raw, sa_report
from edlforge.model import ReferenceSolution
from edlforge.translator import MetricScoring, ScoringConfig, UnitScoring

from conftest import CORPUS
from sa_cases import CASES, rec


def m(mid, kind, w):
    return MetricScoring(mid, kind, w, None, None, (), None, ReferenceSolution(), {})


def cfg_of(*units):
    return ScoringConfig("svc", "hash", tuple(UnitScoring(uid, "cr_scenario", uw, tuple(ms)) for uid, uw, ms in units))


def res(mid, score, trainee="t1", missing=False):
    return MetricResult(mid, trainee, None, score, missing=missing)


def test_single_metric_passes_through():
    tree = aggregate([res("a", 0.37)], cfg_of(("u", 1.0, [m("a", "time", 1.0)])))
    t = tree.trainee("t1")
    assert t.units[0].score == t.service == 0.37


def test_weighted_example():
    cfg = cfg_of(("u", 1.0, [m("a", "time", 0.7), m("b", "task", 0.3)]))
    assert aggregate([res("a", 1.0), res("b", 0.0)], cfg).trainee("t1").units[0].score == pytest.approx(0.7)


def test_missing_is_zero_and_flagged_or_excluded():
    cfg = cfg_of(("u", 1.0, [m("a", "time", 0.5), m("b", "task", 0.5)]))
    tree = aggregate([res("a", 0.8)], cfg)
    unit = tree.trainee("t1").units[0]
    assert unit.score == pytest.approx(0.4)
    assert [s.missing for s in unit.metrics] == [False, True]
    assert aggregate([res("a", 0.8)], cfg, missing="exclude").trainee("t1").service == pytest.approx(0.8)


def test_unknown_and_duplicate():
    cfg = cfg_of(("u", 1.0, [m("a", "time", 1.0)]))
    with pytest.raises(UnknownMetric):
        aggregate([res("zz", 1.0)], cfg)
    with pytest.raises(DuplicateResult):
        aggregate([res("a", 1.0), res("a", 0.5)], cfg)


def test_team_means():
    cfg = cfg_of(("u", 1.0, [m("a", "time", 1.0)]))
    tree = aggregate([res("a", 1.0, "t1"), res("a", 0.5, "t2")], cfg, {"t1": "x", "t2": "x"})
    assert tree.team("x").service == 0.75 and tree.team("x").members == ("t1", "t2")


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.lists(st.floats(0.01, 1), min_size=6, max_size=6))
def test_aggregation_is_convex(scores, raw_weights):
    ws = raw_weights[:len(scores)]
    total = sum(ws)
    ms = [m(f"m{i}", "time", w / total) for i, w in enumerate(ws)]
    tree = aggregate([res(f"m{i}", s) for i, s in enumerate(scores)], cfg_of(("u", 1.0, ms)))
    value = tree.trainee("t1").service
    assert min(scores) - 1e-9 <= value <= max(scores) + 1e-9


@pytest.mark.parametrize("name", list(CASES))
def test_sa_examples(name):
    log, cfg, expected = CASES[name]()
    series = sa_report(log, cfg, teams=["x"]).team("x").series
    assert series == ((10, pytest.approx(expected, abs=1e-12)),)


def test_sa_rejects_invalid_log():
    log = RunLog({}, (rec(10, 1, "event_fired", {"event": "ev"}), rec(5, 0, "event_fired", {"event": "ev"})))
    with pytest.raises(InvalidLog):
        sa_report(log, CASES["flat-zero"]()[1])


def test_sa_series_non_increasing_in_hints():
    log, cfg, _ = CASES["0.2 hand case"]()
    more = RunLog(log.header, log.records[:2] + (
        rec(7, 2, "hint_issued", {"hint": "h2", "team": "x"}, "trainee", "t"),
        rec(10, 3, "event_fired", {"event": "ev"})))
    assert sa_report(more, cfg, teams=["x"]).team("x").series[0][1] <= sa_report(log, cfg, teams=["x"]).team("x").series[0][1]


def test_sa_ordering_invariant_under_weight_scaling():
    rng = random.Random(3)
    for _ in range(50):
        a, b = [tuple(rng.random() for _ in range(3)) for _ in range(2)]
        c = rng.uniform(0.01, 100)
        w = (0.6, 0.2, 0.4)
        cw = tuple(c * x for x in w)
        before = sa_raw(*a, w) - sa_raw(*b, w)
        after = sa_raw(*a, cw) - sa_raw(*b, cw)
        if abs(before) > 1e-9:
            assert (before > 0) == (after > 0)


@pytest.fixture(scope="module")
def sc01_cfg():
    return translator.scoring_from_dict(yamlutil.load((CORPUS / "golden/sc01/act-sc-01.fpe.yaml").read_text()))


def all_results(cfg, score_for):
    return [res(mm.metric_id, score_for(mm.kind)) for u in cfg.units for mm in u.metrics]


def test_perfect_tree_has_no_recommendations(sc01_cfg):
    tree = aggregate(all_results(sc01_cfg, lambda k: 1.0), sc01_cfg)
    assert recommendations(tree) == []
    assert report(tree)["recommendations"] == []


def test_lowest_sequence_recommends_command_line(sc01_cfg):
    tree = aggregate(all_results(sc01_cfg, lambda k: 0.2 if k == "sequence" else 0.9), sc01_cfg)
    (rec_,) = recommendations(tree)
    assert (rec_["metric_kind"], rec_["unit_kind"], rec_["tag"]) == ("sequence", "cr_scenario", "command-line")


def test_report_hash_mismatch(sc01_cfg):
    tree = aggregate(all_results(sc01_cfg, lambda k: 1.0), sc01_cfg)
    with pytest.raises(HashMismatch):
        report(tree, [SAReport("sc01-range", "other", ())])
    with pytest.raises(HashMismatch):
        evaluate(sc01_cfg, [RunLog({"doc_hash": "other", "unit_id": "sc01-range"}, ())])


def test_csv_table(sc01_cfg):
    tree = aggregate(all_results(sc01_cfg, lambda k: 0.5), sc01_cfg)
    rows = list(csv.reader(io.StringIO(dump_csv(tree))))
    assert rows[0][:4] == ["trainee_id", "team_id", "unit_id", "metric_id"]
    assert len(rows) == 1 + sum(len(u.metrics) for u in sc01_cfg.units)


def test_parse_answers_shapes():
    item = {"trainee_id": "t", "metric_id": "m", "text": "x"}
    assert parse_answers([item]) == parse_answers({"answers": [item]}) == {("t", "m"): "x"}


def test_golden_report_reproduced(sc01_cfg):
    from edlforge.engine import read_run
    from edlforge.evaluation.report import dump_report

    log = read_run(CORPUS / "golden/sc01/sc01-range.run.jsonl")
    answers = parse_answers(yamlutil.load((CORPUS / "inputs/sc01.answers.yaml").read_text()))
    tree, sa, _ = evaluate(sc01_cfg, [log], answers)
    assert dump_report(report(tree, sa)) == (CORPUS / "golden/sc01/report.yaml").read_text()
