import pytest
from hypothesis import given, strategies as st

from edlforge.engine import EventLogRecord, RunLog
from edlforge.evaluation.metrics import (
    BadParams,
    BadPredicate,
    EmptyReference,
    MetricResult,
    ScoringContext,
    levenshtein,
    score_metric,
    score_quantity,
    score_sequence,
    score_task,
    score_time,
    select_records,
    sequence_score,
)
from edlforge.model import ReferenceSolution
from edlforge.translator import MetricScoring

from seq_oracle import edit_distance, oracle_score


def act(t, command, seq=None, actor="t-1", target=None):
    payload = {"command": command, "team": "team-a"}
    if target:
        payload["target"] = target
    return EventLogRecord(t, t if seq is None else seq, "trainee", actor, "trainee_action", payload)


def test_time_examples():
    p = {"target_s": 60, "limit_s": 180}
    assert score_time([act(60, "done")], p).score == 1.0
    assert score_time([act(120, "done")], p).score == 0.5
    missing = score_time([act(10, "other")], p, pattern="done")
    assert missing.score == 0.0 and missing.evidence == ()
    assert score_time([act(200, "done")], p).score == 0.0


def test_time_start_offset():
    r = score_time([act(50, "x"), act(170, "isolate h")], {"target_s": 60, "limit_s": 180}, "isolate *", start_t=50)
    assert r.raw == {"duration_s": 120} and r.score == 0.5


@pytest.mark.parametrize("params", [{"target_s": 5, "limit_s": 5}, {"target_s": 5}, {"target_s": True, "limit_s": 9}])
def test_time_bad_params(params):
    with pytest.raises(BadParams):
        score_time([], params)


@pytest.mark.parametrize("n,expected", [(0, 0.0), (3, 0.75), (5, 1.0)])
def test_quantity_examples(n, expected):
    recs = [act(t, f"restore {t}") for t in range(n)]
    assert score_quantity(recs, {"expected_count": 4}, ["restore *"]).score == expected


@pytest.mark.parametrize("bad", [0, -1, 2.5, True, None])
def test_quantity_bad_params(bad):
    with pytest.raises(BadParams):
        score_quantity([], {"expected_count": bad})


def test_sequence_examples():
    ref = ["a", "b", "c", "d"]
    assert sequence_score(ref, ref) == 1.0
    assert sequence_score([], ref) == 0.0
    assert sequence_score(["a", "b", "d"], ref) == 0.75
    assert sequence_score(["x", "y"], ["a", "b"]) == 0.0
    with pytest.raises(EmptyReference):
        score_sequence(["a"], [])


def test_sequence_normalizes_command_word_only():
    assert sequence_score(["GET-PROCESS  -Name x"], ["get-process -Name x"]) == 1.0
    assert sequence_score(["get-process -name x"], ["get-process -Name x"]) == 0.0


tokens = st.lists(st.sampled_from("abcd"), max_size=8)


@given(tokens, tokens)
def test_levenshtein_matches_oracle(a, b):
    assert levenshtein(a, b) == edit_distance(a, b)
    if b:
        assert sequence_score(a, b) == oracle_score(a, b)


def test_task_examples():
    p = {"predicate": "firewall block*"}
    assert score_task([act(5, "firewall block 445")], p).score == 1.0
    assert score_task([act(5, "ls")], p).score == 0.0
    assert score_task([act(5, "ls"), act(50, "firewall block 445")], p, end_s=40).score == 0.0
    assert score_task([act(50, "firewall block 445")], {**p, "end_s": 60}, end_s=40).score == 1.0
    for bad in (None, "  "):
        with pytest.raises(BadPredicate):
            score_task([], {}, predicate=bad)


def test_result_score_bounds():
    with pytest.raises(ValueError):
        MetricResult("m", "t", None, 1.5)


def metric(kind, **kw):
    defaults = dict(metric_id="m", kind=kind, weight=1.0, range_id="r", asset_id="h", kinds=("trainee_action",),
                    quiz=None, reference=ReferenceSolution(), params={})
    defaults.update(kw)
    return MetricScoring(**defaults)


def test_select_records_filters_trainee_target_and_hints():
    recs = [act(1, "a", target="h"), act(2, "b", target="other"), act(3, "c", actor="t-2"),
            act(4, "hint"), act(5, "d")]
    assert [r.t_s for r in select_records(recs, metric("sequence"), "t-1")] == [1, 5]


def test_score_metric_dispatch_and_missing():
    log = RunLog({}, (
        EventLogRecord(10, 0, "system", "engine", "event_fired", {"event": "ev"}),
        act(70, "isolate h", seq=1, target="h"),
    ))
    ctx = ScoringContext(log, duration_s=100)
    t = metric("time", reference=ReferenceSolution(pattern="isolate *"),
               params={"target_s": 60, "limit_s": 180, "start_event": "ev"})
    assert score_metric(t, "t-1", ctx).score == 1.0
    late = metric("time", reference=ReferenceSolution(pattern="isolate *"),
                  params={"target_s": 60, "limit_s": 180, "start_event": "never"})
    assert score_metric(late, "t-1", ctx).score == 0.0
    assert score_metric(t, "t-1", ScoringContext(None)).missing
    essay = metric("essay", asset_id=None, kinds=(), quiz="q", reference=ReferenceSolution(text="x"))
    assert score_metric(essay, "t-1", ctx).missing
    ctx.answers[("t-1", "m")] = "x"
    assert score_metric(essay, "t-1", ctx).score > 0.8
