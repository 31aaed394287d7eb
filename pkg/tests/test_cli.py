import json

import pytest

from edlforge import yamlutil
from edlforge.cli import main

from conftest import CORPUS, FAULTS, VALID, load_script

SC01 = str(CORPUS / "valid" / "sc01.edl.yaml")
REGISTRY = str(CORPUS / "registry.yaml")


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    work = tmp_path_factory.mktemp("work")
    pipeline = load_script("pipeline")
    spec = next(s for s in pipeline.scenarios() if s["name"] == "sc01")
    codes = pipeline.run_scenario(spec, work)
    assert all(code == 0 for _, code in codes), codes
    return work / "sc01"


def test_validate_valid_corpus_is_silent(capsys):
    assert main(["validate", "--jobs", "4", *map(str, VALID)]) == 0
    out = capsys.readouterr()
    assert out.out == "" and out.err == ""


def test_validate_fault_one_line(capsys):
    assert main(["validate", str(FAULTS[0])]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and "E_MISSING_KEY" in lines[0]


def test_validate_json(capsys):
    assert main(["validate", "--format", "json", str(FAULTS[1])]) == 1
    (item,) = json.loads(capsys.readouterr().out)
    assert item["code"] == "E_UNKNOWN_KEY" and item["file"] == str(FAULTS[1])


def test_validate_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.edl.yaml")]) == 3


def test_usage_error_is_not_no_fit():
    assert main(["plan", SC01]) == 3


def test_plan_feasible(tmp_path):
    out = tmp_path / "plan.yaml"
    assert main(["plan", SC01, "--registry", REGISTRY, "--window", "0:3600", "--out", str(out)]) == 0
    assert yamlutil.load(out.read_text())["rank_key"]["range_count"] == 1


def test_plan_empty_registry(tmp_path, capsys):
    reg = tmp_path / "reg.yaml"
    reg.write_text("ranges: []\n")
    assert main(["plan", SC01, "--registry", str(reg), "--window", "0:3600", "--out", str(tmp_path / "p")]) == 2
    assert capsys.readouterr().out == ""


def test_plan_infeasible_lists_alternatives(tmp_path, capsys):
    reg = tmp_path / "reg.yaml"
    reg.write_text(
        "ranges:\n"
        "  - {range_id: big, tags: [c2-sim, linux, windows], total: {cpu_cores: 64, ram_gb: 256, storage_gb: 4000,"
        " vm_slots: 40, bandwidth_mbps: 10000}}\n"
        "reservations:\n"
        "  - {request_id: busy, range_id: big, consumed: {cpu_cores: 64}, window: [0, 5000]}\n")
    assert main(["plan", SC01, "--registry", str(reg), "--window", "0:3600", "--out", str(tmp_path / "p")]) == 2
    alts = yamlutil.load(capsys.readouterr().out)["alternatives"]
    assert 1 <= len(alts) <= 3
    assert alts[0]["relaxation"] == "window:5000-8600"


def test_plan_bad_registry(tmp_path):
    reg = tmp_path / "reg.yaml"
    reg.write_text("ranges: [\n")
    assert main(["plan", SC01, "--registry", str(reg), "--window", "0:10"]) == 3


def test_plan_reserve_commits(tmp_path):
    reg = tmp_path / "reg.yaml"
    reg.write_text((CORPUS / "registry.yaml").read_text())
    args = ["plan", SC01, "--registry", str(reg), "--window", "0:3600", "--out", str(tmp_path / "p"), "--reserve"]
    assert main(args) == 0
    assert "reservations" in yamlutil.load(reg.read_text())
    assert (tmp_path / "reservations.jsonl").exists()


def test_compile_locality_conflict(tmp_path):
    doc = str(CORPUS / "valid" / "sc02.edl.yaml")
    plan = yamlutil.load((CORPUS / "golden/sc02/plan.yaml").read_text())
    plan["assignment"]["gnss-ground-station"] = "cr-maritime"
    path = tmp_path / "plan.yaml"
    path.write_text(yamlutil.dump(plan))
    assert main(["compile", doc, "--plan", str(path), "--out", str(tmp_path)]) == 1


def test_compile_outputs_golden(pipeline_out):
    for name in ("cr-defence.manifest.yaml", "act-sc-01.fpe.yaml", "plan.yaml"):
        assert (pipeline_out / name).read_bytes() == (CORPUS / "golden/sc01" / name).read_bytes()


def test_run_rerun_identical(tmp_path, capsys):
    args = ["run", SC01, "--unit", "sc01-range", "--script", str(CORPUS / "inputs/sc01.scripts.yaml"), "--out", "-"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_run_unknown_unit():
    assert main(["run", SC01, "--unit", "nope", "--out", "-"]) == 3


def test_run_override_unknown_user(tmp_path):
    ov = tmp_path / "ov.yaml"
    ov.write_text("- {user_id: ghost, effective_t_s: 10}\n")
    assert main(["run", SC01, "--unit", "sc01-range", "--override", str(ov), "--out", "-"]) == 1


def test_score_empty_answers_zeroes_essays(pipeline_out, tmp_path):
    empty = tmp_path / "answers.yaml"
    empty.write_text("")
    out = tmp_path / "report.yaml"
    args = ["score", str(pipeline_out / "sc01-range.run.jsonl"), "--fpe", str(pipeline_out / "act-sc-01.fpe.yaml"),
            "--answers", str(empty), "--out", str(out)]
    assert main(args) == 0
    for trainee in yamlutil.load(out.read_text())["trainees"].values():
        essay = trainee["units"]["sc01-debrief"]["metrics"]["m-sc01-debrief"]
        assert essay["score"] == 0.0 and essay["missing"] is True


def test_score_corrupted_log(pipeline_out, tmp_path):
    lines = (pipeline_out / "sc01-range.run.jsonl").read_text().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    bad = tmp_path / "bad.run.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["score", str(bad), "--fpe", str(pipeline_out / "act-sc-01.fpe.yaml"),
                 "--out", str(tmp_path / "r.yaml")]) == 1


def test_score_unparseable_log(pipeline_out, tmp_path):
    bad = tmp_path / "bad.run.jsonl"
    bad.write_text("not json\n")
    assert main(["score", str(bad), "--fpe", str(pipeline_out / "act-sc-01.fpe.yaml"),
                 "--out", str(tmp_path / "r.yaml")]) == 3


def test_commands_are_idempotent(pipeline_out):
    before = {p.name: p.read_bytes() for p in pipeline_out.iterdir()}
    pipeline = load_script("pipeline")
    spec = next(s for s in pipeline.scenarios() if s["name"] == "sc01")
    assert all(code == 0 for _, code in pipeline.run_scenario(spec, pipeline_out.parent))
    assert {p.name: p.read_bytes() for p in pipeline_out.iterdir()} == before
