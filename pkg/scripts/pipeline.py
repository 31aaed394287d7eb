"""Run validate -> plan -> compile -> run -> score over the sample corpus.

    python3 scripts/pipeline.py WORK_DIR            # run into WORK_DIR
    python3 scripts/pipeline.py WORK_DIR --golden   # also refresh corpus/golden/
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

from edlforge import yamlutil
from edlforge.cli import main as cli

CORPUS = Path(__file__).resolve().parent.parent / "corpus"
GOLDEN_FILES = ("report.yaml", "*.manifest.yaml", "*.fpe.yaml", "*.run.jsonl", "plan.yaml")


def run_scenario(spec: dict, work: Path, corpus: Path = CORPUS) -> list[tuple[str, int]]:
    """Run one scenario; returns (stage, exit code) pairs and stops at the first failure."""
    manifest = yamlutil.load((corpus / "pipeline.yaml").read_text(encoding="utf-8"))
    out = work / spec["name"]
    out.mkdir(parents=True, exist_ok=True)
    doc = str(corpus / spec["doc"])
    stages: list[tuple[str, list[str]]] = [
        ("validate", ["validate", doc]),
        ("plan", ["plan", doc, "--registry", str(corpus / manifest["registry"]), "--window", manifest["window"],
                  "--out", str(out / "plan.yaml")]),
        ("compile", ["compile", doc, "--plan", str(out / "plan.yaml"), "--out", str(out)]),
    ]
    runs = []
    for r in spec["runs"]:
        path = out / f"{r['unit']}.run.jsonl"
        runs.append(str(path))
        argv = ["run", doc, "--unit", r["unit"], "--seed", str(r.get("seed", 0)), "--out", str(path)]
        for s in r.get("scripts", []):
            argv += ["--script", str(corpus / s)]
        for o in r.get("overrides", []):
            argv += ["--override", str(corpus / o)]
        stages.append((f"run:{r['unit']}", argv))
    score = ["score", *runs, "--fpe", "", "--out", str(out / "report.yaml"), "--csv", str(out / "report.csv")]
    if spec.get("answers"):
        score += ["--answers", str(corpus / spec["answers"])]
    stages.append(("score", score))

    codes = []
    for name, argv in stages:
        if name == "score":
            argv[argv.index("--fpe") + 1] = str(next(out.glob("*.fpe.yaml")))
        code = cli(argv)
        codes.append((name, code))
        if code != 0:
            break
    return codes


def scenarios(corpus: Path = CORPUS) -> list[dict]:
    return yamlutil.load((corpus / "pipeline.yaml").read_text(encoding="utf-8"))["scenarios"]


def main(argv=None) -> int:
    p = argparse.ArgumentParser()
    p.add_argument("work")
    p.add_argument("--golden", action="store_true")
    args = p.parse_args(argv)
    work = Path(args.work)
    failed = False
    for spec in scenarios():
        codes = run_scenario(spec, work)
        print(spec["name"], " ".join(f"{n}={c}" for n, c in codes))
        failed |= any(c != 0 for _, c in codes)
        if args.golden and not failed:
            dest = CORPUS / "golden" / spec["name"]
            if dest.exists():
                shutil.rmtree(dest)
            dest.mkdir(parents=True)
            for pattern in GOLDEN_FILES:
                for f in sorted((work / spec["name"]).glob(pattern)):
                    shutil.copyfile(f, dest / f.name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
