"""``edlforge`` command line: validate, plan, compile, run and score.

Exit codes: 0 success, 1 violations found, 2 no feasible match,
3 I/O or format error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import broker, engine, translator, yamlutil
from .config import ConfigError, load_settings
from .edl_io import SchemaError, parse, validate_schema
from .evaluation.report import AnswersError, HashMismatch, evaluate, parse_answers, report, write_report
from .yamlutil import EdlSyntaxError

EXIT_OK, EXIT_VIOLATIONS, EXIT_NO_FIT, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_yaml(path: str) -> Any:
    try:
        return yamlutil.load(_read(path))
    except EdlSyntaxError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc


def _write(path: str | Path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from exc


def _load_doc(path: str):
    text = _read(path)
    try:
        return parse(text)
    except EdlSyntaxError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc
    except SchemaError as exc:
        lines = "\n".join(f"{path}: {v}" for v in exc.violations)
        raise CliError(EXIT_VIOLATIONS, lines) from exc


def _window(text: str) -> tuple[int, int]:
    try:
        start, end = (int(x) for x in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"window must be START:END in seconds, got {text!r}") from exc
    if not 0 <= start < end:
        raise argparse.ArgumentTypeError(f"window needs 0 <= START < END, got {text!r}")
    return start, end


def _items(data: Any, key: str) -> list:
    if data is None:
        return []
    if isinstance(data, dict) and key in data:
        data = data[key]
    return data if isinstance(data, list) else [data]


# -- subcommands -------------------------------------------------------------------------


def cmd_validate(args) -> int:
    def check(path: str):
        return path, validate_schema(_read(path))

    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        outcomes = list(pool.map(check, args.paths))
    found = [(path, v) for path, vs in outcomes for v in vs]
    if args.format == "json":
        if found:
            print(json.dumps([{"file": p, **v.as_dict()} for p, v in found], indent=2))
    else:
        for path, v in found:
            print(f"{path}: {v}")
    return EXIT_VIOLATIONS if found else EXIT_OK


def cmd_plan(args) -> int:
    doc = _load_doc(args.doc)
    try:
        reg = broker.load_registry(args.registry)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.registry}: {exc.strerror or exc}") from exc
    except (broker.RegistryError, EdlSyntaxError) as exc:
        raise CliError(EXIT_IO, f"{args.registry}: {exc}") from exc
    req = broker.request_from_doc(doc, args.window, args.request_id)
    result = broker.match(reg, req)
    if isinstance(result, broker.NoFit):
        print(f"no feasible plan for {req.request_id} in window {args.window[0]}:{args.window[1]}", file=sys.stderr)
        if result.alternatives:
            print(yamlutil.dump({"alternatives": [broker.plan_to_dict(a) for a in result.alternatives]}), end="")
        return EXIT_NO_FIT
    _write(args.out, yamlutil.dump(broker.plan_to_dict(result)))
    if args.reserve:
        demands = {a.id: a.capacity_demand for a in doc.service.assets()}
        try:
            broker.RegistryStore(args.registry).reserve(result.plan, demands)
        except broker.StalePlanError as exc:
            raise CliError(EXIT_NO_FIT, f"registry changed before reserving: {exc}") from exc
    return EXIT_OK


def cmd_compile(args) -> int:
    doc = _load_doc(args.doc)
    try:
        plan = broker.plan_from_dict(_read_yaml(args.plan))
    except ValueError as exc:
        raise CliError(EXIT_IO, f"{args.plan}: {exc}") from exc
    try:
        manifests, cfg = translator.compile(doc, plan)
    except (translator.LocalityViolation, translator.IncompletePlan) as exc:
        raise CliError(EXIT_VIOLATIONS, str(exc)) from exc
    except translator.AddressExhaustion as exc:
        raise CliError(EXIT_VIOLATIONS, str(exc)) from exc
    problems = translator.consistency_check(manifests, doc)
    if problems:
        raise CliError(EXIT_VIOLATIONS, "\n".join(str(v) for v in problems))
    try:
        translator.write_outputs(manifests, cfg, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {args.out}: {exc.strerror or exc}") from exc
    return EXIT_OK


def cmd_run(args) -> int:
    doc = _load_doc(args.doc)
    try:
        overrides = [engine.override_from_dict(o) for p in args.override for o in _items(_read_yaml(p), "overrides")]
        scripts = [engine.script_from_dict(s) for p in args.script for s in _items(_read_yaml(p), "scripts")]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CliError(EXIT_IO, f"malformed override or script file: {exc}") from exc
    try:
        log = engine.run(doc, args.unit, overrides, scripts, args.seed)
    except engine.InvalidUnit as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except engine.OverrideUnknownUser as exc:
        raise CliError(EXIT_VIOLATIONS, f"override names unknown simulated user {exc.args[0]!r}") from exc
    except (engine.InvalidOverride, engine.InvalidScript) as exc:
        raise CliError(EXIT_VIOLATIONS, str(exc)) from exc
    if args.out == "-":
        sys.stdout.write(log.to_jsonl())
    else:
        _write(args.out, log.to_jsonl())
    return EXIT_OK


def cmd_score(args) -> int:
    try:
        settings = load_settings()
    except ConfigError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    try:
        cfg = translator.scoring_from_dict(_read_yaml(args.fpe))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_IO, f"{args.fpe}: malformed scoring config: {exc}") from exc
    logs = []
    for path in args.runs:
        try:
            log = engine.parse_run(_read(path))
        except engine.InvalidLog as exc:
            raise CliError(EXIT_IO, f"{path}: {exc}") from exc
        unit = next((u for u in cfg.units if u.unit_id == log.header.get("unit_id")), None)
        check = engine.replay_check(log, unit.sa.prerequisites if unit is not None and unit.sa else None)
        if not check.ok:
            raise CliError(EXIT_VIOLATIONS, "\n".join(f"{path}: {i.code} seq={i.seq}: {i.message}"
                                                      for i in check.issues))
        logs.append(log)
    try:
        answers = parse_answers(_read_yaml(args.answers)) if args.answers else {}
    except AnswersError as exc:
        raise CliError(EXIT_IO, f"{args.answers}: {exc}") from exc
    try:
        tree, sa, _results = evaluate(cfg, logs, answers, settings)
        doc = report(tree, sa)
    except HashMismatch as exc:
        raise CliError(EXIT_VIOLATIONS, str(exc)) from exc
    except engine.InvalidLog as exc:
        raise CliError(EXIT_VIOLATIONS, str(exc)) from exc
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_report(doc, args.out, tree, args.csv)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write report: {exc.strerror or exc}") from exc
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # usage errors are format errors; exit 2 is reserved for "no feasible match"
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edlforge", description="Exercise description tooling for federated cyber ranges.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check exercise descriptions against the schema and model rules")
    v.add_argument("paths", nargs="+")
    v.add_argument("--format", choices=("text", "json"), default="text")
    v.add_argument("--jobs", type=int, default=1, help="validate files in parallel")
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("plan", help="match a service request against the range registry")
    pl.add_argument("doc")
    pl.add_argument("--registry", required=True)
    pl.add_argument("--window", type=_window, required=True, help="START:END in seconds")
    pl.add_argument("--out", default="plan.yaml")
    pl.add_argument("--request-id", default=None)
    pl.add_argument("--reserve", action="store_true", help="commit the plan to the registry")
    pl.set_defaults(func=cmd_plan)

    c = sub.add_parser("compile", help="emit deployment manifests and the scoring config")
    c.add_argument("doc")
    c.add_argument("--plan", required=True)
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="simulate one scenario unit")
    r.add_argument("doc")
    r.add_argument("--unit", required=True)
    r.add_argument("--override", action="append", default=[], help="timeline override file (repeatable)")
    r.add_argument("--script", action="append", default=[], help="trainee script file (repeatable)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="run.jsonl", help="output path, '-' for stdout")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="score run logs and essay answers")
    s.add_argument("runs", nargs="*", help="run.jsonl files, one per scenario unit")
    s.add_argument("--fpe", required=True, help="scoring config written by compile")
    s.add_argument("--answers", default=None)
    s.add_argument("--out", default="report.yaml")
    s.add_argument("--csv", default=None, help="also write a flat CSV table")
    s.set_defaults(func=cmd_score)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_IO
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except Exception as exc:  # anything unexpected is a bug, not bad input
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
