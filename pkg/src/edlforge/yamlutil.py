"""Restricted YAML loading and canonical YAML emission.

Only maps, sequences and scalars are accepted: anchors, aliases, tags beyond
the core schema and multi-document streams are rejected so that documents are
deterministic and cannot expand (alias bombs).
"""

from __future__ import annotations

from typing import Any

import yaml


class EdlSyntaxError(ValueError):
    """Text is not well-formed in the supported YAML subset."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.reason = message
        self.line = line
        self.column = column


class _StrictLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader: _StrictLoader, node: yaml.MappingNode) -> dict:
    mapping: dict = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if not isinstance(key, str):
            mark = key_node.start_mark
            raise EdlSyntaxError(f"mapping key {key!r} is not a string", mark.line + 1, mark.column + 1)
        if key in mapping:
            mark = key_node.start_mark
            raise EdlSyntaxError(f"duplicate key {key!r}", mark.line + 1, mark.column + 1)
        mapping[key] = loader.construct_object(value_node, deep=True)
    return mapping


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load(text: str) -> Any:
    """Parse *text*; raise :class:`EdlSyntaxError` with a 1-based position."""
    try:
        documents = 0
        for event in yaml.parse(text, Loader=_StrictLoader):
            if isinstance(event, yaml.DocumentStartEvent):
                documents += 1
                if documents > 1:
                    raise EdlSyntaxError("multi-document streams are not supported",
                                         event.start_mark.line + 1, event.start_mark.column + 1)
            elif isinstance(event, yaml.AliasEvent) or getattr(event, "anchor", None):
                raise EdlSyntaxError("anchors and aliases are not supported",
                                     event.start_mark.line + 1, event.start_mark.column + 1)
        return yaml.load(text, Loader=_StrictLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (0, 0)
        raise EdlSyntaxError(exc.problem or str(exc), line, col) from None
    except yaml.YAMLError as exc:
        raise EdlSyntaxError(str(exc)) from None


class _CanonicalDumper(yaml.SafeDumper):
    def increase_indent(self, flow: bool = False, indentless: bool = False):
        # nested sequences are indented under their key
        return super().increase_indent(flow, False)

    def ignore_aliases(self, data: Any) -> bool:
        return True


def _str_representer(dumper: yaml.SafeDumper, data: str):
    style = "|" if "\n" in data else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", data, style=style)


_CanonicalDumper.add_representer(str, _str_representer)


def dump(data: Any) -> str:
    """Canonical text: insertion-ordered keys, 2-space indent, LF endings."""
    return yaml.dump(
        data,
        Dumper=_CanonicalDumper,
        sort_keys=False,
        default_flow_style=False,
        indent=2,
        width=4096,
        allow_unicode=True,
        line_break="\n",
    )
