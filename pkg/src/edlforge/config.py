"""Scoring defaults, overridable through the file named by ``EDLFORGE_CONFIG``."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from . import yamlutil

ENV_VAR = "EDLFORGE_CONFIG"
ESSAY_FEATURES = ("conn", "subr", "avg_max_depth", "mdd", "lsa_coh", "fre")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    essay_weights: tuple[float, ...]
    gaussians: Mapping[str, tuple[float, float]]
    extra_words: tuple[str, ...] = ()
    sa_weights: tuple[float, float, float] = (0.6, 0.2, 0.4)
    missing: str = "zero"
    lexicon: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    recommendations: Mapping[str, Mapping[str, str]] = field(default_factory=dict)


def _data(name: str) -> Any:
    return yamlutil.load(resources.files("edlforge").joinpath(f"data/{name}").read_text(encoding="utf-8"))


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for key, value in over.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@lru_cache(maxsize=1)
def lexicon() -> dict[str, tuple[str, ...]]:
    return {k: tuple(v) for k, v in _data("lexicon.yaml").items()}


@lru_cache(maxsize=1)
def recommendation_table() -> dict[str, dict[str, str]]:
    return _data("recommendations.yaml")


def load_settings(path: str | Path | None = None) -> Settings:
    """Package defaults merged with *path* (or ``$EDLFORGE_CONFIG`` when unset)."""
    raw = _data("defaults.yaml")
    path = path or os.environ.get(ENV_VAR)
    if path:
        try:
            override = yamlutil.load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(override, Mapping):
            raise ConfigError(f"config {path} must be a mapping")
        raw = _merge(raw, override)
    essay, sa = raw.get("essay", {}), raw.get("sa", {})
    weights = [float(w) for w in essay.get("weights", [1] * 6)]
    if len(weights) != 6 or any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ConfigError("essay.weights needs six non-negative numbers")
    total = math.fsum(weights)
    gaussians = {}
    for name, spec in (essay.get("gaussians") or {}).items():
        if name not in ESSAY_FEATURES:
            raise ConfigError(f"no essay feature called {name!r}")
        gaussians[name] = (float(spec["mu"]), float(spec["sigma"]))
    sw = sa.get("weights", {})
    missing = raw.get("aggregation", {}).get("missing", "zero")
    if missing not in ("zero", "exclude"):
        raise ConfigError(f"aggregation.missing must be zero or exclude, not {missing!r}")
    return Settings(
        essay_weights=tuple(w / total for w in weights),
        gaussians=gaussians,
        extra_words=tuple(essay.get("extra_words") or ()),
        sa_weights=(float(sw.get("goals", 0.6)), float(sw.get("hints", 0.2)), float(sw.get("reported", 0.4))),
        missing=missing,
        lexicon=lexicon(),
        recommendations=recommendation_table(),
    )
