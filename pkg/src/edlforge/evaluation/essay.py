"""Essay grading: text features, clarity and the final essay score.

Neural components (sentence embeddings, acceptability classifiers, parsers)
sit behind small provider protocols.  The defaults are deterministic,
dependency-light proxies so grading is reproducible offline.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Protocol, Sequence

from ..config import lexicon

WORD_RE = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*")
SENTENCE_END_RE = re.compile(r"[.!?]+")
OPEN_BRACKETS = "([{"
CLOSE_BRACKETS = ")]}"

ES_SIMILARITY = 0.8
ES_SPELLING = 0.1
ES_CLARITY = 0.1


class ProviderFailure(RuntimeError):
    def __init__(self, provider: str, cause: BaseException):
        super().__init__(f"{provider} provider failed: {cause}")
        self.provider = provider
        self.cause = cause


class BadGaussian(ValueError):
    pass


class BadWeights(ValueError):
    pass


# -- text statistics -----------------------------------------------------------------


def words(text: str) -> list[str]:
    return WORD_RE.findall(text)


def sentences(text: str) -> list[str]:
    parts = SENTENCE_END_RE.split(text)
    return [p.strip() for p in parts if WORD_RE.search(p)]


def count_syllables(word: str) -> int:
    """Vowel-group count with silent final ``e`` and silent ``-ed`` (except after t/d)."""
    w = word.lower()
    groups = re.findall(r"[aeiouy]+", w)
    n = len(groups)
    if n > 1 and w.endswith("e") and not w.endswith(("le", "ee", "ye")):
        n -= 1
    elif n > 1 and w.endswith("ed") and not w.endswith(("ted", "ded")):
        n -= 1
    return max(n, 1)


def flesch_reading_ease(text: str) -> float:
    """Unclamped Flesch Reading Ease; 0.0 for text without words."""
    ws = words(text)
    if not ws:
        return 0.0
    n_sentences = max(len(sentences(text)), 1)
    syllables = sum(count_syllables(w) for w in ws)
    return 206.835 - 1.015 * (len(ws) / n_sentences) - 84.6 * (syllables / len(ws))


def _term_vector(tokens: Sequence[str], bigrams: bool) -> Counter:
    vec = Counter(tokens)
    if bigrams:
        vec.update(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return vec


def cosine(a: Mapping[str, int], b: Mapping[str, int]) -> float:
    dot = sum(v * b.get(k, 0) for k, v in a.items())
    if dot == 0:
        return 0.0
    norm = math.sqrt(sum(v * v for v in a.values())) * math.sqrt(sum(v * v for v in b.values()))
    return min(dot / norm, 1.0)


# -- providers -------------------------------------------------------------------------


class SimilarityProvider(Protocol):
    def similarity(self, answer: str, reference: str) -> float: ...


class SyntaxProvider(Protocol):
    def depths(self, text: str) -> tuple[float, float]:
        """(average maximal depth, mean depth) over sentences."""
        ...


class CohesionProvider(Protocol):
    def cohesion(self, text: str) -> float: ...


class AcceptabilityProvider(Protocol):
    def acceptability(self, text: str) -> float: ...


class TermCosine:
    """Cosine of term-frequency vectors over lower-cased word unigrams and bigrams."""

    def similarity(self, answer: str, reference: str) -> float:
        a = [w.lower() for w in words(answer)]
        b = [w.lower() for w in words(reference)]
        return cosine(_term_vector(a, True), _term_vector(b, True))


class ClauseNesting:
    """Depth proxy: 1 + open brackets + dependent-clause openers seen so far in the sentence."""

    def __init__(self, subordinators: Iterable[str] | None = None):
        self.subordinators = frozenset(subordinators if subordinators is not None else lexicon()["subordinators"])

    def depths(self, text: str) -> tuple[float, float]:
        maxima, means = [], []
        for sentence in sentences(text):
            depth_bracket, clauses, per_token = 0, 0, []
            for tok in re.findall(r"[A-Za-z]+(?:'[A-Za-z]+)*|[()\[\]{}]", sentence):
                if tok in OPEN_BRACKETS:
                    depth_bracket += 1
                elif tok in CLOSE_BRACKETS:
                    depth_bracket = max(depth_bracket - 1, 0)
                else:
                    if tok.lower() in self.subordinators:
                        clauses += 1
                    per_token.append(1 + depth_bracket + clauses)
            if per_token:
                maxima.append(max(per_token))
                means.append(sum(per_token) / len(per_token))
        if not maxima:
            return 0.0, 0.0
        return sum(maxima) / len(maxima), sum(means) / len(means)


class AdjacentSentenceCosine:
    """Mean unigram cosine of consecutive sentences; a single sentence is fully cohesive."""

    def cohesion(self, text: str) -> float:
        vectors = [_term_vector([w.lower() for w in words(s)], False) for s in sentences(text)]
        if len(vectors) < 2:
            return 1.0 if vectors else 0.0
        pairs = [cosine(a, b) for a, b in zip(vectors, vectors[1:])]
        return sum(pairs) / len(pairs)


class ConstantAcceptability:
    def __init__(self, value: float = 1.0):
        self.value = value

    def acceptability(self, text: str) -> float:
        return self.value


@lru_cache(maxsize=1)
def _english():
    from spellchecker import SpellChecker

    return SpellChecker(language="en")


class SpellDictionary:
    """English word list plus configured and per-question domain vocabulary."""

    def __init__(self, extra_words: Iterable[str] = ()):
        self.extra = frozenset(w.lower() for w in extra_words)

    def known(self, tokens: Sequence[str], also: Iterable[str] = ()) -> int:
        allowed = self.extra | {w.lower() for w in also}
        lowered = [t.lower() for t in tokens]
        dictionary = _english().known([t for t in lowered if t not in allowed])
        return sum(1 for t in lowered if t in allowed or t in dictionary)


@dataclass
class Providers:
    similarity: SimilarityProvider = field(default_factory=TermCosine)
    syntax: SyntaxProvider = field(default_factory=ClauseNesting)
    cohesion: CohesionProvider = field(default_factory=AdjacentSentenceCosine)
    acceptability: AcceptabilityProvider = field(default_factory=ConstantAcceptability)
    dictionary: SpellDictionary = field(default_factory=SpellDictionary)


# -- features and scores --------------------------------------------------------------------


@dataclass(frozen=True)
class EssayFeatures:
    sim_s: float
    spell_s: float
    fre: float
    conn: float
    subr: float
    avg_max_depth: float
    mdd: float
    lsa_coh: float
    q_cola: float
    weights: tuple[float, ...] = (1 / 6,) * 6

    def __post_init__(self) -> None:
        if len(self.weights) != 6 or any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise BadWeights(f"need six weights in [0, 1], got {self.weights}")
        if abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise BadWeights(f"weights sum to {math.fsum(self.weights)}, expected 1")


def _clamp(x: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return min(max(x, lo), hi)


def _call(name: str, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # providers are pluggable; surface which one broke
        raise ProviderFailure(name, exc) from exc


def essay_features(answer: str, reference: str, providers: Providers | None = None,
                   weights: Sequence[float] = (1 / 6,) * 6) -> EssayFeatures:
    providers = providers or Providers()
    weights = tuple(weights)
    if not answer.strip():
        return EssayFeatures(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, weights)
    tokens = words(answer)
    lowered = [t.lower() for t in tokens]
    n_sentences = max(len(sentences(answer)), 1)
    lex = lexicon()
    connectives, subordinators = set(lex["connectives"]), set(lex["subordinators"])

    sim_s = _clamp(_call("similarity", providers.similarity.similarity, answer, reference))
    known = _call("dictionary", providers.dictionary.known, tokens, words(reference))
    spell_s = known / len(tokens) if tokens else 0.0
    avg_max_depth, mdd = _call("syntax", providers.syntax.depths, answer)
    return EssayFeatures(
        sim_s=sim_s,
        spell_s=spell_s,
        fre=_clamp(flesch_reading_ease(answer), 0.0, 100.0),
        conn=sum(t in connectives for t in lowered) / len(lowered) if lowered else 0.0,
        subr=_clamp(sum(t in subordinators for t in lowered) / n_sentences),
        avg_max_depth=max(float(avg_max_depth), 0.0),
        mdd=max(float(mdd), 0.0),
        lsa_coh=_clamp(_call("cohesion", providers.cohesion.cohesion, answer)),
        q_cola=_clamp(_call("acceptability", providers.acceptability.acceptability, answer)),
        weights=weights,
    )


def gaussian(x: float, mu: float, sigma: float) -> float:
    return math.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma))


def clarity_score(f: EssayFeatures, gaussians: Mapping[str, tuple[float, float]]) -> float:
    """QCoLA^2 times the weighted sum of shaped features, clamped to [0, 1].

    A feature listed in *gaussians* enters as ``exp(-(x-mu)^2 / 2 sigma^2)``;
    other features enter as-is.  FRE always enters as FRE/100.
    """
    for name, (_mu, sigma) in gaussians.items():
        if not sigma > 0:
            raise BadGaussian(f"sigma for {name} must be positive, got {sigma}")

    def shaped(name: str, value: float) -> float:
        if name in gaussians:
            return gaussian(value, *gaussians[name])
        return value

    terms = [
        shaped("conn", f.conn),
        shaped("subr", f.subr),
        shaped("avg_max_depth", f.avg_max_depth),
        shaped("mdd", f.mdd),
        shaped("lsa_coh", f.lsa_coh),
        _clamp(f.fre, 0.0, 100.0) / 100.0,
    ]
    inner = math.fsum(w * t for w, t in zip(f.weights, terms))
    return _clamp(f.q_cola ** 2 * inner)


def essay_score(f: EssayFeatures, clar_s: float) -> float:
    return ES_SIMILARITY * f.sim_s + ES_SPELLING * f.spell_s + ES_CLARITY * clar_s
