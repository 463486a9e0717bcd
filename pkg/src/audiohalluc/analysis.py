"""Corpus statistics: prefix stripping, type frequency, token frequency.

Part-of-speech tagging is pluggable. The bundled default is a small
lexicon tagger (closed word lists for frequent audio-domain nouns and
verbs plus -ing/-ed suffix heuristics); for exact replication of an
external tagger, import its output from a token-tag file with
:class:`ImportedTagger`. Token rankings count occurrences, not
sentences containing the token.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .corpus import Corpus, HallucType

NOUN = "NOUN"
VERB = "VERB"
OTHER = "OTHER"
_VALID_TAGS = {NOUN, VERB, OTHER}

# Longest first, matched once, case-insensitively, at the start of the sentence.
STRIP_PHRASES = ("I hear the sound of", "I hear that", "I hear")


class AnalysisError(Exception):
    """Unannotated corpus or invalid tagger input."""


# A tagger maps (sample_id, stripped sentence) to (token, tag) pairs
# with tags in {NOUN, VERB, OTHER}.
Tagger = Callable[[str, str], list[tuple[str, str]]]


def strip_prefix(sentence: str) -> str:
    """Remove the longest matching leading boilerplate phrase, once.

    Matching is case-insensitive and requires a word boundary after the
    phrase ("I heard ..." is untouched). The remainder is trimmed of
    leading whitespace; non-matching input comes back unchanged.
    """
    lower = sentence.lower()
    for phrase in STRIP_PHRASES:
        p = phrase.lower()
        if lower.startswith(p):
            end = len(p)
            if end < len(sentence) and sentence[end].isalnum():
                continue
            return sentence[end:].lstrip()
    return sentence


class LexiconTagger:
    """Tiny built-in tagger; not a parser, just enough for corpus stats."""

    _NOUNS = frozenset(
        """
        airplane animal background baby bell bird birds boat breeze car cars cat
        chainsaw child children city crowd dog dogs door drum engine fire
        footsteps forest glass guitar harp horn horse instrument instruments
        keyboard kid kids lawnmower machine man men motor motorcycle music
        nature noise ocean people person piano rain river road room saxophone
        sound sounds street thunder tractor traffic train truck trumpet tuba
        vehicle violin voice voices water wave waves wind woman women xylophone
        """.split()
    )
    _VERBS = frozenset(
        """
        bark barks beat blow blows break buzz buzzes chirp chirps clap crash
        cry cries drive drives fall hear hears hit honk howl hum hums
        laugh laughs meow moo play plays rev ring rings roar roars run
        runs rustle shout shouts sing sings speak speaks splash squeak talk
        talks whistle whistles
        """.split()
    )

    _TOKEN_RE = re.compile(r"[a-z']+")

    def __call__(self, sample_id: str, sentence: str) -> list[tuple[str, str]]:
        tagged = []
        for token in self._TOKEN_RE.findall(sentence.lower()):
            tagged.append((token, self._tag(token)))
        return tagged

    def _tag(self, token: str) -> str:
        if token in self._VERBS:
            return VERB
        if token in self._NOUNS:
            return NOUN
        if token.endswith("ing") or token.endswith("ed"):
            return VERB
        if token.endswith("s") and token[:-1] in self._NOUNS:
            return NOUN
        return OTHER


class ImportedTagger:
    """Tagger backed by a token-tag file from an external tool.

    File format: newline-delimited JSON objects
    ``{"sample_id": ..., "tokens": [[text, tag], ...]}`` with tags in
    {NOUN, VERB, OTHER}. Lookup is by sample id; unknown ids raise.
    """

    def __init__(self, path: str | Path):
        self._by_id: dict[str, list[tuple[str, str]]] = {}
        path = Path(path)
        if not path.exists():
            raise AnalysisError(f"tagger file not found: {path}")
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise AnalysisError(f"tagger file line {lineno}: invalid JSON") from exc
                sample_id = obj.get("sample_id")
                tokens = obj.get("tokens")
                if not sample_id or not isinstance(tokens, list):
                    raise AnalysisError(
                        f"tagger file line {lineno}: need sample_id and tokens"
                    )
                parsed = []
                for pair in tokens:
                    if len(pair) != 2 or pair[1] not in _VALID_TAGS:
                        raise AnalysisError(
                            f"tagger file line {lineno}: bad token entry {pair!r}"
                        )
                    parsed.append((str(pair[0]), str(pair[1])))
                self._by_id[str(sample_id)] = parsed

    def __call__(self, sample_id: str, sentence: str) -> list[tuple[str, str]]:
        if sample_id not in self._by_id:
            raise AnalysisError(f"no imported tags for sample {sample_id!r}")
        return self._by_id[sample_id]


@dataclass(frozen=True)
class TypeFrequency:
    counts: dict[HallucType, int]
    total_hallucinated: int
    total_sentences: int
    rate: float


def type_frequency(corpus: Corpus) -> TypeFrequency:
    """Exact per-type counts and the overall hallucination rate."""
    counts = {t: 0 for t in HallucType}
    hallucinated = 0
    for sample in corpus:
        if sample.annotation is None:
            raise AnalysisError(f"sample {sample.id!r} is unannotated")
        if sample.annotation.hallucinated:
            hallucinated += 1
            counts[sample.annotation.halluc_type] += 1
    rate = hallucinated / len(corpus) if len(corpus) else 0.0
    return TypeFrequency(
        counts=counts,
        total_hallucinated=hallucinated,
        total_sentences=len(corpus),
        rate=rate,
    )


@dataclass(frozen=True)
class StatsReport:
    """Type counts plus per-type top-k noun and verb rankings.

    Rankings are (token, count) sorted by count descending, ties broken
    by lexicographic token order.
    """

    type_counts: dict[HallucType, int]
    total_hallucinated: int
    total_sentences: int
    k: int
    top_nouns: dict[HallucType, list[tuple[str, int]]] = field(default_factory=dict)
    top_verbs: dict[HallucType, list[tuple[str, int]]] = field(default_factory=dict)


def _top_k(counter: Counter, k: int) -> list[tuple[str, int]]:
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def token_stats(corpus: Corpus, tagger: Optional[Tagger] = None, k: int = 5) -> StatsReport:
    """Noun/verb occurrence counts over stripped sentences, per type."""
    if tagger is None:
        tagger = LexiconTagger()
    if k < 0:
        raise AnalysisError("k must be non-negative")
    freq = type_frequency(corpus)  # also validates full annotation
    nouns = {t: Counter() for t in HallucType}
    verbs = {t: Counter() for t in HallucType}
    for sample in corpus:
        ann = sample.annotation
        if not ann.hallucinated:
            continue
        stripped = strip_prefix(sample.response)
        for token, tag in tagger(sample.id, stripped):
            if tag == NOUN:
                nouns[ann.halluc_type][token] += 1
            elif tag == VERB:
                verbs[ann.halluc_type][token] += 1
    return StatsReport(
        type_counts=freq.counts,
        total_hallucinated=freq.total_hallucinated,
        total_sentences=freq.total_sentences,
        k=k,
        top_nouns={t: _top_k(nouns[t], k) for t in HallucType},
        top_verbs={t: _top_k(verbs[t], k) for t in HallucType},
    )


def stats_to_json(report: StatsReport) -> dict:
    return {
        "type_counts": {t.value: c for t, c in report.type_counts.items()},
        "total_hallucinated": report.total_hallucinated,
        "total_sentences": report.total_sentences,
        "rate": report.total_hallucinated / report.total_sentences
        if report.total_sentences
        else 0.0,
        "k": report.k,
        "top_nouns": {t.value: [list(p) for p in v] for t, v in report.top_nouns.items()},
        "top_verbs": {t.value: [list(p) for p in v] for t, v in report.top_verbs.items()},
    }


def render_stats(report: StatsReport) -> str:
    """Plain-text tables: type frequency, then per-type token rankings."""
    rate = (
        report.total_hallucinated / report.total_sentences
        if report.total_sentences
        else 0.0
    )
    lines = [
        "Hallucination type frequency",
        "----------------------------",
        f"{'Type (A)':>10}{'Type (B)':>10}{'Type (C)':>10}{'total':>8}{'rate':>8}",
        f"{report.type_counts[HallucType.A]:>10}"
        f"{report.type_counts[HallucType.B]:>10}"
        f"{report.type_counts[HallucType.C]:>10}"
        f"{report.total_hallucinated:>8}"
        f"{rate:>8.3f}",
    ]
    if report.k > 0:
        for t in HallucType:
            lines.append("")
            lines.append(f"Type ({t.value}) top-{report.k} tokens")
            nouns = report.top_nouns.get(t, [])
            verbs = report.top_verbs.get(t, [])
            lines.append(f"{'nouns':<24}{'verbs':<24}")
            for i in range(max(len(nouns), len(verbs), 1)):
                noun = f"{nouns[i][0]} ({nouns[i][1]})" if i < len(nouns) else ""
                verb = f"{verbs[i][0]} ({verbs[i][1]})" if i < len(verbs) else ""
                lines.append(f"{noun:<24}{verb:<24}")
    return "\n".join(lines) + "\n"
