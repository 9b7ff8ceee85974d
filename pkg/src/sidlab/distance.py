"""Similarity between parallel translations of the same SID corpus.

Sentences are compared word by word, slot values character by character.
A similarity is ``1 - levenshtein(a, b) / max(len(a), len(b))``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence

from .corpus import Dataset, Sentence, strip_prefix

LEVELS = ("sentence_words", "slot_chars")
CASE_MODES = ("case_sensitive", "case_insensitive")
AGGREGATIONS = ("per_sentence", "pooled")


class MisalignedCorpora(ValueError):
    pass


class MissingSlotTags(ValueError):
    pass


def levenshtein(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Unit-cost edit distance between two sequences (strings or token lists)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def normalized_similarity(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def _fold(text: str, case_mode: str) -> str:
    if case_mode == "case_insensitive":
        return text.casefold()
    if case_mode == "case_sensitive":
        return text
    raise ValueError(f"unknown case mode {case_mode!r}")


def sentence_similarity(sa: Sentence, sb: Sentence, case_mode: str = "case_sensitive") -> float:
    return normalized_similarity([_fold(w, case_mode) for w in sa.words], [_fold(w, case_mode) for w in sb.words])


def slot_values(sentence: Sentence) -> dict[str, str]:
    """Map each slot label to its tokens joined by single spaces, B/I prefixes ignored."""
    if sentence.slot_tags is None:
        raise MissingSlotTags("sentence has no slot tags")
    words: dict[str, list[str]] = {}
    for word, tag in zip(sentence.words, sentence.slot_tags):
        label = strip_prefix(tag)
        if label is not None:
            words.setdefault(label, []).append(word)
    return {label: " ".join(ws) for label, ws in words.items()}


def slot_pair_similarities(sa: Sentence, sb: Sentence, case_mode: str = "case_sensitive") -> list[float]:
    va, vb = slot_values(sa), slot_values(sb)
    shared = sorted(va.keys() & vb.keys())
    return [normalized_similarity(_fold(va[k], case_mode), _fold(vb[k], case_mode)) for k in shared]


def slot_similarity(sa: Sentence, sb: Sentence, case_mode: str = "case_sensitive") -> Optional[float]:
    """Mean character similarity over slot labels present in both sentences; None if none are shared."""
    sims = slot_pair_similarities(sa, sb, case_mode)
    if not sims:
        return None
    return math.fsum(sims) / len(sims)


@dataclass
class SimilarityMatrix:
    labels: list[str]
    level: str
    case_mode: str
    values: dict[tuple[str, str], float] = field(default_factory=dict)
    counts: dict[tuple[str, str], int] = field(default_factory=dict)
    aggregation: str = "per_sentence"

    @property
    def mode(self) -> str:
        return f"{self.level} {self.case_mode}"

    def get(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        if (a, b) in self.values:
            return self.values[(a, b)]
        return self.values[(b, a)]

    def to_tsv(self) -> str:
        lines = [f"# mode: {self.mode}", f"# aggregation: {self.aggregation}"]
        lines.append("\t".join([""] + self.labels[1:]))
        for i, a in enumerate(self.labels[:-1]):
            cells = [a]
            for j, b in enumerate(self.labels[1:], start=1):
                cells.append(f"{self.get(a, b):.6f}" if j > i else "")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def _pair_values(da: Dataset, db: Dataset, level: str, case_mode: str, aggregation: str) -> list[float]:
    values: list[float] = []
    for sa, sb in zip(da, db):
        if level == "sentence_words":
            values.append(sentence_similarity(sa, sb, case_mode))
        elif aggregation == "pooled":
            values.extend(slot_pair_similarities(sa, sb, case_mode))
        else:
            sim = slot_similarity(sa, sb, case_mode)
            if sim is not None:
                values.append(sim)
    return values


def corpus_similarity(
    corpora: Mapping[str, Dataset],
    level: str = "slot_chars",
    case_mode: str = "case_sensitive",
    aggregation: str = "per_sentence",
) -> SimilarityMatrix:
    """Mean pairwise similarity for every unordered pair of aligned corpora.

    ``aggregation="per_sentence"`` averages slot similarities within each
    sentence pair first; ``"pooled"`` averages all shared-label pairs of the
    corpus directly. Sentence-level similarity ignores the setting.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    _fold("", case_mode)
    labels = list(corpora)
    sizes = {tag: len(d) for tag, d in corpora.items()}
    if len(set(sizes.values())) > 1:
        raise MisalignedCorpora(f"sentence counts differ: {sizes}")
    matrix = SimilarityMatrix(labels, level, case_mode, aggregation=aggregation)
    for a, b in itertools.combinations(labels, 2):
        vals = _pair_values(corpora[a], corpora[b], level, case_mode, aggregation)
        matrix.values[(a, b)] = math.fsum(vals) / len(vals) if vals else float("nan")
        matrix.counts[(a, b)] = len(vals)
    return matrix
