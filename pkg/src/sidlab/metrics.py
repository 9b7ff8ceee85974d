"""SID scores, auxiliary-task dev scores, and cross-seed aggregation.

All ratios are returned in [0, 1]. Empty inputs are scored as vacuously
correct (1.0), the same convention strict span F1 uses when neither side
contains a span.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

from .corpus import Sentence, decode_bio


class LengthMismatch(ValueError):
    pass


class NoMaskedTokens(ValueError):
    pass


@dataclass(frozen=True)
class SidPrediction:
    slot_tags: list[str]
    intent: str


@dataclass(frozen=True)
class MetricReport:
    slot_precision: float
    slot_recall: float
    slot_f1: float
    intent_accuracy: float
    fully_correct: float
    n_sentences: int

    FIELDS = ("slot_precision", "slot_recall", "slot_f1", "intent_accuracy", "fully_correct")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AuxReport:
    """Dev scores of the auxiliary tasks; a field is None when its task was not trained."""

    las: Optional[float] = None
    pos_accuracy: Optional[float] = None
    ner_span_f1: Optional[float] = None
    mlm_perplexity: Optional[float] = None

    FIELDS = ("las", "pos_accuracy", "ner_span_f1", "mlm_perplexity")


@dataclass(frozen=True)
class SeedAggregate:
    mean: float
    stdev: float
    n_runs: int


def _check_lengths(gold: Sequence, pred: Sequence, what: str = "sentence") -> None:
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold vs {len(pred)} predicted {what}s")


def _ratio(hits: int, total: int) -> float:
    return hits / total if total else 1.0


def span_prf(gold_tags: Iterable[Sequence[str]], pred_tags: Iterable[Sequence[str]]) -> tuple[float, float, float]:
    """Strict span precision/recall/F1 over parallel BIO tag sequences.

    A predicted span is correct only if start, end and label all match.
    """
    tp = n_gold = n_pred = 0
    gold_tags, pred_tags = list(gold_tags), list(pred_tags)
    _check_lengths(gold_tags, pred_tags)
    for i, (g, p) in enumerate(zip(gold_tags, pred_tags)):
        _check_lengths(g, p, f"tag in sentence {i}; ")
        gs, ps = set(decode_bio(g)), set(decode_bio(p))
        tp += len(gs & ps)
        n_gold += len(gs)
        n_pred += len(ps)
    if n_gold == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def strict_slot_f1(gold: Sequence[Sentence], pred: Sequence[SidPrediction]) -> tuple[float, float, float]:
    _check_lengths(gold, pred)
    return span_prf((s.slot_tags for s in gold), (p.slot_tags for p in pred))


def intent_accuracy(gold: Sequence[Sentence], pred: Sequence[SidPrediction]) -> float:
    _check_lengths(gold, pred)
    return _ratio(sum(g.intent == p.intent for g, p in zip(gold, pred)), len(gold))


def fully_correct(gold: Sequence[Sentence], pred: Sequence[SidPrediction]) -> float:
    """Share of sentences with the right intent and exactly the gold span set."""
    _check_lengths(gold, pred)
    hits = 0
    for g, p in zip(gold, pred):
        _check_lengths(g.slot_tags, p.slot_tags, "tag")
        if g.intent == p.intent and set(decode_bio(g.slot_tags)) == set(decode_bio(p.slot_tags)):
            hits += 1
    return _ratio(hits, len(gold))


def score_sid(gold: Sequence[Sentence], pred: Sequence[SidPrediction]) -> MetricReport:
    p, r, f = strict_slot_f1(gold, pred)
    return MetricReport(
        slot_precision=p,
        slot_recall=r,
        slot_f1=f,
        intent_accuracy=intent_accuracy(gold, pred),
        fully_correct=fully_correct(gold, pred),
        n_sentences=len(gold),
    )


def las(gold: Sequence[Sentence], pred_heads: Sequence[Sequence[int]], pred_deprels: Sequence[Sequence[str]]) -> float:
    """Labelled attachment score: tokens whose head and relation are both right."""
    _check_lengths(gold, pred_heads)
    _check_lengths(gold, pred_deprels)
    hits = total = 0
    for s, heads, rels in zip(gold, pred_heads, pred_deprels):
        _check_lengths(s.heads, heads, "head")
        _check_lengths(s.deprels, rels, "deprel")
        hits += sum(gh == ph and gr == pr for gh, ph, gr, pr in zip(s.heads, heads, s.deprels, rels))
        total += len(s)
    return _ratio(hits, total)


def pos_accuracy(gold: Sequence[Sentence], pred_tags: Sequence[Sequence[str]]) -> float:
    _check_lengths(gold, pred_tags)
    hits = total = 0
    for s, tags in zip(gold, pred_tags):
        _check_lengths(s.pos_tags, tags, "tag")
        hits += sum(g == p for g, p in zip(s.pos_tags, tags))
        total += len(s)
    return _ratio(hits, total)


def ner_span_f1(gold: Sequence[Sentence], pred_tags: Sequence[Sequence[str]]) -> float:
    return span_prf((s.ner_tags for s in gold), pred_tags)[2]


def masked_perplexity(total_nll: float, n_masked: int) -> float:
    """exp of the mean negative log-likelihood (natural log) per masked token."""
    if n_masked <= 0:
        raise NoMaskedTokens("perplexity needs at least one masked token")
    return math.exp(total_nll / n_masked)


def aggregate_seeds(values: Sequence[float]) -> SeedAggregate:
    """Mean and sample standard deviation (n - 1 denominator) over runs.

    A single run has stdev 0.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no values to aggregate")
    mean = math.fsum(values) / len(values)
    stdev = statistics.stdev(values) if len(values) > 1 else 0.0
    return SeedAggregate(mean=mean, stdev=stdev, n_runs=len(values))
