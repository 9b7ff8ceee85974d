import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sidlab.corpus import Sentence
from sidlab.metrics import (
    LengthMismatch,
    NoMaskedTokens,
    SidPrediction,
    aggregate_seeds,
    fully_correct,
    intent_accuracy,
    las,
    masked_perplexity,
    ner_span_f1,
    pos_accuracy,
    score_sid,
    strict_slot_f1,
)

from oracles import brute_force_fully_correct, brute_force_prf


def sid(tags, intent="i"):
    return Sentence.from_words([f"w{k}" for k in range(len(tags))], slot_tags=list(tags), intent=intent)


def pred(tags, intent="i"):
    return SidPrediction(list(tags), intent)


def random_tags(rng, n, labels):
    alphabet = ["O"] + [f"{p}-{l}" for l in labels for p in "BI"]
    return [rng.choice(alphabet) for _ in range(n)]


class TestSlotF1:
    def test_identical(self):
        g = [sid(["B-x", "I-x", "O"])]
        assert strict_slot_f1(g, [pred(["B-x", "I-x", "O"])]) == (1.0, 1.0, 1.0)

    def test_boundary_miss(self):
        g = [sid(["O", "B-x", "I-x"])]
        assert strict_slot_f1(g, [pred(["O", "B-x", "O"])]) == (0.0, 0.0, 0.0)

    def test_half(self):
        g = [sid(["B-a", "O", "B-b"])]
        assert strict_slot_f1(g, [pred(["B-a", "O", "B-c"])]) == (0.5, 0.5, 0.5)

    def test_both_empty(self):
        assert strict_slot_f1([sid(["O"])], [pred(["O"])]) == (1.0, 1.0, 1.0)

    def test_gold_empty(self):
        p, r, f = strict_slot_f1([sid(["O"])], [pred(["B-x"])])
        assert (p, f) == (0.0, 0.0)

    def test_pred_empty(self):
        p, r, f = strict_slot_f1([sid(["B-x"])], [pred(["O"])])
        assert (r, f) == (0.0, 0.0)

    def test_sentence_count_mismatch(self):
        with pytest.raises(LengthMismatch):
            strict_slot_f1([sid(["O"])], [])

    def test_tag_count_mismatch(self):
        with pytest.raises(LengthMismatch):
            strict_slot_f1([sid(["O", "O"])], [pred(["O"])])

    def test_permutation_invariant(self):
        rng = random.Random(5)
        gold = [sid(random_tags(rng, rng.randint(1, 6), "ab")) for _ in range(30)]
        preds = [pred(random_tags(rng, len(g), "ab")) for g in gold]
        order = list(range(30))
        rng.shuffle(order)
        assert strict_slot_f1(gold, preds) == pytest.approx(
            strict_slot_f1([gold[i] for i in order], [preds[i] for i in order]), abs=1e-15
        )


class TestIntentAndFullyCorrect:
    def test_accuracy(self):
        g = [sid(["O"], x) for x in "abcd"]
        assert intent_accuracy(g, [pred(["O"], x) for x in "abcd"]) == 1.0
        assert intent_accuracy(g, [pred(["O"], "z") for _ in range(4)]) == 0.0
        assert intent_accuracy(g, [pred(["O"], x) for x in "abcz"]) == 0.75

    def test_boundary_off_not_counted(self):
        assert fully_correct([sid(["B-x", "I-x"])], [pred(["B-x", "O"])]) == 0.0

    def test_perfect(self):
        g = [sid(["B-x", "I-x"], "a"), sid(["O"], "b")]
        assert fully_correct(g, [pred(["B-x", "I-x"], "a"), pred(["O"], "b")]) == 1.0

    def test_repaired_equivalence(self):
        assert fully_correct([sid(["O", "I-x"])], [pred(["O", "B-x"])]) == 1.0

    def test_wrong_intent(self):
        assert fully_correct([sid(["O"], "a")], [pred(["O"], "b")]) == 0.0

    @given(st.integers(0, 10**6))
    def test_fully_correct_at_most_accuracy(self, seed):
        rng = random.Random(seed)
        gold = [sid(random_tags(rng, rng.randint(1, 4), "ab"), rng.choice("xy")) for _ in range(8)]
        preds = [pred(random_tags(rng, len(g), "ab"), rng.choice("xy")) for g in gold]
        assert fully_correct(gold, preds) <= intent_accuracy(gold, preds)

    def test_score_sid_identity(self):
        rng = random.Random(1)
        gold = [sid(random_tags(rng, 5, "abc"), rng.choice("xy")) for _ in range(10)]
        r = score_sid(gold, [pred(g.slot_tags, g.intent) for g in gold])
        assert (r.slot_precision, r.slot_recall, r.slot_f1, r.intent_accuracy, r.fully_correct) == (1, 1, 1, 1, 1)
        assert r.n_sentences == 10


def test_oracle_random_instances():
    rng = random.Random(2024)
    for _ in range(1000):
        labels = "abc"[: rng.randint(1, 3)]
        n_sent = rng.randint(1, 4)
        gold_tags = [random_tags(rng, rng.randint(1, 6), labels) for _ in range(n_sent)]
        pred_tags = [random_tags(rng, len(g), labels) for g in gold_tags]
        intents = [(rng.choice("xy"), rng.choice("xy")) for _ in range(n_sent)]
        gold = [sid(t, i) for t, (i, _) in zip(gold_tags, intents)]
        preds = [pred(t, i) for t, (_, i) in zip(pred_tags, intents)]
        assert strict_slot_f1(gold, preds) == pytest.approx(brute_force_prf(gold_tags, pred_tags), abs=1e-12)
        expected_fc = brute_force_fully_correct(
            [(t, i) for t, (i, _) in zip(gold_tags, intents)], [(t, i) for t, (_, i) in zip(pred_tags, intents)]
        )
        assert fully_correct(gold, preds) == pytest.approx(expected_fc, abs=1e-12)


class TestAux:
    def _ud(self):
        return [Sentence.from_words(["a", "b"], pos_tags=["X", "Y"], heads=[0, 1], deprels=["root", "dep"])]

    def test_las(self):
        g = self._ud()
        assert las(g, [[0, 1]], [["root", "dep"]]) == 1.0
        assert las(g, [[0, 1]], [["x", "x"]]) == 0.0
        assert las(g, [[0, 0]], [["root", "dep"]]) == 0.5

    def test_las_mismatch(self):
        with pytest.raises(LengthMismatch):
            las(self._ud(), [[0]], [["root"]])

    def test_pos(self):
        g = [Sentence.from_words(["a", "b", "c"], pos_tags=["X", "Y", "Z"], heads=[0, 1, 1], deprels=["r"] * 3)]
        assert pos_accuracy(g, [["X", "Y", "Z"]]) == 1.0
        assert pos_accuracy(g, [["A", "A", "A"]]) == 0.0
        assert pos_accuracy(g, [["X", "Y", "A"]]) == pytest.approx(2 / 3)

    def test_ner(self):
        g = [Sentence.from_words(["a", "b"], ner_tags=["B-PER", "I-PER"])]
        assert ner_span_f1(g, [["B-PER", "I-PER"]]) == 1.0
        assert ner_span_f1(g, [["B-PER", "O"]]) == 0.0

    def test_perplexity(self):
        assert masked_perplexity(0.0, 5) == 1.0
        assert masked_perplexity(3 * math.log(2), 3) == pytest.approx(2.0)
        assert masked_perplexity(4 * math.log(17), 4) == pytest.approx(17.0)
        with pytest.raises(NoMaskedTokens):
            masked_perplexity(1.0, 0)


class TestAggregate:
    def test_constant(self):
        a = aggregate_seeds([1, 1, 1])
        assert (a.mean, a.stdev, a.n_runs) == (1, 0, 3)

    def test_pair(self):
        assert aggregate_seeds([0, 1]).mean == 0.5

    def test_single_run(self):
        assert aggregate_seeds([0.7]).stdev == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_seeds([])

    def test_three_runs_against_exact_arithmetic(self):
        values = [Fraction("73.5"), Fraction("76.6"), Fraction("78.6")]
        mean = sum(values) / 3
        var = sum((v - mean) ** 2 for v in values) / 2
        a = aggregate_seeds([73.5, 76.6, 78.6])
        assert a.mean == pytest.approx(float(mean), abs=1e-12)
        assert a.stdev == pytest.approx(math.sqrt(float(var)), abs=1e-12)
        assert round(a.mean, 4) == 76.2333
        assert round(a.stdev, 4) == 2.5697
