import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sidlab.corpus import Dataset, Sentence
from sidlab.distance import (
    MisalignedCorpora,
    MissingSlotTags,
    corpus_similarity,
    levenshtein,
    normalized_similarity,
    sentence_similarity,
    slot_similarity,
    slot_values,
)

from oracles import recursive_levenshtein


def sid(words, tags, intent="i"):
    return Sentence.from_words(words.split(), slot_tags=tags.split(), intent=intent)


class TestLevenshtein:
    def test_examples(self):
        assert levenshtein("abc", "abc") == 0
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("", "abc") == 3
        assert levenshtein(["streich", "olle"], ["Lösch", "olle"]) == 1

    def test_exhaustive_against_recursion(self):
        words = [w for n in range(6) for w in itertools.product("abc", repeat=n)]
        for a in words[::7]:
            for b in words:
                assert levenshtein(a, b) == recursive_levenshtein(a, b)

    @given(st.text("abcd", max_size=7), st.text("abcd", max_size=7), st.text("abcd", max_size=7))
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
        assert (levenshtein(a, b) == 0) == (a == b)


class TestSimilarity:
    def test_normalized(self):
        assert normalized_similarity("abc", "abc") == 1.0
        assert normalized_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)
        assert normalized_similarity("", "") == 1.0

    @given(st.text("abAB", max_size=6), st.text("abAB", max_size=6))
    def test_range(self, a, b):
        assert 0.0 <= normalized_similarity(a, b) <= 1.0

    def test_sentence(self):
        a = sid("streich olle wecka", "O B-reference O")
        b = sid("Lösch olle Wegga", "O B-reference O")
        assert sentence_similarity(a, a) == 1.0
        assert sentence_similarity(a, b) == pytest.approx(1 / 3)
        assert sentence_similarity(a, b, "case_insensitive") == pytest.approx(1 / 3)

    def test_case_only_difference(self):
        a, b = sid("Lösch Olle", "O O"), sid("LÖSCH olle", "O O")
        assert sentence_similarity(a, b) == 0.0
        assert sentence_similarity(a, b, "case_insensitive") == 1.0

    def test_slot_values_join_and_strip_prefix(self):
        s = sid("am Montag in da Fruah", "O B-datetime O I-datetime I-datetime")
        assert slot_values(s) == {"datetime": "Montag da Fruah"}

    def test_slot_similarity(self):
        assert slot_similarity(sid("olle", "B-reference"), sid("olle", "B-reference")) == 1.0
        assert slot_similarity(sid("abc", "B-x"), sid("abd", "B-x")) == pytest.approx(2 / 3)
        assert slot_similarity(sid("abc", "B-x"), sid("abc", "B-y")) is None

    def test_slot_similarity_averages_shared_labels(self):
        a = sid("abc xy q", "B-x B-y B-z")
        b = sid("abd xy", "B-x B-y")
        assert slot_similarity(a, b) == pytest.approx((2 / 3 + 1) / 2)

    def test_missing_slot_tags(self):
        with pytest.raises(MissingSlotTags):
            slot_values(Sentence.from_words(["a"]))


def corpora():
    en = Dataset("en", "sid", [sid("delete all alarms", "O B-reference O"), sid("play jazz", "O B-genre")])
    ba = Dataset("de-ba", "sid", [sid("Lösch olle Wecker", "O B-reference O"), sid("spui Jazz", "O B-genre")])
    muc = Dataset("de-muc", "sid", [sid("streich olle wecka", "O B-reference O"), sid("spui jazz", "O B-style")])
    return {"en": en, "de-ba": ba, "de-muc": muc}


class TestCorpusSimilarity:
    def test_self(self):
        c = corpora()
        m = corpus_similarity({"a": c["de-ba"], "b": c["de-ba"]}, "slot_chars")
        assert m.get("a", "b") == 1.0
        m = corpus_similarity({"a": c["de-ba"], "b": c["de-ba"]}, "sentence_words", "case_insensitive")
        assert m.get("a", "b") == 1.0

    def test_hand_computed_pair(self):
        c = corpora()
        m = corpus_similarity(c, "sentence_words", "case_sensitive")
        # 1 - 2/3 for the first pair, 1 - 1/2 for the second
        assert m.get("de-ba", "de-muc") == pytest.approx((1 / 3 + 1 / 2) / 2)
        m = corpus_similarity(c, "sentence_words", "case_insensitive")
        assert m.get("de-ba", "de-muc") == pytest.approx((1 / 3 + 1) / 2)

    def test_unshared_labels_skipped(self):
        c = corpora()
        m = corpus_similarity(c, "slot_chars", "case_sensitive")
        # second sentence pair shares no label, so only "olle" vs "olle" counts
        assert m.get("de-ba", "de-muc") == 1.0
        assert m.counts[("de-ba", "de-muc")] == 1

    def test_pooled_differs_from_per_sentence(self):
        a = Dataset("a", "sid", [sid("abc xy", "B-x B-y"), sid("q", "B-z")])
        b = Dataset("b", "sid", [sid("abd xy", "B-x B-y"), sid("r", "B-z")])
        per = corpus_similarity({"a": a, "b": b}, "slot_chars", aggregation="per_sentence").get("a", "b")
        pooled = corpus_similarity({"a": a, "b": b}, "slot_chars", aggregation="pooled").get("a", "b")
        assert per == pytest.approx(((2 / 3 + 1) / 2 + 0) / 2)
        assert pooled == pytest.approx((2 / 3 + 1 + 0) / 3)

    def test_order_invariance(self):
        c = corpora()
        forward = corpus_similarity(c, "slot_chars", "case_insensitive")
        backward = corpus_similarity(dict(reversed(list(c.items()))), "slot_chars", "case_insensitive")
        for a, b in itertools.combinations(c, 2):
            assert forward.get(a, b) == backward.get(a, b)

    def test_misaligned(self):
        c = corpora()
        short = Dataset("x", "sid", c["en"].sentences[:1])
        with pytest.raises(MisalignedCorpora):
            corpus_similarity({"en": c["en"], "x": short})

    def test_tsv(self):
        text = corpus_similarity(corpora(), "slot_chars").to_tsv()
        lines = text.splitlines()
        assert lines[0] == "# mode: slot_chars case_sensitive"
        assert lines[2] == "\tde-ba\tde-muc"
        assert lines[3].startswith("en\t")
        assert lines[4] == "de-ba\t\t1.000000"

    def test_values_in_unit_interval(self):
        for level in ("sentence_words", "slot_chars"):
            for case in ("case_sensitive", "case_insensitive"):
                m = corpus_similarity(corpora(), level, case)
                assert all(0.0 <= v <= 1.0 for v in m.values.values() if not math.isnan(v))
