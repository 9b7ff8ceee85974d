"""Corpus records and readers/writers for the CoNLL-family formats.

Four formats are supported:

* xSID-style SID files: ``# key: value`` metadata, then ``index<TAB>token<TAB>slot``
  rows (the released four-column layout ``index<TAB>token<TAB>intent<TAB>slot``
  is read too).
* CoNLL-U treebanks (10 columns).
* Two-column NER files (``token<TAB>tag``).
* Plain text for masked language modelling, one sentence per line.

All block formats are separated by blank lines. Input is always UTF-8.
"""

from __future__ import annotations

import io
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, TextIO

TASK_KINDS = ("sid", "ud", "ner", "mlm")
FORMATS = ("xsid", "conllu", "ner", "text")


class CorpusError(ValueError):
    """Base class for data errors. Carries the 1-based block and line number when known."""

    def __init__(self, message: str, block: Optional[int] = None, line: Optional[int] = None):
        self.block = block
        self.line = line
        where = []
        if block is not None:
            where.append(f"block {block}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class MissingIntent(CorpusError):
    pass


class RaggedBlock(CorpusError):
    pass


class BadColumnCount(CorpusError):
    pass


class NonNumericHead(CorpusError):
    pass


class HeadOutOfRange(CorpusError):
    pass


class MalformedTag(CorpusError):
    pass


class EmptyDataset(CorpusError):
    pass


class InvalidSentence(CorpusError):
    pass


class EncodingError(CorpusError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str

    def __post_init__(self):
        if not self.surface:
            raise InvalidSentence("empty token")
        if "\t" in self.surface or "\n" in self.surface or "\r" in self.surface:
            raise InvalidSentence(f"token contains tab or newline: {self.surface!r}")

    @property
    def lowercased(self) -> str:
        return self.surface.casefold()


@dataclass
class Sentence:
    tokens: list[Token]
    id: Optional[str] = None
    slot_tags: Optional[list[str]] = None
    intent: Optional[str] = None
    pos_tags: Optional[list[str]] = None
    heads: Optional[list[int]] = None
    deprels: Optional[list[str]] = None
    ner_tags: Optional[list[str]] = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_words(cls, words: Iterable[str], **kwargs) -> "Sentence":
        return cls(tokens=[Token(w) for w in words], **kwargs)

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        for name in ("slot_tags", "pos_tags", "heads", "deprels", "ner_tags"):
            values = getattr(self, name)
            if values is not None and len(values) != n:
                raise InvalidSentence(f"{name} has {len(values)} entries for {n} tokens")
        if (self.intent is None) != (self.slot_tags is None):
            raise InvalidSentence("intent and slot_tags must be given together")
        if self.heads is not None:
            for i, h in enumerate(self.heads):
                if not 0 <= h <= n:
                    raise HeadOutOfRange(f"head {h} of token {i + 1} outside 0..{n}")
                if h == i + 1:
                    raise HeadOutOfRange(f"token {i + 1} attached to itself")


@dataclass(frozen=True, order=True)
class SlotSpan:
    """Labeled token range; ``start`` and ``end`` are both inclusive."""

    start: int
    end: int
    label: str

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad span bounds {self.start}..{self.end}")
        if not self.label or self.label.startswith(("B-", "I-")):
            raise ValueError(f"bad span label {self.label!r}")


_REQUIRED = {
    "sid": ("slot_tags", "intent"),
    "ud": ("pos_tags", "heads", "deprels"),
    "ner": ("ner_tags",),
    "mlm": (),
}


@dataclass
class Dataset:
    name: str
    task_kind: str
    sentences: list[Sentence] = field(default_factory=list)
    language_tag: str = ""

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        for i, s in enumerate(self.sentences):
            for attr in _REQUIRED[self.task_kind]:
                if getattr(s, attr) is None:
                    raise InvalidSentence(f"{self.task_kind} sentence {i} lacks {attr}")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def subset(self, sentences: list[Sentence], suffix: str = "") -> "Dataset":
        return Dataset(self.name + suffix, self.task_kind, list(sentences), self.language_tag)


# ---------------------------------------------------------------------------
# BIO decoding

_TAG_RE = re.compile(r"^(B|I)-(.+)$")


def decode_bio(tags: Iterable[str]) -> list[SlotSpan]:
    """Decode BIO tags into maximal spans.

    An ``I-x`` that does not continue an open ``x`` span opens a new one,
    as conlleval does.
    """
    spans = []
    start = label = None
    for i, tag in enumerate(tags):
        if tag == "O":
            prefix, lab = "O", None
        else:
            m = _TAG_RE.match(tag)
            if m is None:
                raise MalformedTag(f"malformed BIO tag {tag!r} at position {i}")
            prefix, lab = m.groups()
        continues = prefix == "I" and label == lab
        if label is not None and not continues:
            spans.append(SlotSpan(start, i - 1, label))
            label = None
        if prefix != "O" and not continues:
            start, label = i, lab
    if label is not None:
        spans.append(SlotSpan(start, i, label))
    return spans


def strip_prefix(tag: str) -> Optional[str]:
    """Label of a BIO tag without its B-/I- prefix; None for ``O``."""
    if tag == "O":
        return None
    m = _TAG_RE.match(tag)
    if m is None:
        raise MalformedTag(f"malformed BIO tag {tag!r}")
    return m.group(2)


# ---------------------------------------------------------------------------
# readers


def _blocks(stream: TextIO) -> Iterator[tuple[int, list[tuple[int, str]]]]:
    """Yield (block_number, [(line_number, line), ...]) for blank-line separated blocks."""
    block: list[tuple[int, str]] = []
    number = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if line.strip():
            block.append((lineno, line))
        elif block:
            number += 1
            yield number, block
            block = []
    if block:
        yield number + 1, block


def _comment(line: str, separators: str = ":=") -> tuple[str, str]:
    body = line[1:].strip()
    for sep in separators:
        if sep in body:
            key, _, value = body.partition(sep)
            return key.strip(), value.strip()
    return body, ""


def parse_xsid(stream: TextIO, name: str = "xsid", language_tag: str = "") -> Dataset:
    sentences = []
    for bno, block in _blocks(stream):
        meta: dict[str, str] = {}
        words, tags = [], []
        first_line = block[0][0]
        for lineno, line in block:
            if line.startswith("#"):
                key, value = _comment(line)
                meta[key] = value
                continue
            cols = line.split("\t")
            if len(cols) == 4:
                # released xSID layout repeats the intent in column 3
                cols = [cols[0], cols[1], cols[3]]
            if len(cols) != 3:
                raise BadColumnCount(f"expected 3 tab-separated fields, got {len(cols)}", bno, lineno)
            idx, word, tag = cols
            if not idx.isdigit() or int(idx) != len(words) + 1:
                raise RaggedBlock(f"token index {idx!r}, expected {len(words) + 1}", bno, lineno)
            words.append(word)
            tags.append(tag)
        if not words:
            continue
        if "intent" not in meta:
            raise MissingIntent("block has no '# intent:' entry", bno, first_line)
        intent = meta.pop("intent")
        sent_id = meta.pop("id", None)
        try:
            sentences.append(Sentence.from_words(words, id=sent_id, slot_tags=tags, intent=intent, meta=meta))
        except CorpusError as err:
            raise type(err)(str(err), bno, first_line) from None
    return Dataset(name, "sid", sentences, language_tag)


def parse_conllu(stream: TextIO, name: str = "conllu", language_tag: str = "") -> Dataset:
    sentences = []
    for bno, block in _blocks(stream):
        meta: dict[str, str] = {}
        words, upos, heads, rels = [], [], [], []
        rows = []
        for lineno, line in block:
            if line.startswith("#"):
                key, value = _comment(line, "=:")
                meta[key] = value
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise BadColumnCount(f"expected 10 tab-separated fields, got {len(cols)}", bno, lineno)
            if "-" in cols[0] or "." in cols[0]:
                continue
            if not cols[0].isdigit() or int(cols[0]) != len(words) + 1:
                raise RaggedBlock(f"token id {cols[0]!r}, expected {len(words) + 1}", bno, lineno)
            if not cols[6].isdigit():
                raise NonNumericHead(f"head {cols[6]!r} is not a number", bno, lineno)
            words.append(cols[1])
            upos.append(cols[3])
            heads.append(int(cols[6]))
            rels.append(cols[7])
            rows.append(lineno)
        if not words:
            continue
        for lineno, h in zip(rows, heads):
            if h > len(words):
                raise HeadOutOfRange(f"head {h} exceeds sentence length {len(words)}", bno, lineno)
        sent_id = meta.pop("sent_id", None)
        try:
            sentences.append(
                Sentence.from_words(words, id=sent_id, pos_tags=upos, heads=heads, deprels=rels, meta=meta)
            )
        except CorpusError as err:
            raise type(err)(str(err), bno, block[0][0]) from None
    return Dataset(name, "ud", sentences, language_tag)


def parse_ner_conll(stream: TextIO, name: str = "ner", language_tag: str = "") -> Dataset:
    sentences = []
    for bno, block in _blocks(stream):
        words, tags = [], []
        meta: dict[str, str] = {}
        for lineno, line in block:
            if line.startswith("#") and not words:
                key, value = _comment(line)
                meta[key] = value
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise BadColumnCount(f"expected 2 tab-separated fields, got {len(cols)}", bno, lineno)
            words.append(cols[0])
            tags.append(cols[1])
        if not words:
            continue
        sent_id = meta.pop("id", None)
        try:
            sentences.append(Sentence.from_words(words, id=sent_id, ner_tags=tags, meta=meta))
        except CorpusError as err:
            raise type(err)(str(err), bno, block[0][0]) from None
    return Dataset(name, "ner", sentences, language_tag)


def parse_plaintext(stream: TextIO, name: str = "text", language_tag: str = "") -> Dataset:
    sentences = [Sentence.from_words(line.split()) for line in stream if line.strip()]
    return Dataset(name, "mlm", sentences, language_tag)


PARSERS = {
    "xsid": parse_xsid,
    "conllu": parse_conllu,
    "ner": parse_ner_conll,
    "text": parse_plaintext,
}

KIND_OF_FORMAT = {"xsid": "sid", "conllu": "ud", "ner": "ner", "text": "mlm"}
FORMAT_OF_KIND = {v: k for k, v in KIND_OF_FORMAT.items()}


def guess_format(path: str | Path) -> str:
    name = Path(path).name.lower()
    if name.endswith(".conllu"):
        return "conllu"
    if name.endswith(".txt"):
        return "text"
    if name.endswith((".bio", ".ner", ".tsv")):
        return "ner"
    return "xsid"


def load_dataset(
    path: str | Path, fmt: Optional[str] = None, name: Optional[str] = None, language_tag: str = ""
) -> Dataset:
    """Read a corpus file. Bytes that are not valid UTF-8 raise EncodingError."""
    path = Path(path)
    fmt = fmt or guess_format(path)
    if fmt not in PARSERS:
        raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as err:
        line = raw[: err.start].count(b"\n") + 1
        raise EncodingError(f"{path}: invalid UTF-8 byte at offset {err.start}", line=line) from None
    if text.startswith("﻿"):
        text = text[1:]
    return PARSERS[fmt](io.StringIO(text), name=name or path.stem, language_tag=language_tag)


# ---------------------------------------------------------------------------
# writers (inverse of the readers, used for round-trips and prediction files)


def _meta_lines(meta: dict[str, str], sep: str) -> list[str]:
    return [f"# {k}{sep}{v}" if v else f"# {k}" for k, v in meta.items()]


def format_xsid(dataset: Dataset) -> str:
    out = []
    for s in dataset:
        lines = []
        if s.id is not None:
            lines.append(f"# id: {s.id}")
        lines += _meta_lines(s.meta, ": ")
        lines.append(f"# intent: {s.intent}")
        lines += [f"{i}\t{w}\t{t}" for i, (w, t) in enumerate(zip(s.words, s.slot_tags), start=1)]
        out.append("\n".join(lines) + "\n")
    return "\n".join(out)


def format_conllu(dataset: Dataset) -> str:
    out = []
    for s in dataset:
        lines = []
        if s.id is not None:
            lines.append(f"# sent_id = {s.id}")
        lines += _meta_lines(s.meta, " = ")
        for i, w in enumerate(s.words):
            cols = [str(i + 1), w, "_", s.pos_tags[i], "_", "_", str(s.heads[i]), s.deprels[i], "_", "_"]
            lines.append("\t".join(cols))
        out.append("\n".join(lines) + "\n")
    return "\n".join(out)


def format_ner_conll(dataset: Dataset) -> str:
    out = []
    for s in dataset:
        lines = [f"# id: {s.id}"] if s.id is not None else []
        lines += _meta_lines(s.meta, ": ")
        lines += [f"{w}\t{t}" for w, t in zip(s.words, s.ner_tags)]
        out.append("\n".join(lines) + "\n")
    return "\n".join(out)


def format_plaintext(dataset: Dataset) -> str:
    return "".join(" ".join(s.words) + "\n" for s in dataset)


WRITERS = {
    "xsid": format_xsid,
    "conllu": format_conllu,
    "ner": format_ner_conll,
    "text": format_plaintext,
}


# ---------------------------------------------------------------------------
# splitting


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle deterministically under ``seed`` and cut at floor(n * train_fraction)."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}")
    if not dataset.sentences:
        raise EmptyDataset(f"cannot split empty dataset {dataset.name!r}")
    order = list(range(len(dataset)))
    random.Random(seed).shuffle(order)
    # n * f can land just under an integer (0.29 * 100); round off the float noise first
    cut = math.floor(round(len(order) * train_fraction, 9))
    train = [dataset.sentences[i] for i in order[:cut]]
    dev = [dataset.sentences[i] for i in order[cut:]]
    return dataset.subset(train, ".train"), dataset.subset(dev, ".dev")
