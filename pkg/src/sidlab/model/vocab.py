from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

UNK, PAD, MASK = "<unk>", "<pad>", "<mask>"
RESERVED = (UNK, PAD, MASK)


@dataclass
class Vocab:
    """Dense string<->index map.

    Token vocabularies start with the reserved entries UNK=0, PAD=1, MASK=2;
    label vocabularies have none.
    """

    itos: list[str]
    reserved: bool = False
    stoi: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.reserved and tuple(self.itos[:3]) != RESERVED:
            raise ValueError("token vocabulary must start with the reserved entries")
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def tokens(cls, words: Iterable[str], min_count: int = 1) -> "Vocab":
        counts = Counter(words)
        kept = sorted(w for w, c in counts.items() if c >= min_count and w not in RESERVED)
        return cls(list(RESERVED) + kept, reserved=True)

    @classmethod
    def labels(cls, labels: Iterable[str]) -> "Vocab":
        return cls(sorted(set(labels)))

    @property
    def unk(self) -> int:
        return 0

    @property
    def mask(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, item: str) -> bool:
        return item in self.stoi

    def index(self, item: str) -> int:
        if item in self.stoi:
            return self.stoi[item]
        if self.reserved:
            return 0
        raise KeyError(f"unknown label {item!r}")

    def encode(self, items: Iterable[str]) -> list[int]:
        return [self.index(x) for x in items]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in indices]
