from __future__ import annotations

import re
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

CLS, PAD, UNK = 0, 1, 2
SPECIALS = ("[CLS]", "[PAD]", "[UNK]")

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def tokenize(text: str) -> list[str]:
    """Lowercase word-level split; punctuation marks become their own tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Dense token table; ids 0, 1, 2 are CLS, PAD and UNK."""

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be distinct")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        words = set()
        for text in texts:
            words.update(tokenize(text))
        words.difference_update(SPECIALS)
        return cls(list(SPECIALS) + sorted(words))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, text: str) -> list[int]:
        return [self.index.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids: Iterable[int], skip_pad: bool = True) -> str:
        return " ".join(self.tokens[i] for i in ids if not (skip_pad and i == PAD))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    label: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not self.ids:
            raise ValueError("token sequence must be non-empty")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    def __len__(self):
        return len(self.ids)


def pad_ids(seqs, length=None):
    """Right-pad id lists with PAD; returns (ids, mask) arrays of shape (B, length)."""
    seqs = [tuple(s.ids if isinstance(s, TokenSequence) else s) for s in seqs]
    length = max(len(s) for s in seqs) if length is None else length
    ids = np.full((len(seqs), length), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), length))
    for b, s in enumerate(seqs):
        if len(s) > length:
            raise ValueError(f"sequence of length {len(s)} does not fit padded length {length}")
        ids[b, : len(s)] = s
        mask[b, : len(s)] = 1.0
    return ids, mask
