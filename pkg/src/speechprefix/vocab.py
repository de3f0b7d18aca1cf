"""Whitespace tokenizer with a corpus-built vocabulary."""
from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "<unk>"
SPECIALS = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)
N_SPECIAL = len(SPECIALS)


def split_words(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:N_SPECIAL]) != SPECIALS:
            raise ValidationError(f"vocabulary must start with the reserved tokens {SPECIALS}")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValidationError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, text: str) -> np.ndarray:
        """``[CLS] w_1 .. w_n [SEP]`` ids; unseen words map to ``<unk>``."""
        ids = [CLS_ID] + [self.stoi.get(w, UNK_ID) for w in split_words(text)] + [SEP_ID]
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    def to_json(self) -> str:
        return json.dumps(self.itos)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.from_json(Path(path).read_text())


def build_vocab(corpus: Sequence[str]) -> Vocab:
    """Reserved ids 0-4, then words by descending frequency, ties lexicographic."""
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for text in corpus for w in split_words(text))
    counts = {w: c for w, c in counts.items() if w not in SPECIALS}
    words = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocab(list(SPECIALS) + words)


def pad_batch(seqs: Sequence[np.ndarray]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out
