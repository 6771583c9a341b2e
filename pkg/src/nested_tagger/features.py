"""Hashed sparse token features: character n-grams and word shape over a +/-2 window."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PAD_LEFT, PAD_RIGHT = "<s>", "</s>"


def word_shape(word: str) -> str:
    """Collapsed character classes: ``Vaugirard`` -> ``Xx``, ``14`` -> ``d``, ``d'`` -> ``x'``."""
    out = []
    for ch in word:
        c = "X" if ch.isupper() else "x" if ch.isalpha() else "d" if ch.isdigit() else ch
        if not out or out[-1] != c:
            out.append(c)
    return "".join(out)


def char_ngrams(word: str, lo: int = 2, hi: int = 4) -> list[str]:
    padded = f"<{word.lower()}>"
    return [padded[i:i + n] for n in range(lo, hi + 1) for i in range(len(padded) - n + 1)]


@dataclass
class FeatureHasher:
    n_features: int = 1 << 16
    seed: int = 0
    window: int = 2
    ngram_range: tuple[int, int] = (2, 4)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def params(self) -> dict:
        return {"n_features": self.n_features, "seed": self.seed, "window": self.window,
                "ngram_range": list(self.ngram_range)}

    def _hash(self, text: str) -> int:
        return zlib.crc32(text.encode("utf-8"), self.seed) % self.n_features

    def _word_ids(self, word: str, offset: int) -> np.ndarray:
        key = (word, offset)
        ids = self._cache.get(key)
        if ids is None:
            if word in (PAD_LEFT, PAD_RIGHT):
                feats = [f"{offset}|pad|{word}"]
            else:
                feats = [f"{offset}|shape|{word_shape(word)}"]
                feats += [f"{offset}|ng|{g}" for g in char_ngrams(word, *self.ngram_range)]
            ids = np.array(sorted({self._hash(f) for f in feats}), dtype=np.int64)
            self._cache[key] = ids
        return ids

    def token_features(self, words: Sequence[str], i: int) -> np.ndarray:
        parts = []
        for off in range(-self.window, self.window + 1):
            j = i + off
            w = words[j] if 0 <= j < len(words) else (PAD_LEFT if j < 0 else PAD_RIGHT)
            parts.append(self._word_ids(w, off))
        return np.concatenate(parts)

    def featurize(self, sentences: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR layout over all tokens: ``(indptr, indices, sentence_offsets)``."""
        rows = []
        offsets = np.zeros(len(sentences) + 1, dtype=np.int64)
        for s, words in enumerate(sentences):
            for i in range(len(words)):
                rows.append(self.token_features(words, i))
            offsets[s + 1] = offsets[s] + len(words)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        if rows:
            np.cumsum([len(r) for r in rows], out=indptr[1:])
        indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        return indptr, indices, offsets
