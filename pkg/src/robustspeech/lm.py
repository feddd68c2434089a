"""Character n-gram language model with add-k smoothing and backoff, used for
shallow fusion during beam decoding. Desk-scale stand-in for an external
word-level LM: trained on transcript text, scores one character at a time.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .text import DEFAULT_CHARSET, normalize_text


class CharNGramLM:
    """Backoff n-gram model over characters.

    Counts are kept at every context length from 0 to order-1. A query uses
    the longest context that was observed in training and falls back to
    shorter ones, ending at the unigram level which is always defined.
    Conditional probabilities are add-k smoothed, so every distribution sums
    to 1 over the character set.
    """

    def __init__(self, order: int = 4, add_k: float = 0.5, charset: str = None):
        if order < 1:
            raise DataError("order must be >= 1")
        if add_k <= 0:
            raise DataError("add_k must be positive for a proper distribution")
        self.order = order
        self.add_k = add_k
        # LM vocabulary: the decodable characters, excluding the CTC blank
        self.charset = charset if charset is not None else DEFAULT_CHARSET[1:]
        self._chars = set(self.charset)
        # counts[m][context][char] with len(context) == m
        self.counts = [dict() for _ in range(order)]

    def train(self, texts) -> "CharNGramLM":
        for text in texts:
            clean = normalize_text(text)
            for i, ch in enumerate(clean):
                if ch not in self._chars:
                    raise DataError(f"character {ch!r} outside the LM character set")
                for m in range(self.order):
                    if i < m:
                        continue
                    context = clean[i - m:i]
                    table = self.counts[m].setdefault(context, {})
                    table[ch] = table.get(ch, 0) + 1
        return self

    def log_prob(self, char: str, context: str) -> float:
        """log P(char | context) using the longest observed context suffix."""
        if char not in self._chars:
            raise DataError(f"character {char!r} outside the LM character set")
        for m in range(min(self.order - 1, len(context)), -1, -1):
            suffix = context[len(context) - m:]
            table = self.counts[m].get(suffix)
            if table is None and m > 0:
                continue
            table = table or {}
            total = sum(table.values())
            smoothed = (table.get(char, 0) + self.add_k) / (total + self.add_k * len(self.charset))
            return float(np.log(smoothed))
        raise AssertionError("unigram level is always reachable")

    def sequence_log_prob(self, text: str) -> float:
        clean = normalize_text(text)
        return sum(self.log_prob(ch, clean[:i]) for i, ch in enumerate(clean))

    def save(self, path) -> None:
        payload = {
            "order": self.order,
            "add_k": self.add_k,
            "charset": self.charset,
            "counts": self.counts,
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path) -> "CharNGramLM":
        path = Path(path)
        if not path.exists():
            raise DataError(f"language model not found: {path}")
        payload = json.loads(path.read_text())
        lm = cls(order=payload["order"], add_k=payload["add_k"], charset=payload["charset"])
        lm.counts = [dict(level) for level in payload["counts"]]
        return lm


def train_lm_from_manifest(manifest, order: int = 4, add_k: float = 0.5) -> CharNGramLM:
    texts = [e.transcript for e in manifest.entries if e.transcript]
    if not texts:
        raise DataError("no transcripts available to train the language model")
    return CharNGramLM(order=order, add_k=add_k).train(texts)
