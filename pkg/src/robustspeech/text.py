"""Text normalization and the character vocabulary used by the CTC head.

Scoring and label preparation share one normalization: uppercase, drop
punctuation except apostrophes (replaced by space so hyphenated words split),
collapse whitespace.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import DataError

_KEEP = re.compile(r"[^A-Z' ]+")
_SPACES = re.compile(r"\s+")

# blank first, then space, apostrophe, letters
DEFAULT_CHARSET = "-" + " '" + "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def normalize_text(text: str) -> str:
    """Uppercase, strip punctuation except apostrophes, collapse whitespace."""
    text = text.upper()
    text = _KEEP.sub(" ", text)
    return _SPACES.sub(" ", text).strip()


@dataclass(frozen=True)
class Vocabulary:
    """Ordered character set; index 0 is the CTC blank."""

    chars: str = DEFAULT_CHARSET
    blank: int = 0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise DataError("vocabulary has duplicate characters")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def text_chars(self) -> str:
        """Characters that can appear in transcripts (blank excluded)."""
        return self.chars[:self.blank] + self.chars[self.blank + 1:]

    def encode(self, text: str) -> list[int]:
        """Normalized text -> label indices. Unknown characters are an error."""
        text = normalize_text(text)
        try:
            return [self._index[c] for c in text]
        except KeyError as exc:
            raise DataError(f"character {exc} not in vocabulary") from exc

    def decode(self, indices) -> str:
        """Label indices -> text, skipping blanks."""
        return "".join(self.chars[i] for i in indices if i != self.blank)
