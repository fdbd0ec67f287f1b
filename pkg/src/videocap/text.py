"""Tokenisation shared by the vocabulary and the metrics."""

from __future__ import annotations

import re
import string

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()
