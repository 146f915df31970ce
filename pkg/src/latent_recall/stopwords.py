"""Stop-word list loading for the uninformative-token filter."""

from __future__ import annotations

import functools
from importlib import resources
from pathlib import Path


def parse_stopwords(text: str) -> frozenset[str]:
    """Parse stop-word file content: one word per line, '#' starts a comment."""
    words = set()
    for line in text.splitlines():
        word = line.split("#", 1)[0].strip().lower()
        if word:
            words.add(word)
    return frozenset(words)


def load_stopword_file(path: str | Path) -> frozenset[str]:
    """Read a UTF-8 stop-word file from disk."""
    return parse_stopwords(Path(path).read_text(encoding="utf-8"))


@functools.lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    """The list of common English function words shipped with the package."""
    text = resources.files("latent_recall").joinpath("data/stopwords.txt").read_text("utf-8")
    return parse_stopwords(text)
