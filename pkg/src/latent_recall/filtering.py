"""Uninformative-token and uninformative-response classification.

Token rules run in a fixed order so every verdict carries exactly one
deterministic reason: empty first, then the configured prefixes, then the
minimum length, then stop words.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .types import MetricConfig, normalize_text

REASON_NONE = "none"
REASON_EMPTY = "empty"
REASON_UNS_PREFIX = "uns_prefix"
REASON_TOO_SHORT = "too_short"
REASON_STOPWORD_ONLY = "stopword_only"

RESPONSE_INFORMATIVE = "informative"
RESPONSE_UNINFORMATIVE = "uninformative"


@dataclass(frozen=True)
class FilterVerdict:
    uninformative: bool
    reason: str

    def __post_init__(self) -> None:
        if self.uninformative != (self.reason != REASON_NONE):
            raise ValueError(f"verdict/reason mismatch: {self.uninformative}, {self.reason!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"uninformative": self.uninformative, "reason": self.reason}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FilterVerdict":
        return cls(uninformative=data["uninformative"], reason=data["reason"])


def is_uninformative_token(token: str, config: MetricConfig) -> FilterVerdict:
    """Classify one candidate token against the filter rules, in order.

    After normalization the token is uninformative when it is empty, when
    it starts with a configured prefix ("uns" by default, catching
    "unsure" in any casing), when it is shorter than min_token_len, or
    when every whitespace-delimited word is a stop word.
    """
    text = normalize_text(token)
    if not text:
        return FilterVerdict(True, REASON_EMPTY)
    if any(text.startswith(prefix) for prefix in config.uninformative_prefixes):
        return FilterVerdict(True, REASON_UNS_PREFIX)
    if len(text) < config.min_token_len:
        return FilterVerdict(True, REASON_TOO_SHORT)
    if all(word in config.stopword_list for word in text.split()):
        return FilterVerdict(True, REASON_STOPWORD_ONLY)
    return FilterVerdict(False, REASON_NONE)


def has_consecutive_repetition(
    text: str,
    max_period: int,
    min_repeats: int,
    min_coverage: float,
) -> bool:
    """True when a short block repeated back to back dominates the text.

    A block of length p repeated r times consecutively qualifies when
    r >= min_repeats and the repeated region (r * p characters) covers at
    least min_coverage of the whole text. Implemented as one pass per
    period over self-comparisons text[i] == text[i - p]; a run of q equal
    comparisons corresponds to r = (q + p) // p full repeats.
    """
    n = len(text)
    for period in range(1, min(max_period, n) + 1):
        run = 0
        for i in range(period, n):
            if text[i] == text[i - period]:
                run += 1
                continue
            if _run_dominates(run, period, n, min_repeats, min_coverage):
                return True
            run = 0
        if _run_dominates(run, period, n, min_repeats, min_coverage):
            return True
    return False


def _run_dominates(run: int, period: int, n: int, min_repeats: int, min_coverage: float) -> bool:
    repeats = (run + period) // period
    return repeats >= min_repeats and repeats * period >= min_coverage * n


def classify_response(final_answer: str, config: MetricConfig) -> str:
    """Sort a full response into informative versus uninformative.

    Uninformative responses are empty strings, anything opening with a
    configured prefix (the "unsure" convention, any casing or suffix), and
    answers dominated by consecutive repetition of a short block.
    """
    text = normalize_text(final_answer)
    if not text:
        return RESPONSE_UNINFORMATIVE
    if any(text.startswith(prefix) for prefix in config.uninformative_prefixes):
        return RESPONSE_UNINFORMATIVE
    if has_consecutive_repetition(
        text,
        config.repetition_max_period,
        config.repetition_min_repeats,
        config.repetition_min_coverage,
    ):
        return RESPONSE_UNINFORMATIVE
    return RESPONSE_INFORMATIVE
