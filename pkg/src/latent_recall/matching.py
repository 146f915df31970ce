"""String-overlap judgments: token-level hit matching and full-answer accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .types import normalize_text


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    shared_len: int
    matched_alias: int | None


def longest_common_substring_len(a: str, b: str) -> int:
    """Length of the longest contiguous character run present in both strings.

    Operates on Unicode scalar values; callers normalize beforehand. Run
    lengths are carried in a dict keyed by position in the longer string,
    so cost scales with the number of matching character pairs rather than
    len(a) * len(b).
    """
    if not a or not b:
        return 0
    if len(b) < len(a):
        a, b = b, a
    positions: dict[str, list[int]] = {}
    for j, ch in enumerate(b):
        positions.setdefault(ch, []).append(j)
    best = 0
    prev: dict[int, int] = {}
    for ch in a:
        cur: dict[int, int] = {}
        for j in positions.get(ch, ()):
            run = prev.get(j - 1, 0) + 1
            cur[j] = run
            if run > best:
                best = run
        prev = cur
    return best


def token_matches(token: str, answers: Sequence[str], min_match_len: int) -> MatchResult:
    """Decide whether a candidate token counts as a hit for any accepted answer.

    Both sides are normalized first. A token matches an answer when they
    share a contiguous run of at least min_match_len characters. Answers
    whose normalized form is shorter than min_match_len would be
    unmatchable under that rule, so they require exact equality with the
    normalized token instead. shared_len reports the longest overlap seen
    across all answers; matched_alias is the index of the first answer
    that matched.
    """
    if not answers:
        raise ValueError("answers must be non-empty")
    if min_match_len < 1:
        raise ValueError("min_match_len must be >= 1")
    norm_token = normalize_text(token)
    best_shared = 0
    matched_alias: int | None = None
    for idx, alias in enumerate(answers):
        norm_alias = normalize_text(alias)
        shared = longest_common_substring_len(norm_token, norm_alias)
        if shared > best_shared:
            best_shared = shared
        if matched_alias is None:
            if len(norm_alias) < min_match_len:
                hit = norm_token == norm_alias
            else:
                hit = shared >= min_match_len
            if hit:
                matched_alias = idx
    return MatchResult(matched=matched_alias is not None, shared_len=best_shared, matched_alias=matched_alias)


def answer_correct(final_answer: str, answers: Sequence[str], min_match_len: int) -> bool:
    """Judge a full generated answer against the accepted answers.

    Containment of any normalized answer inside the normalized generation
    is the primary rule. A longest-common-substring fallback covers
    generations truncated mid-word, but only when the overlap spans the
    shortest accepted answer entirely.
    """
    if not answers:
        raise ValueError("answers must be non-empty")
    norm_answer = normalize_text(final_answer)
    norm_aliases = [normalize_text(a) for a in answers]
    if any(alias and alias in norm_answer for alias in norm_aliases):
        return True
    shortest = min(len(alias) for alias in norm_aliases)
    result = token_matches(final_answer, answers, min_match_len)
    return result.matched and result.shared_len >= shortest
