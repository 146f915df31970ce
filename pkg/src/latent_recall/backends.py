"""Completion backends: a live HTTP client, a scripted mock, and logit dumps.

All backends speak the same contract: one greedy completion per prompt at
temperature 0.0 plus the top-k candidate tokens at the probed decoding
step, packaged as an AnswerDistribution. Log-probabilities are natural-log
everywhere inside the package; conversion happens at the ingestion
boundary.
"""

from __future__ import annotations

import abc
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import httpx

from .dataset import DatasetError
from .types import AnswerDistribution, TokenCandidate, rank_candidates

logger = logging.getLogger(__name__)

API_KEY_ENV = "LATENT_RECALL_API_KEY"
COMPLETIONS_PATH = "/v1/completions"
LN10 = math.log(10.0)


class BackendError(Exception):
    """Transport failure or server-side error after retries were exhausted."""


class WireSchemaError(BackendError):
    """The server's response does not satisfy the completions wire schema."""


class CapabilityError(BackendError):
    """The backend cannot serve the requested number of top logprobs."""


class LMBackend(abc.ABC):
    """A completion source returning greedy text plus top-k candidates.

    max_top_logprobs is the declared candidate-depth capability (None for
    undeclared); supports_echo reports whether the backend can echo prompt
    tokens back with logprobs.
    """

    max_top_logprobs: int | None = None
    supports_echo: bool = False

    @abc.abstractmethod
    def complete(
        self, prompt: str, top_k: int, max_tokens: int, record_id: str = ""
    ) -> AnswerDistribution:
        """Run one greedy completion and return the probed distribution."""

    def describe(self) -> dict[str, Any]:
        """Backend descriptor embedded in run manifests."""
        return {"kind": self.__class__.__name__}


class HttpBackend(LMBackend):
    """Client for OpenAI-compatible completion endpoints with top-logprob support.

    Requests are always greedy (temperature serialized as 0.0). Transport
    failures and 5xx responses are retried with exponential backoff; 4xx
    responses fail immediately. Responses are validated strictly against
    the wire schema: a missing logprobs block or fewer top-logprob entries
    than requested is an error, never a silent truncation.
    """

    def __init__(
        self,
        endpoint: str,
        max_top_logprobs: int | None = None,
        probe_position: int = 0,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        logprob_base: str = "e",
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        if probe_position < 0:
            raise ValueError("probe_position must be >= 0")
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if logprob_base not in ("e", "10"):
            raise ValueError("logprob_base must be 'e' or '10'")
        self._endpoint = endpoint.rstrip("/")
        self.max_top_logprobs = max_top_logprobs
        self._probe_position = probe_position
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._logprob_base = logprob_base
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = client or httpx.Client(timeout=timeout)

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "http",
            "endpoint": self._endpoint,
            "probe_position": self._probe_position,
            "logprob_base": self._logprob_base,
        }

    def complete(
        self, prompt: str, top_k: int, max_tokens: int, record_id: str = ""
    ) -> AnswerDistribution:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.max_top_logprobs is not None and top_k > self.max_top_logprobs:
            raise CapabilityError(
                f"requested top_k={top_k} exceeds the backend's "
                f"max_top_logprobs={self.max_top_logprobs}"
            )
        body = {
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0.0,
            "logprobs": top_k,
        }
        payload = json.dumps(body, sort_keys=True, ensure_ascii=False).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = self._endpoint + COMPLETIONS_PATH
        data = self._post_with_retry(url, payload, headers)
        return self._parse_completion(data, top_k, record_id)

    def _post_with_retry(self, url: str, payload: bytes, headers: dict[str, str]) -> Any:
        last_error = "no attempt made"
        for attempt in range(1, self._max_attempts + 1):
            try:
                response = self._client.post(url, content=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if 200 <= response.status_code < 300:
                    if attempt > 1:
                        logger.warning(
                            "completion request to %s succeeded after %d retries",
                            url,
                            attempt - 1,
                        )
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise WireSchemaError(f"response from {url} is not JSON: {exc}") from exc
                excerpt = response.text[:200]
                if response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}: {excerpt}"
                else:
                    raise BackendError(f"HTTP {response.status_code} from {url}: {excerpt}")
            if attempt < self._max_attempts:
                delay = self._backoff_base * (2 ** (attempt - 1))
                logger.warning(
                    "completion request to %s failed (%s); retry %d/%d in %.2fs",
                    url,
                    last_error,
                    attempt,
                    self._max_attempts - 1,
                    delay,
                )
                time.sleep(delay)
        raise BackendError(f"request to {url} failed after {self._max_attempts} attempts: {last_error}")

    def _to_natural_log(self, value: float) -> float:
        if self._logprob_base == "10":
            return value * LN10
        return value

    def _parse_completion(self, data: Any, top_k: int, record_id: str) -> AnswerDistribution:
        try:
            choice = data["choices"][0]
            text = choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise WireSchemaError(f"response has no usable choices: {exc!r}") from exc
        if not isinstance(text, str):
            raise WireSchemaError("choice text must be a string")
        logprobs = choice.get("logprobs")
        if not isinstance(logprobs, dict):
            raise WireSchemaError("response is missing the logprobs block")
        top = logprobs.get("top_logprobs")
        if not isinstance(top, list):
            raise WireSchemaError("logprobs block is missing top_logprobs")
        if len(top) <= self._probe_position:
            raise WireSchemaError(
                f"top_logprobs covers {len(top)} positions; "
                f"probe position {self._probe_position} is unavailable"
            )
        entry = top[self._probe_position]
        if not isinstance(entry, dict) or not entry:
            raise WireSchemaError("top_logprobs entry must be a non-empty token->logprob object")
        pairs = []
        for token, lp in entry.items():
            if not isinstance(token, str) or isinstance(lp, bool) or not isinstance(lp, (int, float)):
                raise WireSchemaError(f"malformed top_logprobs pair: {token!r}: {lp!r}")
            pairs.append((token, self._to_natural_log(float(lp))))
        if len(pairs) < top_k:
            raise WireSchemaError(
                f"server returned {len(pairs)} top logprobs but {top_k} were requested"
            )
        try:
            candidates = rank_candidates(pairs)[:top_k]
        except ValueError as exc:
            raise WireSchemaError(f"invalid candidate data: {exc}") from exc
        return AnswerDistribution(
            record_id=record_id,
            probe_position=self._probe_position,
            candidates=candidates,
            greedy_completion=text,
        )


@dataclass(frozen=True)
class ScriptedReply:
    """One scripted completion: greedy text, candidate list, continuation map."""

    greedy_answer: str
    candidates: tuple[tuple[str, float], ...]
    continuations: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple((t, float(lp)) for t, lp in self.candidates))
        if not self.candidates:
            raise ValueError("scripted reply needs at least one candidate")
        tokens = [t for t, _ in self.candidates]
        if len(set(tokens)) != len(tokens):
            raise ValueError("scripted candidates must have unique token texts")
        for (tok_a, lp_a), (tok_b, lp_b) in zip(self.candidates, self.candidates[1:]):
            if lp_b > lp_a or (lp_b == lp_a and tok_b < tok_a):
                raise ValueError("scripted candidates must be sorted by logprob desc, token asc")
        if any(lp > 0 for _, lp in self.candidates):
            raise ValueError("scripted logprobs must be <= 0")
        unknown = set(self.continuations) - set(tokens)
        if unknown:
            raise ValueError(f"continuation keys are not candidate tokens: {sorted(unknown)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "greedy_answer": self.greedy_answer,
            "candidates": [{"token": t, "logprob": lp} for t, lp in self.candidates],
            "continuations": dict(self.continuations),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedReply":
        return cls(
            greedy_answer=data["greedy_answer"],
            candidates=tuple((c["token"], c["logprob"]) for c in data["candidates"]),
            continuations=dict(data.get("continuations", {})),
        )


@dataclass(frozen=True)
class GapModelSpec:
    """Scripted backend behavior: per-prompt replies plus a default reply.

    The continuation map makes the recovery re-prompt testable offline:
    querying a scripted prompt concatenated with one of its candidate
    tokens yields the mapped continuation text.
    """

    default: ScriptedReply
    scripts: dict[str, ScriptedReply] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "default": self.default.to_dict(),
            "scripts": [
                {"prompt": prompt, **reply.to_dict()} for prompt, reply in self.scripts.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GapModelSpec":
        scripts = {}
        for entry in data.get("scripts", []):
            prompt = entry["prompt"]
            if prompt in scripts:
                raise ValueError(f"duplicate scripted prompt: {prompt!r}")
            scripts[prompt] = ScriptedReply.from_dict(entry)
        return cls(default=ScriptedReply.from_dict(data["default"]), scripts=scripts)


def load_gap_spec(path: str | Path) -> GapModelSpec:
    """Load a scripted-backend spec from its JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read backend spec {path}: {exc}") from exc
    except ValueError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return GapModelSpec.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: invalid backend spec: {exc}") from exc


class MockBackend(LMBackend):
    """Deterministic scripted backend for tests and offline simulation.

    Prompts are matched exactly against the script table; a prompt equal to
    a scripted prompt plus one of its candidate tokens returns the mapped
    continuation (the recovery re-prompt shape); anything else gets the
    default reply. Pure and lock-free, so safe under any parallelism.
    """

    supports_echo = False

    def __init__(self, spec: GapModelSpec, probe_position: int = 0) -> None:
        if probe_position < 0:
            raise ValueError("probe_position must be >= 0")
        self._spec = spec
        self._probe_position = probe_position
        self._continuation_lookup: dict[str, str] = {}
        for prompt, reply in spec.scripts.items():
            for token, continuation in reply.continuations.items():
                self._continuation_lookup[prompt + token] = continuation
        depths = [len(spec.default.candidates)] + [len(r.candidates) for r in spec.scripts.values()]
        self.max_top_logprobs = min(depths)

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "mock",
            "scripted_prompts": len(self._spec.scripts),
            "probe_position": self._probe_position,
        }

    def complete(
        self, prompt: str, top_k: int, max_tokens: int, record_id: str = ""
    ) -> AnswerDistribution:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        reply = self._spec.scripts.get(prompt)
        if reply is None:
            continuation = self._continuation_lookup.get(prompt)
            if continuation is not None:
                # Continuation replies carry a single synthetic candidate.
                return AnswerDistribution(
                    record_id=record_id,
                    probe_position=self._probe_position,
                    candidates=(TokenCandidate(continuation, 0.0, 1),),
                    greedy_completion=continuation,
                )
            reply = self._spec.default
        chosen = reply.candidates[: min(top_k, self.max_top_logprobs)]
        candidates = tuple(
            TokenCandidate(token, lp, i + 1) for i, (token, lp) in enumerate(chosen)
        )
        return AnswerDistribution(
            record_id=record_id,
            probe_position=self._probe_position,
            candidates=candidates,
            greedy_completion=reply.greedy_answer,
        )


def read_logit_dump(path: str | Path, fix_order: bool = False) -> dict[str, AnswerDistribution]:
    """Read a logit-dump JSONL file into a record_id -> distribution map.

    Each line holds record_id, probe_position, greedy_completion, and a
    candidates array sorted by logprob descending. Out-of-order candidate
    lists are rejected unless fix_order is set, in which case they are
    re-sorted canonically and the line is logged.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"logit dump not found: {path}")
    result: dict[str, AnswerDistribution] = {}
    first_line: dict[str, int] = {}
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("record_id", "probe_position", "greedy_completion", "candidates"):
                if not isinstance(data, dict) or key not in data:
                    raise DatasetError(f"{path}:{lineno}: missing field {key!r}")
            record_id = data["record_id"]
            if record_id in first_line:
                raise DatasetError(
                    f"{path}:{lineno}: duplicate record_id {record_id!r} "
                    f"(first seen on line {first_line[record_id]})"
                )
            try:
                pairs = [(c["token"], float(c["logprob"])) for c in data["candidates"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed candidate entry: {exc!r}") from exc
            try:
                canonical = rank_candidates(pairs)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if [(c.token_text, c.logprob) for c in canonical] != pairs:
                if not fix_order:
                    raise DatasetError(
                        f"{path}:{lineno}: candidates are not in canonical order "
                        "(logprob descending, ties by token ascending); "
                        "pass --fix-order to re-sort"
                    )
                logger.warning("%s:%d: candidates re-sorted into canonical order", path, lineno)
            try:
                dist = AnswerDistribution(
                    record_id=record_id,
                    probe_position=data["probe_position"],
                    candidates=canonical,
                    greedy_completion=data["greedy_completion"],
                )
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            first_line[record_id] = lineno
            result[record_id] = dist
    if not result:
        raise DatasetError(f"{path}: logit dump contains no records")
    return result


def write_logit_dump(distributions: Iterable[AnswerDistribution], path: str | Path) -> None:
    """Write distributions as logit-dump JSONL, sorted by record_id."""
    ordered = sorted(distributions, key=lambda d: d.record_id)
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for dist in ordered:
            handle.write(json.dumps(dist.to_dict(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
