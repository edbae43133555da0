"""Completion clients: an OpenAI-compatible HTTP backend and a fixture-driven mock.

Both expose the same ``complete(prompt, params, role, sample_index)`` surface.
Requests are identified by a stable content hash (:func:`request_key`) over
the prompt bytes, the canonicalized sampling parameters, and the sample
index; the mock backend is a pure lookup table from that key to a stored
completion, which makes every test and offline pipeline run fully
deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

logger = logging.getLogger(__name__)

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"

ROLE_REASONER = "reasoner"
ROLE_VERIFIER = "verifier"


class BackendError(Exception):
    """A completion request failed after exhausting retries."""


class FixtureMissError(BackendError):
    """The mock backend has no entry for a request key."""

    def __init__(self, key: str, prompt: str):
        super().__init__(f"no fixture entry for request key {key} (prompt {prompt[:80]!r}...)")
        self.key = key


@dataclass(frozen=True)
class SamplingParams:
    """Decoding parameters; the defaults match the evaluation setup."""

    temperature: float = 0.6
    max_new_tokens: int = 16384
    top_logprobs: int = 20
    seed: int | None = None
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")
        if self.top_logprobs < 1:
            raise ValueError("top_logprobs must be >= 1")
        # Tolerate lists from JSON configs.
        if not isinstance(self.stop_sequences, tuple):
            object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    def canonical(self) -> str:
        """Canonical JSON used for request hashing; key order is fixed."""
        return json.dumps(
            {
                "temperature": self.temperature,
                "max_new_tokens": self.max_new_tokens,
                "top_logprobs": self.top_logprobs,
                "seed": self.seed,
                "stop": list(self.stop_sequences),
            },
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class TokenInfo:
    """One generated token with its log-probability and top alternatives."""

    token_text: str
    logprob: float
    top_alternatives: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if self.logprob > 0:
            raise ValueError(f"logprob must be <= 0, got {self.logprob}")
        alts = tuple(tuple(a) for a in self.top_alternatives)
        object.__setattr__(self, "top_alternatives", alts)
        if alts:
            lps = [lp for _, lp in alts]
            if any(lps[0] < lp for lp in lps[1:]):
                raise ValueError("top_alternatives must be sorted by descending logprob")
            if self.logprob > lps[0]:
                raise ValueError("realized logprob cannot exceed the top alternative")

    @property
    def top1_logprob(self) -> float:
        """Log-probability of the most likely token at this position."""
        if self.top_alternatives:
            return self.top_alternatives[0][1]
        return self.logprob


@dataclass(frozen=True)
class Completion:
    """One sampled completion, with per-token records when available."""

    text: str
    tokens: tuple[TokenInfo, ...] = ()
    n_tokens: int = 0
    finish_reason: str = FINISH_STOP

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens and self.n_tokens != len(self.tokens):
            raise ValueError("n_tokens must equal len(tokens) when token data is present")


def request_key(prompt: str, params: SamplingParams, sample_index: int = 0) -> str:
    """Stable hex content hash identifying one completion request."""
    if sample_index < 0:
        raise ValueError("sample_index must be >= 0")
    h = hashlib.sha256()
    h.update(prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update(params.canonical().encode("utf-8"))
    h.update(b"\x00")
    h.update(str(sample_index).encode("ascii"))
    return h.hexdigest()


class CompletionBackend(Protocol):
    """Anything that can serve completion requests for the harness."""

    def complete(
        self,
        prompt: str,
        params: SamplingParams,
        role: str = ROLE_REASONER,
        sample_index: int = 0,
    ) -> Completion: ...


class UsageCounter:
    """Thread-safe generated-token accounting."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._tokens = 0
        self._requests = 0

    def add(self, n_tokens: int) -> None:
        with self._lock:
            self._tokens += n_tokens
            self._requests += 1

    @property
    def total_tokens(self) -> int:
        return self._tokens

    @property
    def total_requests(self) -> int:
        return self._requests


def _token_from_fixture(entry: dict) -> TokenInfo:
    return TokenInfo(
        token_text=entry["t"],
        logprob=float(entry["lp"]),
        top_alternatives=tuple((str(t), float(lp)) for t, lp in entry.get("top", [])),
    )


def _truncate(
    text: str, tokens: tuple[TokenInfo, ...], finish: str, params: SamplingParams
) -> Completion:
    """Apply the max-token and stop-sequence rules to a stored completion."""
    if tokens and len(tokens) > params.max_new_tokens:
        tokens = tokens[: params.max_new_tokens]
        text = "".join(t.token_text for t in tokens)
        finish = FINISH_LENGTH
    if params.stop_sequences:
        cut = min(
            (i for s in params.stop_sequences if (i := text.find(s)) >= 0),
            default=-1,
        )
        if cut >= 0:
            text = text[:cut]
            kept, pos = [], 0
            for tok in tokens:
                if pos >= cut:
                    break
                kept.append(tok)
                pos += len(tok.token_text)
            tokens = tuple(kept)
            finish = FINISH_STOP
    return Completion(
        text=text, tokens=tokens, n_tokens=len(tokens) if tokens else 0, finish_reason=finish
    )


class MockBackend:
    """Deterministic completion source backed by a JSON Lines fixture file.

    Each line maps a request key to a stored completion:
    ``{"key": hex, "text": str, "tokens": [{"t", "lp", "top"}], "finish": "stop"|"length"}``.
    Lookup is pure: no network, no clock, no randomness. The backend is
    immutable after load and safe to share between threads.
    """

    def __init__(self, entries: dict[str, dict], usage: UsageCounter | None = None):
        self._entries = dict(entries)
        self.usage = usage or UsageCounter()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        entries: dict[str, dict] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    key = record["key"]
                    # Validate token records eagerly for a clear error location.
                    for tok in record.get("tokens", []):
                        _token_from_fixture(tok)
                except (KeyError, ValueError, json.JSONDecodeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad fixture line: {exc}") from exc
                entries[key] = record
        return cls(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def complete(
        self,
        prompt: str,
        params: SamplingParams,
        role: str = ROLE_REASONER,
        sample_index: int = 0,
    ) -> Completion:
        key = request_key(prompt, params, sample_index)
        record = self._entries.get(key)
        if record is None:
            raise FixtureMissError(key, prompt)
        tokens = tuple(_token_from_fixture(t) for t in record.get("tokens", []))
        completion = _truncate(
            record["text"], tokens, record.get("finish", FINISH_STOP), params
        )
        self.usage.add(completion.n_tokens)
        return completion


class HttpBackend:
    """Client for OpenAI-compatible ``/v1/completions`` endpoints.

    The reasoner and verifier roles may point at different endpoints and
    models. In-flight requests are bounded by ``parallelism``; transient
    transport failures are retried with exponential backoff.
    """

    MAX_ATTEMPTS = 3
    BACKOFF_S = 0.5

    def __init__(
        self,
        reasoner_url: str,
        verifier_url: str | None = None,
        reasoner_model: str | None = None,
        verifier_model: str | None = None,
        api_key_env: str | None = None,
        parallelism: int = 8,
        timeout_s: float = 600.0,
        usage: UsageCounter | None = None,
    ):
        self._urls = {
            ROLE_REASONER: reasoner_url.rstrip("/"),
            ROLE_VERIFIER: (verifier_url or reasoner_url).rstrip("/"),
        }
        self._models = {
            ROLE_REASONER: reasoner_model,
            ROLE_VERIFIER: verifier_model or reasoner_model,
        }
        self._api_key = os.environ.get(api_key_env, "") if api_key_env else ""
        self._inflight = threading.Semaphore(parallelism)
        self._timeout_s = timeout_s
        self.usage = usage or UsageCounter()

    def _payload(self, prompt: str, params: SamplingParams, role: str, sample_index: int) -> dict:
        payload: dict = {
            "prompt": prompt,
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
            "logprobs": params.top_logprobs,
        }
        model = self._models[role]
        if model:
            payload["model"] = model
        if params.seed is not None:
            # Distinct sample indices get distinct seeds so repeated sampling
            # of one prompt stays reproducible server-side.
            payload["seed"] = params.seed + sample_index
        if params.stop_sequences:
            payload["stop"] = list(params.stop_sequences)
        return payload

    def complete(
        self,
        prompt: str,
        params: SamplingParams,
        role: str = ROLE_REASONER,
        sample_index: int = 0,
    ) -> Completion:
        import requests

        url = f"{self._urls[role]}/v1/completions"
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        payload = self._payload(prompt, params, role, sample_index)

        last_error: Exception | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                time.sleep(self.BACKOFF_S * 2 ** (attempt - 1))
            try:
                with self._inflight:
                    response = requests.post(
                        url, json=payload, headers=headers, timeout=self._timeout_s
                    )
                response.raise_for_status()
                completion = self._parse_response(response.json())
                self.usage.add(completion.n_tokens)
                return completion
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                logger.warning("completion attempt %d/%d failed: %s", attempt + 1, self.MAX_ATTEMPTS, exc)
        raise BackendError(f"completion failed after {self.MAX_ATTEMPTS} attempts: {last_error}")

    @staticmethod
    def _parse_response(body: dict) -> Completion:
        choice = body["choices"][0]
        text = choice.get("text", "")
        tokens: list[TokenInfo] = []
        lp = choice.get("logprobs") or {}
        token_texts: Sequence[str] = lp.get("tokens") or []
        token_lps: Sequence[float] = lp.get("token_logprobs") or []
        tops: Sequence[dict | None] = lp.get("top_logprobs") or []
        for i, tok_text in enumerate(token_texts):
            logprob = float(token_lps[i]) if i < len(token_lps) and token_lps[i] is not None else 0.0
            top_map = tops[i] if i < len(tops) and tops[i] else {}
            alts = tuple(
                sorted(((t, float(v)) for t, v in top_map.items()), key=lambda kv: -kv[1])
            )
            # Some servers report a realized logprob a hair above the top
            # alternative after re-ranking; clamp rather than reject.
            if alts and logprob > alts[0][1]:
                logprob = alts[0][1]
            tokens.append(TokenInfo(tok_text, min(logprob, 0.0), alts))
        n_tokens = body.get("usage", {}).get("completion_tokens", len(tokens))
        if tokens:
            n_tokens = len(tokens)
        return Completion(
            text=text,
            tokens=tuple(tokens),
            n_tokens=n_tokens,
            finish_reason=choice.get("finish_reason", FINISH_STOP),
        )


def greedy_params(params: SamplingParams, max_new_tokens: int) -> SamplingParams:
    """Parameters for induced trial answers: greedy and short, so repeated
    induced calls are deterministic on a fixed backend."""
    return replace(params, temperature=0.0, max_new_tokens=max_new_tokens, stop_sequences=())
