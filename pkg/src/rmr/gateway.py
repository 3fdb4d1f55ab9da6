"""Chat-completion gateway: pluggable HTTP endpoint, offline mocks, extraction.

The wire shape is a JSON chat-completion request against a configurable base
URL, which covers locally served open models and API adapters alike. Mock
endpoints are selected with the ``mock:`` URL scheme so the whole pipeline
runs offline and deterministically:

    mock:fixed:<letter>   always answers "The answer is (<letter>)."
    mock:echo-top1        answers with the letter of the first in-context
                          example's Answer line, i.e. the top retrieved item

Free-form completions are mapped back to an option index by
``extract_answer``: letter patterns first, then a unique case-insensitive
choice-text match, else extraction fails and the scorer counts it wrong.
"""

from __future__ import annotations

import base64
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

from .errors import (
    AuthFailureError,
    ConfigurationError,
    GatewayError,
    IoFailureError,
    MalformedResponseError,
    RateLimitedError,
    RequestTimeoutError,
)

logger = logging.getLogger(__name__)

MOCK_SCHEME = "mock:"


@dataclass(frozen=True)
class ModelEndpoint:
    """Where and how to reach the answering model.

    ``base_url`` is either the full chat-completion URL of an HTTP endpoint
    or a ``mock:`` spec. The API key is read from the environment variable
    named by ``api_key_env`` at request time, never stored.
    """

    base_url: str
    model_name: str = "default"
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ConfigurationError("timeout must be > 0")

    @property
    def is_mock(self) -> bool:
        return self.base_url.startswith(MOCK_SCHEME)


@dataclass(frozen=True)
class Completion:
    """One model completion: raw text plus request bookkeeping."""

    raw_text: str
    latency: float
    attempts: int
    usage: Mapping[str, int] | None = None

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


@dataclass(frozen=True)
class ExtractedAnswer:
    """The option index recovered from a completion, if any."""

    choice_index: int | None
    method: str  # letter_pattern | choice_text_match | none
    confidence_note: str


# Letter cited right after the word "answer" ("The answer is (B).", "Answer: C").
# A lone letter counts only when parenthesized, punctuated, or uppercase before
# whitespace; a lowercase letter followed by a word is read as the article "a",
# not an option ("the answer is a rock").
_ANSWER_MARKER = re.compile(
    r"(?i:\banswer\b(?:\s+(?:is|was))?\s*[:\-]?\s*(?:option\s+|choice\s+)?)"
    r"(?:\(([A-Za-z])\)|([A-Za-z])(?=[.,:;!?)\"']|$)|([A-Z])(?=\s))"
)
# A parenthesized option letter anywhere.
_PAREN_LETTER = re.compile(r"\(([A-Za-z])\)")
# An uppercase letter leading the reply and then punctuation or end: "B", "B.",
# "B) because ...". Prose like "A rock forms ..." deliberately does not count.
_LEADING_LETTER = re.compile(r"^\s*([A-Z])(?=[.):,\n]|$)")

_LETTER_PATTERNS = (
    ("answer marker", _ANSWER_MARKER),
    ("parenthesized letter", _PAREN_LETTER),
    ("leading letter", _LEADING_LETTER),
)


def extract_answer(raw_text: str, choices: Sequence[str]) -> ExtractedAnswer:
    """Map free-form model output to a 0-based choice index.

    Letter patterns win over choice-text matches; a letter outside the valid
    A..? range never yields an index (the scan simply continues). The
    choice-text fallback requires exactly one choice's text to appear,
    case-insensitively, in the output. ``method="none"`` signals extraction
    failure; callers score it as incorrect.
    """
    if not choices:
        raise ConfigurationError("extract_answer needs a non-empty choice list")
    for pattern_name, pattern in _LETTER_PATTERNS:
        for match in pattern.finditer(raw_text):
            letter = next(group for group in match.groups() if group)
            index = ord(letter.upper()) - ord("A")
            if 0 <= index < len(choices):
                return ExtractedAnswer(
                    choice_index=index,
                    method="letter_pattern",
                    confidence_note=f"{pattern_name} {letter!r}",
                )
    folded = raw_text.casefold()
    hits = [
        j
        for j, choice in enumerate(choices)
        if choice.strip() and choice.casefold() in folded
    ]
    if len(hits) == 1:
        return ExtractedAnswer(
            choice_index=hits[0],
            method="choice_text_match",
            confidence_note=f"choice text {choices[hits[0]]!r} found",
        )
    return ExtractedAnswer(
        choice_index=None,
        method="none",
        confidence_note=(
            "no letter pattern; "
            + (f"{len(hits)} choice texts matched" if hits else "no choice text matched")
        ),
    )


# First in-context example's answer line, e.g. "Answer: (B) a rock".
_CONTEXT_ANSWER = re.compile(r"^Answer:\s*\(([A-Z])\)", re.MULTILINE)

_NO_CONTEXT_REPLY = "No worked examples were provided in the prompt."


def _mock_complete(endpoint: ModelEndpoint, prompt: str) -> Completion:
    mode = endpoint.base_url[len(MOCK_SCHEME) :]
    if mode.startswith("fixed:"):
        letter = mode[len("fixed:") :]
        if len(letter) != 1 or not letter.isalpha():
            raise ConfigurationError(f"mock fixed mode needs one letter, got {letter!r}")
        text = f"The answer is ({letter.upper()})."
    elif mode == "echo-top1":
        match = _CONTEXT_ANSWER.search(prompt)
        text = f"The answer is ({match.group(1)})." if match else _NO_CONTEXT_REPLY
    else:
        raise ConfigurationError(f"unknown mock endpoint mode {mode!r}")
    return Completion(raw_text=text, latency=0.0, attempts=1)


_MIME_BY_SUFFIX = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
}


def _image_part(image_path: str) -> dict:
    path = Path(image_path)
    try:
        payload = base64.b64encode(path.read_bytes()).decode("ascii")
    except OSError as exc:
        raise IoFailureError(f"cannot read image {image_path}: {exc}") from exc
    mime = _MIME_BY_SUFFIX.get(path.suffix.lower(), "image/png")
    return {
        "type": "image_url",
        "image_url": {"url": f"data:{mime};base64,{payload}"},
    }


def _build_payload(endpoint: ModelEndpoint, prompt: str, image: str | None) -> dict:
    if image is None:
        content = prompt
    else:
        content = [{"type": "text", "text": prompt}, _image_part(image)]
    return {
        "model": endpoint.model_name,
        "temperature": endpoint.temperature,
        "messages": [{"role": "user", "content": content}],
    }


def _parse_response(data: dict, attempts: int, latency: float) -> Completion:
    try:
        text = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(
            f"response lacks choices[0].message.content: {exc}", attempts=attempts
        ) from exc
    if not isinstance(text, str):
        raise MalformedResponseError(
            f"completion content is {type(text).__name__}, expected str",
            attempts=attempts,
        )
    usage = data.get("usage")
    return Completion(
        raw_text=text,
        latency=latency,
        attempts=attempts,
        usage=usage if isinstance(usage, dict) else None,
    )


def complete(
    endpoint: ModelEndpoint,
    prompt: str,
    image: str | None = None,
    backoff_base: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> Completion:
    """Request one completion, retrying transient failures with backoff.

    Transient failures (connection errors, timeouts, HTTP 429 and 5xx) are
    retried up to ``endpoint.max_retries`` times with exponentially growing
    delay; auth rejections and malformed responses fail immediately. The
    total attempt count never exceeds ``max_retries + 1``.
    """
    if endpoint.is_mock:
        return _mock_complete(endpoint, prompt)
    payload = _build_payload(endpoint, prompt, image)
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key_env:
        key = os.environ.get(endpoint.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
    start = time.perf_counter()
    delay = backoff_base
    last_error: GatewayError | None = None
    for attempt in range(1, endpoint.max_retries + 2):
        try:
            response = requests.post(
                endpoint.base_url,
                json=payload,
                headers=headers,
                timeout=endpoint.timeout,
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            last_error = RequestTimeoutError(
                f"endpoint unreachable after {attempt} attempt(s): {exc}",
                attempts=attempt,
            )
        else:
            status = response.status_code
            if status in (401, 403):
                raise AuthFailureError(f"HTTP {status} from endpoint", attempts=attempt)
            if status == 429:
                last_error = RateLimitedError(
                    f"rate limited after {attempt} attempt(s)", attempts=attempt
                )
            elif status >= 500:
                last_error = RequestTimeoutError(
                    f"HTTP {status} after {attempt} attempt(s)", attempts=attempt
                )
            elif status >= 400:
                raise MalformedResponseError(
                    f"HTTP {status}: {response.text[:200]}", attempts=attempt
                )
            else:
                try:
                    data = response.json()
                except ValueError as exc:
                    raise MalformedResponseError(
                        f"response is not JSON: {exc}", attempts=attempt
                    ) from exc
                return _parse_response(
                    data, attempts=attempt, latency=time.perf_counter() - start
                )
        if attempt <= endpoint.max_retries:
            logger.warning("retrying endpoint in %.2fs: %s", delay, last_error)
            sleep(delay)
            delay *= 2
    assert last_error is not None
    raise last_error


class Gateway:
    """Thread-safe completion client with a bounded number of in-flight requests.

    One instance may be shared across threads; ``complete_many`` fans out up
    to ``max_in_flight`` concurrent requests and returns results keyed by
    request id, so callers stay independent of completion order.
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        max_in_flight: int = 4,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")
        self.endpoint = endpoint
        self.max_in_flight = max_in_flight
        self._backoff_base = backoff_base
        self._sleep = sleep

    def complete(self, prompt: str, image: str | None = None) -> Completion:
        return complete(
            self.endpoint,
            prompt,
            image,
            backoff_base=self._backoff_base,
            sleep=self._sleep,
        )

    def complete_many(
        self, requests_by_id: Mapping[str, tuple[str, str | None]]
    ) -> dict[str, Completion | GatewayError]:
        """Complete a batch of (prompt, image) requests keyed by request id.

        Gateway failures are captured per request rather than raised, so one
        bad record never aborts a batch.
        """
        results: dict[str, Completion | GatewayError] = {}

        def run_one(item: tuple[str, tuple[str, str | None]]):
            request_id, (prompt, image) = item
            try:
                return request_id, self.complete(prompt, image)
            except GatewayError as exc:
                return request_id, exc

        if not requests_by_id:
            return results
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            for request_id, outcome in pool.map(run_one, requests_by_id.items()):
                results[request_id] = outcome
        return results
