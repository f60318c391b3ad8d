"""Text-generation client: provider abstraction, disk cache, offline mock.

The client wraps any object with a ``generate(request) -> str`` method and
adds the operational layer around it: a content-addressed disk cache keyed by
the request's semantic fields, bounded retry with exponential backoff on
transient failures, a concurrency cap shared across threads, and an optional
line-delimited request log.

The bundled MockProvider makes the whole pipeline runnable with zero network
activity: it answers from an exact-match canned table or from ordered
substring rules (answer with a metadata field, a fixed judge score, or a
constant), and it is deterministic by construction.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence


# ---------------------------------------------------------------------------
# request / response
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenRequest:
    """One generation call. ``metadata`` is carrier information for mock
    rules and logging; it is NOT part of the cache identity."""

    model_id: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 256
    seed: Optional[int] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.model_id.strip():
            raise ValueError("model_id must be non-empty")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass
class GenResponse:
    text: str
    cache_hit: bool = False
    latency_s: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    attempts: int = 0


def cache_key(req: GenRequest) -> str:
    """sha256 over the fields that define the answer; metadata is excluded,
    and any change to an included field produces a different key."""
    doc = {
        "model_id": req.model_id,
        "prompt": req.prompt,
        "temperature": float(req.temperature),
        "max_tokens": int(req.max_tokens),
        "seed": req.seed,
    }
    blob = json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# typed errors
# ---------------------------------------------------------------------------

class ProviderError(Exception):
    """Base class for anything the transport layer can throw."""


class AuthError(ProviderError):
    """Credentials rejected; retrying cannot help."""


class RateLimitError(ProviderError):
    """Provider pushed back; transient, retried with backoff."""


class RequestTimeoutError(ProviderError):
    """No answer in time; transient, retried with backoff."""


class MalformedResponseError(ProviderError):
    """Provider answered with something unusable; not retried."""


class NoCannedResponse(ProviderError):
    """The mock has no registered answer for this prompt."""


TRANSIENT_ERRORS = (RateLimitError, RequestTimeoutError)


class Provider(Protocol):
    def generate(self, req: GenRequest) -> str: ...


# ---------------------------------------------------------------------------
# mock provider
# ---------------------------------------------------------------------------

RULE_KINDS = ("constant", "template")


@dataclass(frozen=True)
class MockRule:
    """Answer prompts containing ``match`` (empty string matches all).

    ``constant`` returns ``text`` verbatim; ``template`` formats ``text``
    with the request's metadata (``{truth_label}`` etc.). Rules apply in
    list order, first match wins.
    """

    match: str
    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"rule kind {self.kind!r} not in {RULE_KINDS}")


def truth_label_rule(match: str = "identified class") -> MockRule:
    """Answer classification prompts with the request's own truth label —
    the oracle mock that drives the harness to perfect scores."""
    return MockRule(match=match, kind="template",
                    text="The identified class is: {truth_label}")


def fixed_score_rule(score: float, match: str = "Quality score") -> MockRule:
    """Answer judge prompts with one configured score."""
    return MockRule(match=match, kind="constant",
                    text=f"Quality score: {score:g}\nAssessment: Scored by rule.")


def constant_rule(text: str, match: str = "") -> MockRule:
    return MockRule(match=match, kind="constant", text=text)


class MockProvider:
    """Deterministic offline provider: canned exact answers plus rules."""

    def __init__(self, canned: Optional[dict[str, str]] = None,
                 rules: Sequence[MockRule] = ()):
        self.canned = dict(canned or {})
        self.rules = list(rules)
        seen: dict[str, MockRule] = {}
        for rule in self.rules:
            if rule.match in seen:
                raise ValueError(
                    f"conflicting rules: two rules share match {rule.match!r}"
                )
            seen[rule.match] = rule
        self.calls = 0

    def register(self, prompt: str, text: str) -> None:
        self.canned[prompt] = text

    def generate(self, req: GenRequest) -> str:
        self.calls += 1
        if req.prompt in self.canned:
            return self.canned[req.prompt]
        for rule in self.rules:
            if rule.match in req.prompt:
                if rule.kind == "constant":
                    return rule.text
                try:
                    return rule.text.format(**req.metadata)
                except (KeyError, IndexError) as e:
                    raise NoCannedResponse(
                        f"rule {rule.match!r} needs metadata field {e}"
                    ) from e
        raise NoCannedResponse(
            f"no canned response for prompt (key {cache_key(req)[:12]})"
        )


def mock_rules(ruleset: Sequence[MockRule]) -> MockProvider:
    """A provider answering purely from the given ordered rules."""
    return MockProvider(rules=ruleset)


# ---------------------------------------------------------------------------
# client
# ---------------------------------------------------------------------------

class LLMClient:
    """Thread-safe orchestration around a provider.

    ``max_retries`` counts extra attempts after the first, taken only on
    transient errors (rate limit, timeout) with exponential backoff. At most
    ``max_concurrent`` provider calls run at once. With a cache directory,
    identical requests are answered from disk byte-identically; cache writes
    go through a temp file and an atomic rename so a crash can never leave a
    half-written entry.
    """

    def __init__(
        self,
        provider: Provider,
        cache_dir=None,
        max_retries: int = 3,
        backoff_s: float = 0.05,
        max_concurrent: int = 4,
        log_path=None,
    ):
        if max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {max_retries}")
        if max_concurrent < 1:
            raise ValueError(f"max_concurrent must be >= 1, got {max_concurrent}")
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sem = threading.Semaphore(max_concurrent)
        self.log_path = Path(log_path) if log_path is not None else None
        self._log_lock = threading.Lock()

    # -- cache ---------------------------------------------------------------

    def _cache_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _cache_read(self, key: str) -> Optional[str]:
        if self.cache_dir is None:
            return None
        path = self._cache_path(key)
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            text = doc["text"]
        except (ValueError, KeyError, OSError):
            return None  # unreadable entry: regenerate and overwrite
        return text if isinstance(text, str) else None

    def _cache_write(self, key: str, text: str) -> None:
        if self.cache_dir is None:
            return
        payload = json.dumps({"text": text}, ensure_ascii=False)
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, self._cache_path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- logging -------------------------------------------------------------

    def _log(self, req: GenRequest, key: str, cache_hit: bool,
             attempts: int, latency_s: float) -> None:
        if self.log_path is None:
            return
        line = json.dumps({
            "model_id": req.model_id,
            "prompt_sha256": key,
            "cache_hit": cache_hit,
            "attempts": attempts,
            "latency_s": round(latency_s, 6),
        }, ensure_ascii=False)
        with self._log_lock, open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    # -- completion ----------------------------------------------------------

    def complete(self, req: GenRequest) -> GenResponse:
        key = cache_key(req)
        cached = self._cache_read(key)
        if cached is not None:
            self._log(req, key, cache_hit=True, attempts=0, latency_s=0.0)
            return GenResponse(
                text=cached, cache_hit=True, latency_s=0.0,
                prompt_tokens=len(req.prompt.split()),
                completion_tokens=len(cached.split()), attempts=0,
            )

        attempts = 0
        start = time.perf_counter()
        while True:
            attempts += 1
            try:
                with self._sem:
                    text = self.provider.generate(req)
                break
            except TRANSIENT_ERRORS:
                if attempts > self.max_retries:
                    raise
                time.sleep(self.backoff_s * (2 ** (attempts - 1)))
        latency = time.perf_counter() - start

        self._cache_write(key, text)
        self._log(req, key, cache_hit=False, attempts=attempts, latency_s=latency)
        return GenResponse(
            text=text, cache_hit=False, latency_s=latency,
            prompt_tokens=len(req.prompt.split()),
            completion_tokens=len(text.split()), attempts=attempts,
        )

    def complete_text(self, prompt: str, model_id: str = "mock",
                      metadata: Optional[dict] = None, **kw) -> str:
        """Convenience: build the request, return just the answer text."""
        req = GenRequest(model_id=model_id, prompt=prompt,
                         metadata=metadata or {}, **kw)
        return self.complete(req).text
