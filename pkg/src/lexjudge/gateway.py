"""Judge backends: a chat-completions HTTP client and a deterministic mock.

Prompts carry a small machine-readable protocol so that either backend can
serve them: the first line is a stage marker (#STAGE:FE_MF etc.) and the
judging target sits between #TARGET_BEGIN and #TARGET_END lines. Pair
targets contain #INPUT_A and #INPUT_B sections. Replies follow the response
protocol parsed by the engine: extraction output between ===FACTS=== and
===END===, annotation output ending in a VERDICT line.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .errors import AuthError, DomainError, MalformedStageMarker, UpstreamError
from .retrieval import tokenize

STAGE_PREFIX = "#STAGE:"
TARGET_BEGIN = "#TARGET_BEGIN"
TARGET_END = "#TARGET_END"
INPUT_A = "#INPUT_A"
INPUT_B = "#INPUT_B"
FACTS_BEGIN = "===FACTS==="
FACTS_END = "===END==="
VERDICT_RELEVANT = "VERDICT: RELEVANT"
VERDICT_IRRELEVANT = "VERDICT: IRRELEVANT"

STAGES = ("FE_MF", "FE_LF", "FA_MF", "FA_LF")


@dataclass(frozen=True, slots=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True, slots=True)
class JudgeRequest:
    """One prompt for the judge; immutable so it can double as a cache key."""

    system_text: str
    user_text: str
    temperature: float
    model: str
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.user_text:
            raise DomainError("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise DomainError(f"temperature must lie in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise DomainError("max_tokens must be >= 1")


@dataclass(frozen=True, slots=True)
class JudgeResponse:
    text: str
    usage: TokenUsage
    latency_ms: float
    cached: bool = False


class Judge(Protocol):
    def complete(self, request: JudgeRequest) -> JudgeResponse: ...


def request_hash(request: JudgeRequest) -> str:
    key = "\x1f".join(
        [request.model, repr(request.temperature), request.system_text, request.user_text]
    )
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


def stage_of(user_text: str) -> str | None:
    """Extract the embedded stage marker, or None when absent/unknown."""
    match = re.search(rf"^{re.escape(STAGE_PREFIX)}(\S+)\s*$", user_text, re.MULTILINE)
    if not match or match.group(1) not in STAGES:
        return None
    return match.group(1)


# ---------------------------------------------------------------------------
# mock judge


@dataclass(frozen=True)
class MockJudgeConfig:
    """Deterministic stand-in rules for offline runs and tests.

    mf_jaccard_threshold drives the material-fact verdict; lexicon is the
    closed vocabulary of legal-fact tags. seed feeds any sampling the
    surrounding pipeline performs in ablation modes; the rules themselves
    are pure.
    """

    mf_jaccard_threshold: float = 0.4
    lexicon: frozenset[str] = frozenset()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.mf_jaccard_threshold <= 1.0:
            raise DomainError(
                f"mf_jaccard_threshold must lie in (0, 1], got {self.mf_jaccard_threshold}"
            )


def load_lexicon(path: str | Path) -> frozenset[str]:
    terms = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        term = unicodedata.normalize("NFC", line.strip())
        if term and not term.startswith("#"):
            terms.add(term)
    return frozenset(terms)


def mock_tokens(text: str) -> list[str]:
    """Normalized token sequence used by every mock rule.

    NFC, punctuation replaced by spaces, then the default CJK-bigram
    tokenization, deduplicated with first occurrence order preserved.
    Idempotent over its own space-joined output.
    """
    text = unicodedata.normalize("NFC", text)
    stripped = "".join(
        " " if unicodedata.category(ch).startswith("P") else ch for ch in text
    )
    seen: set[str] = set()
    ordered: list[str] = []
    for token in tokenize(stripped, "cjk_bigram"):
        if token not in seen:
            seen.add(token)
            ordered.append(token)
    return ordered


def mock_lf_tags(tokens: Iterable[str], lexicon: frozenset[str]) -> list[str]:
    return sorted(set(tokens) & lexicon)


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


def _target_block(user_text: str) -> str:
    lines = user_text.splitlines()
    try:
        start = lines.index(TARGET_BEGIN)
        end = lines.index(TARGET_END, start + 1)
    except ValueError:
        raise MalformedStageMarker("no target block between markers") from None
    return "\n".join(lines[start + 1 : end])


def _pair_inputs(target: str) -> tuple[str, str]:
    lines = target.splitlines()
    try:
        a_at = lines.index(INPUT_A)
        b_at = lines.index(INPUT_B, a_at + 1)
    except ValueError:
        raise MalformedStageMarker("pair target lacks input sections") from None
    return "\n".join(lines[a_at + 1 : b_at]), "\n".join(lines[b_at + 1 :])


def _usage_for(request: JudgeRequest, reply: str) -> TokenUsage:
    return TokenUsage(
        prompt_tokens=len(request.user_text.split()),
        completion_tokens=len(reply.split()),
    )


def mock_complete(request: JudgeRequest, cfg: MockJudgeConfig) -> JudgeResponse:
    """Answer a judge request by fixed rules; pure in the request content.

    FE_MF: the target's normalized tokens. FE_LF: the sorted intersection
    of target tokens with the lexicon. FA_MF: RELEVANT when the two input
    token sets reach the Jaccard threshold. FA_LF: RELEVANT when the two
    whitespace-split tag sets intersect. Temperature is ignored.
    """
    stage = stage_of(request.user_text)
    if stage is None:
        raise MalformedStageMarker("user_text carries no recognizable stage marker")
    target = _target_block(request.user_text)
    if stage == "FE_MF":
        reply = f"{FACTS_BEGIN}\n{' '.join(mock_tokens(target))}\n{FACTS_END}"
    elif stage == "FE_LF":
        tags = sorted(set(mock_tokens(target)) & cfg.lexicon)
        reply = f"{FACTS_BEGIN}\n{' '.join(tags)}\n{FACTS_END}"
    elif stage == "FA_MF":
        a_text, b_text = _pair_inputs(target)
        a, b = set(mock_tokens(a_text)), set(mock_tokens(b_text))
        score = _jaccard(a, b)
        verdict = VERDICT_RELEVANT if score >= cfg.mf_jaccard_threshold else VERDICT_IRRELEVANT
        reply = (
            f"Shared tokens {len(a & b)} of {len(a | b)}; "
            f"jaccard={score:.4f} threshold={cfg.mf_jaccard_threshold:.4f}.\n{verdict}"
        )
    else:  # FA_LF
        a_text, b_text = _pair_inputs(target)
        a, b = set(a_text.split()), set(b_text.split())
        shared = sorted(a & b)
        verdict = VERDICT_RELEVANT if shared else VERDICT_IRRELEVANT
        reply = f"Shared legal tags: {' '.join(shared) if shared else '(none)'}.\n{verdict}"
    return JudgeResponse(text=reply, usage=_usage_for(request, reply), latency_ms=0.0)


class MockJudge:
    """Judge backed by the mock rules; safe to share across threads."""

    def __init__(self, cfg: MockJudgeConfig):
        self.cfg = cfg

    def complete(self, request: JudgeRequest) -> JudgeResponse:
        return mock_complete(request, self.cfg)


# ---------------------------------------------------------------------------
# chat-completions backend


class TransportError(Exception):
    """Network-level failure (timeout, refused connection); retryable."""


Transport = Callable[[str, dict, dict, float], tuple[int, dict]]


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, dict]:
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


class _TokenBucket:
    """Requests-per-minute limiter; refills continuously up to rpm tokens."""

    def __init__(self, rpm: int, clock: Callable[[], float], sleep: Callable[[float], None]):
        if rpm < 1:
            raise DomainError("rate limit must be >= 1 request per minute")
        self.rpm = rpm
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(rpm)
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(float(self.rpm), self._tokens + (now - self._last) * self.rpm / 60.0)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) * 60.0 / self.rpm
            self._sleep(wait)


class ChatCompletionsJudge:
    """HTTP judge speaking the chat-completions wire format.

    Credentials come only from the environment variable named at
    construction. Responses are cached content-addressed by the request
    hash; every non-cached call appends one transcript line.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        key_env: str,
        *,
        timeout: float = 60.0,
        retry: int = 2,
        backoff_base: float = 0.5,
        rate_limit_rpm: int | None = None,
        cache_dir: str | Path | None = None,
        transcript_path: str | Path | None = None,
        transport: Transport | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retry < 0:
            raise DomainError("retry budget must be >= 0")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.key_env = key_env
        self.timeout = timeout
        self.retry = retry
        self.backoff_base = backoff_base
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._bucket = _TokenBucket(rate_limit_rpm, clock, sleep) if rate_limit_rpm else None
        self._transcript_lock = threading.Lock()

    def _api_key(self) -> str:
        key = os.environ.get(self.key_env)
        if not key:
            raise AuthError(f"environment variable {self.key_env} is not set")
        return key

    def _cache_path(self, digest: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{digest}.json"

    def _cache_load(self, digest: str) -> JudgeResponse | None:
        path = self._cache_path(digest)
        if path is None or not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        return JudgeResponse(
            text=payload["text"],
            usage=TokenUsage(payload["prompt_tokens"], payload["completion_tokens"]),
            latency_ms=0.0,
            cached=True,
        )

    def _cache_store(self, digest: str, response: JudgeResponse) -> None:
        path = self._cache_path(digest)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(
            json.dumps(
                {
                    "text": response.text,
                    "prompt_tokens": response.usage.prompt_tokens,
                    "completion_tokens": response.usage.completion_tokens,
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        os.replace(tmp, path)

    def _transcribe(self, digest: str, request: JudgeRequest, response: JudgeResponse) -> None:
        if self.transcript_path is None:
            return
        line = json.dumps(
            {
                "ts": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "request_hash": digest,
                "stage": stage_of(request.user_text) or "",
                "model": request.model,
                "latency_ms": round(response.latency_ms, 3),
                "usage": {
                    "prompt_tokens": response.usage.prompt_tokens,
                    "completion_tokens": response.usage.completion_tokens,
                },
            },
            ensure_ascii=False,
        )
        with self._transcript_lock:
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            with self.transcript_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def complete(self, request: JudgeRequest) -> JudgeResponse:
        digest = request_hash(request)
        cached = self._cache_load(digest)
        if cached is not None:
            return cached
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        payload = {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last_error = "no attempt made"
        for attempt in range(self.retry + 1):
            if attempt:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
            if self._bucket is not None:
                self._bucket.acquire()
            started = time.perf_counter()
            try:
                status, body = self._transport(url, headers, payload, self.timeout)
            except TransportError as exc:
                last_error = f"transport: {exc}"
                continue
            latency = (time.perf_counter() - started) * 1000.0
            if status in (401, 403):
                raise AuthError(f"backend rejected credentials (HTTP {status})")
            if status == 429 or status >= 500:
                last_error = f"HTTP {status}"
                continue
            if status != 200:
                raise UpstreamError(f"backend returned HTTP {status}: {str(body)[:200]}")
            try:
                text = body["choices"][0]["message"]["content"]
                usage_raw = body.get("usage", {})
            except (KeyError, IndexError, TypeError):
                raise UpstreamError(f"malformed backend response: {str(body)[:200]}") from None
            response = JudgeResponse(
                text=text,
                usage=TokenUsage(
                    prompt_tokens=int(usage_raw.get("prompt_tokens", 0)),
                    completion_tokens=int(usage_raw.get("completion_tokens", 0)),
                ),
                latency_ms=latency,
            )
            self._transcribe(digest, request, response)
            self._cache_store(digest, response)
            return response
        raise UpstreamError(f"gave up after {self.retry + 1} attempts; last error: {last_error}")
