"""Lexical retrieval: tokenizers and a BM25 index.

The index backs both the adaptive demonstration matching and the default
pair pre-ranker, so scoring must stay deterministic: ranking comparisons
happen on scores rounded to 12 significant digits and ties break by
ascending doc id.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DomainError, ExternalTokenizerError, UnknownDocError

TOKENIZER_MODES = ("whitespace", "cjk_bigram", "external")

_CJK_RANGES = (
    (0x4E00, 0x9FFF),    # unified ideographs
    (0x3400, 0x4DBF),    # extension A
    (0xF900, 0xFAFF),    # compatibility ideographs
    (0x20000, 0x2FA1F),  # extensions B and beyond
)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def _cjk_bigram_tokens(text: str) -> list[str]:
    tokens: list[str] = []
    run: list[str] = []
    other: list[str] = []

    def flush_run() -> None:
        if not run:
            return
        if len(run) == 1:
            tokens.append(run[0])
        else:
            tokens.extend(run[i] + run[i + 1] for i in range(len(run) - 1))
        run.clear()

    def flush_other() -> None:
        if other:
            tokens.extend("".join(other).split())
            other.clear()

    for ch in text:
        if is_cjk(ch):
            flush_other()
            run.append(ch)
        else:
            flush_run()
            other.append(ch)
    flush_run()
    flush_other()
    return tokens


def tokenize(
    text: str,
    mode: str = "cjk_bigram",
    *,
    external_command: str | None = None,
    external_timeout: float = 30.0,
) -> list[str]:
    """Split text into tokens under the given mode.

    whitespace: split on unicode whitespace. cjk_bigram: overlapping
    character bigrams inside CJK runs (a lone CJK character stays a
    unigram), whitespace tokens elsewhere. external: pipe the text to a
    configured command and read whitespace-separated tokens from stdout.
    """
    if mode == "whitespace":
        return text.split()
    if mode == "cjk_bigram":
        return _cjk_bigram_tokens(text)
    if mode == "external":
        if not external_command:
            raise ExternalTokenizerError("external tokenizer mode without a command")
        try:
            proc = subprocess.run(
                shlex.split(external_command),
                input=text,
                capture_output=True,
                text=True,
                timeout=external_timeout,
            )
        except (OSError, subprocess.SubprocessError) as exc:
            raise ExternalTokenizerError(f"tokenizer command failed: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalTokenizerError(
                f"tokenizer command exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        return proc.stdout.split()
    raise DomainError(f"unknown tokenizer mode: {mode!r}")


def round_sig(x: float, digits: int = 12) -> float:
    """Round to a fixed number of significant digits; 0.0 stays 0.0."""
    if x == 0.0:
        return 0.0
    return float(f"{x:.{digits - 1}e}")


@dataclass
class Bm25Index:
    """Inverted index with BM25 scoring state.

    postings maps term -> {doc_id: term frequency}. Scores use the
    Robertson/Sparck-Jones idf ln(1 + (N - n + 0.5)/(n + 0.5)), which
    never goes negative.
    """

    doc_count: int
    avg_doc_len: float
    postings: dict[str, dict[str, int]]
    doc_lens: dict[str, int]
    k1: float = 1.2
    b: float = 0.75
    _idf: dict[str, float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        for term, docs in self.postings.items():
            n = len(docs)
            self._idf[term] = math.log(1.0 + (self.doc_count - n + 0.5) / (n + 0.5))

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)


def build_bm25_index(
    docs: Mapping[str, Sequence[str]],
    k1: float = 1.2,
    b: float = 0.75,
) -> Bm25Index:
    """Index pre-tokenized documents keyed by doc id."""
    if k1 < 0 or not 0 <= b <= 1:
        raise DomainError(f"bad BM25 parameters k1={k1} b={b}")
    postings: dict[str, dict[str, int]] = {}
    doc_lens: dict[str, int] = {}
    for doc_id, tokens in docs.items():
        doc_lens[doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, {})[doc_id] = tf
    count = len(doc_lens)
    avg_len = (sum(doc_lens.values()) / count) if count else 0.0
    return Bm25Index(doc_count=count, avg_doc_len=avg_len, postings=postings, doc_lens=doc_lens, k1=k1, b=b)


def bm25_score(index: Bm25Index, query_tokens: Iterable[str], doc_id: str) -> float:
    """Score one document against the query token sequence.

    The sum runs over query token occurrences, so a repeated query term
    contributes once per occurrence. Invariant under query permutation.
    """
    if doc_id not in index.doc_lens:
        raise UnknownDocError(f"doc id {doc_id!r} not in index")
    doc_len = index.doc_lens[doc_id]
    if index.avg_doc_len > 0:
        norm = index.k1 * (1.0 - index.b + index.b * doc_len / index.avg_doc_len)
    else:
        norm = index.k1
    score = 0.0
    for term in query_tokens:
        docs = index.postings.get(term)
        if not docs:
            continue
        tf = docs.get(doc_id)
        if not tf:
            continue
        score += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def top_k_rank(index: Bm25Index, query_tokens: Sequence[str], k: int) -> list[tuple[str, float]]:
    """Top-k documents by BM25 score, ties broken by ascending doc id."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    scored = [
        (doc_id, bm25_score(index, query_tokens, doc_id))
        for doc_id in index.doc_lens
    ]
    scored.sort(key=lambda item: (-round_sig(item[1]), item[0]))
    return scored[: min(k, index.doc_count)]
