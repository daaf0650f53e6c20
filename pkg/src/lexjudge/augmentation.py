"""Synthetic dataset construction from judged case pairs.

The flow mirrors a funnel: sample pairs uniformly from the corpus, keep the
lexically closest slice, judge that slice with checkpointed progress, then
assemble training sets whose label histogram either matches a target
distribution (largest-remainder quotas) or is left to chance.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from ._util import atomic_write_text, dumps_jsonl
from .corpus import LABELS, Case, CaseStore
from .engine import SYSTEM_TEXT, JudgeEngine, JudgmentRecord
from .errors import (
    DomainError,
    ExhaustedError,
    InsufficientLabelError,
    IntegrityError,
    ParseError,
    ScorerError,
)
from .retrieval import build_bm25_index, bm25_score, round_sig, tokenize

DATASET_MODES = ("distribution_matched", "random")
EXPORT_FORMATS = ("label_only", "rationale")


@dataclass(frozen=True, slots=True)
class CasePair:
    """Unordered case pair stored canonically with left_id < right_id."""

    left_id: str
    right_id: str

    def __post_init__(self) -> None:
        if self.left_id >= self.right_id:
            raise DomainError(
                f"pair must be canonical (left < right), got ({self.left_id!r}, {self.right_id!r})"
            )

    def key(self) -> tuple[str, str]:
        return (self.left_id, self.right_id)


def make_pair(a: str, b: str) -> CasePair:
    if a == b:
        raise DomainError(f"cannot pair case {a!r} with itself")
    return CasePair(*sorted((a, b)))


def _unrank_pair(r: int, n: int, total: int) -> tuple[int, int]:
    # Smallest m with C(m, 2) >= total - r gives the first index as n - m.
    s = total - r
    m = (1 + math.isqrt(1 + 8 * s)) // 2
    while m * (m - 1) // 2 < s:
        m += 1
    while (m - 1) * (m - 2) // 2 >= s:
        m -= 1
    i = n - m
    offset = r - (total - m * (m - 1) // 2)
    return i, i + 1 + offset


def sample_pairs(store: CaseStore, n: int, seed: int) -> list[CasePair]:
    """Sample n distinct unordered pairs uniformly from all C(|store|, 2).

    Deterministic in (store ids, n, seed) and independent of file order
    because ids are sorted before unranking.
    """
    if n < 0:
        raise DomainError("sample size must be >= 0")
    ids = sorted(store.ids())
    total = len(ids) * (len(ids) - 1) // 2
    if n > total:
        raise ExhaustedError(f"asked for {n} pairs but only {total} exist")
    rng = random.Random(seed)
    picks = sorted(rng.sample(range(total), n))
    pairs = []
    for r in picks:
        i, j = _unrank_pair(r, len(ids), total)
        pairs.append(CasePair(ids[i], ids[j]))
    return pairs


def save_pairs(path: str | Path, pairs: Sequence[CasePair]) -> None:
    atomic_write_text(
        path,
        json.dumps([[p.left_id, p.right_id] for p in pairs], ensure_ascii=False) + "\n",
    )


def load_pairs(path: str | Path) -> list[CasePair]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc.msg}", path=str(path)) from None
    if not isinstance(raw, list):
        raise ParseError("pairs file must hold a JSON array", path=str(path))
    pairs = []
    for i, item in enumerate(raw):
        if not isinstance(item, list) or len(item) != 2:
            raise ParseError(f"pair #{i} must be a two-item array", path=str(path))
        pairs.append(CasePair(str(item[0]), str(item[1])))
    return pairs


class PairScorer(Protocol):
    def score(self, left: Case, right: Case) -> float: ...


class Bm25PairScorer:
    """Default pre-ranker: BM25 of the left facts against the right document."""

    def __init__(self, tokenizer_mode: str = "cjk_bigram", k1: float = 1.2, b: float = 0.75):
        self.tokenizer_mode = tokenizer_mode
        self.k1 = k1
        self.b = b

    def score(self, left: Case, right: Case) -> float:
        index = build_bm25_index(
            {right.id: tokenize(right.fact_text, self.tokenizer_mode)}, k1=self.k1, b=self.b
        )
        return bm25_score(index, tokenize(left.fact_text, self.tokenizer_mode), right.id)


def prerank_pairs(
    pairs: Sequence[CasePair],
    store: CaseStore,
    scorer: PairScorer,
    top_n: int,
) -> list[CasePair]:
    """Keep the top_n highest-scoring pairs; ties break on the pair key."""
    if top_n < 0:
        raise DomainError("top_n must be >= 0")
    scored = []
    for pair in pairs:
        try:
            value = scorer.score(store.get(pair.left_id), store.get(pair.right_id))
        except Exception as exc:
            raise ScorerError(f"scorer failed on pair {pair.key()}: {exc}") from exc
        scored.append((pair, value))
    scored.sort(key=lambda item: (-round_sig(item[1]), item[0].key()))
    return [pair for pair, _ in scored[:top_n]]


def annotate_pairs(
    engine: JudgeEngine,
    store: CaseStore,
    pairs: Sequence[CasePair],
    checkpoint_path: str | Path | None = None,
) -> list[JudgmentRecord]:
    """Judge each pair once, checkpointing progress per completed pair.

    With a checkpoint path, every finished pair is appended as one JSONL
    line immediately, and a rerun skips pairs already on disk, so an
    interrupted batch resumes without re-judging. Judge-level failures
    become failed records; interrupts propagate after the flush.
    """
    unique: dict[tuple[str, str], CasePair] = {}
    for pair in pairs:
        unique.setdefault(pair.key(), pair)
    done: dict[tuple[str, str], JudgmentRecord] = {}
    checkpoint = Path(checkpoint_path) if checkpoint_path is not None else None
    if checkpoint is not None and checkpoint.exists():
        with checkpoint.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = JudgmentRecord.from_dict(json.loads(line))
                if record.config_fingerprint != engine.config_fingerprint:
                    raise IntegrityError(
                        "checkpoint was written under a different configuration"
                    )
                done[(record.query_id, record.candidate_id)] = record
    todo = [pair for key, pair in unique.items() if key not in done]
    write_lock = threading.Lock()
    sink = None
    if checkpoint is not None:
        checkpoint.parent.mkdir(parents=True, exist_ok=True)
        sink = checkpoint.open("a", encoding="utf-8")

    def finish(record: JudgmentRecord) -> None:
        if sink is not None:
            line = json.dumps(record.to_dict(), ensure_ascii=False) + "\n"
            with write_lock:
                sink.write(line)
                sink.flush()
        done[(record.query_id, record.candidate_id)] = record

    def judge_one(pair: CasePair) -> JudgmentRecord:
        return engine._judge_pair_safe(store.get(pair.left_id), store.get(pair.right_id))

    try:
        if engine.parallelism > 1 and len(todo) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=engine.parallelism) as executor:
                for record in executor.map(judge_one, todo):
                    finish(record)
        else:
            for pair in todo:
                finish(judge_one(pair))
    finally:
        if sink is not None:
            sink.close()
    return [done[key] for key in unique]


@dataclass(frozen=True, slots=True)
class DatasetSpec:
    """Recipe for one training set build."""

    name: str
    size: int
    mode: str
    distribution: Mapping[int, float] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.name:
            raise DomainError("dataset name must be non-empty")
        if self.size < 1:
            raise DomainError("dataset size must be >= 1")
        if self.mode not in DATASET_MODES:
            raise DomainError(f"mode must be one of {DATASET_MODES}, got {self.mode!r}")
        if self.mode == "distribution_matched":
            if not self.distribution:
                raise DomainError("distribution_matched mode needs a distribution")
            for label, share in self.distribution.items():
                if label not in LABELS:
                    raise DomainError(f"distribution label {label!r} outside {LABELS}")
                if share < 0:
                    raise DomainError(f"distribution share for {label} is negative")
            total = sum(self.distribution.values())
            if abs(total - 1.0) > 1e-6:
                raise DomainError(f"distribution must sum to 1, got {total}")


def largest_remainder_quotas(size: int, distribution: Mapping[int, float]) -> dict[int, int]:
    """Integer quotas summing exactly to size, by the largest-remainder rule."""
    exact = {label: size * share for label, share in distribution.items()}
    quotas = {label: int(math.floor(v)) for label, v in exact.items()}
    remaining = size - sum(quotas.values())
    by_remainder = sorted(
        distribution, key=lambda label: (-(exact[label] - quotas[label]), label)
    )
    for label in by_remainder[:remaining]:
        quotas[label] += 1
    return quotas


def build_dataset(annotated: Sequence[JudgmentRecord], spec: DatasetSpec) -> list[JudgmentRecord]:
    """Select records for a training set; failed annotations never qualify.

    Selection draws from label pools sorted by pair key, so the result
    depends only on the annotated set and the seed, not on input order.
    """
    ok = sorted(
        (r for r in annotated if r.status == "ok"),
        key=lambda r: (r.query_id, r.candidate_id),
    )
    rng = random.Random(spec.seed)
    if spec.mode == "random":
        if spec.size > len(ok):
            raise ExhaustedError(f"asked for {spec.size} records but only {len(ok)} are usable")
        chosen = rng.sample(ok, spec.size)
    else:
        assert spec.distribution is not None
        quotas = largest_remainder_quotas(spec.size, spec.distribution)
        pools: dict[int, list[JudgmentRecord]] = {label: [] for label in quotas}
        for record in ok:
            if record.label in pools:
                pools[record.label].append(record)
        chosen = []
        for label in sorted(quotas):
            quota = quotas[label]
            pool = pools[label]
            if len(pool) < quota:
                raise InsufficientLabelError(label, quota - len(pool))
            chosen.extend(rng.sample(pool, quota))
    return sorted(chosen, key=lambda r: (r.query_id, r.candidate_id))


def _rationale_assistant_text(record: JudgmentRecord) -> str:
    mf_q, mf_c = record.mf_extractions
    lf_q, lf_c = record.lf_extractions
    parts = [
        "Case A material facts:\n===FACTS===\n" + mf_q.text + "\n===END===",
        "Case B material facts:\n===FACTS===\n" + mf_c.text + "\n===END===",
        "Case A legal facts:\n===FACTS===\n" + lf_q.text + "\n===END===",
        "Case B legal facts:\n===FACTS===\n" + lf_c.text + "\n===END===",
        "Material fact comparison: " + record.mf_verdict.reasoning,
        "VERDICT: " + ("RELEVANT" if record.mf_verdict.relevant else "IRRELEVANT"),
        "Legal fact comparison: " + record.lf_verdict.reasoning,
        "VERDICT: " + ("RELEVANT" if record.lf_verdict.relevant else "IRRELEVANT"),
        f"Overall relevance label: {record.label}",
    ]
    return "\n".join(parts)


def export_dataset(
    dataset: Sequence[JudgmentRecord],
    fmt: str,
    out_path: str | Path,
    store: CaseStore,
    spec: DatasetSpec | None = None,
    compare_path: str | Path | None = None,
) -> dict:
    """Write the dataset as JSONL plus a manifest; returns the manifest.

    label_only rows carry the pair texts and the graded label; rationale
    rows are chat-style with the full staged reasoning as the assistant
    turn. The manifest lands next to the dataset with a .manifest.json
    suffix and records the content hash, so two identical builds are
    byte-comparable.
    """
    if fmt not in EXPORT_FORMATS:
        raise DomainError(f"format must be one of {EXPORT_FORMATS}, got {fmt!r}")
    rows = []
    for record in dataset:
        if record.status != "ok":
            raise DomainError(
                f"cannot export failed pair ({record.query_id!r}, {record.candidate_id!r})"
            )
        query = store.get(record.query_id)
        cand = store.get(record.candidate_id)
        if fmt == "label_only":
            rows.append(
                {
                    "query_id": record.query_id,
                    "cand_id": record.candidate_id,
                    "query_text": query.fact_text,
                    "cand_text": cand.fact_text,
                    "label": record.label,
                }
            )
        else:
            rows.append(
                {
                    "messages": [
                        {"role": "system", "content": SYSTEM_TEXT},
                        {
                            "role": "user",
                            "content": (
                                "Case A facts:\n" + query.fact_text + "\n\nCase B facts:\n"
                                + cand.fact_text + "\n\nExtract both layers of facts, compare "
                                "them, and state the graded relevance of case B to case A."
                            ),
                        },
                        {"role": "assistant", "content": _rationale_assistant_text(record)},
                    ],
                    "label": record.label,
                }
            )
    out_path = Path(out_path)
    content = dumps_jsonl(rows)
    atomic_write_text(out_path, content)
    fingerprints = {r.config_fingerprint for r in dataset}
    if len(fingerprints) > 1:
        raise IntegrityError("dataset mixes records from different configurations")
    histogram = {str(label): 0 for label in LABELS}
    for record in dataset:
        histogram[str(record.label)] += 1
    manifest = {
        "name": spec.name if spec else out_path.stem,
        "size": len(dataset),
        "mode": spec.mode if spec else None,
        "seed": spec.seed if spec else None,
        "format": fmt,
        "histogram": histogram,
        "config_fingerprint": next(iter(fingerprints)) if fingerprints else None,
        "sha256": hashlib.sha256(content.encode("utf-8")).hexdigest(),
    }
    if compare_path is not None:
        keys = {(r.query_id, r.candidate_id) for r in dataset}
        other = _read_record_keys(Path(compare_path))
        manifest["overlap_with_compare"] = len(keys & other)
    atomic_write_text(
        out_path.with_name(out_path.name + ".manifest.json"),
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n",
    )
    return manifest


def _read_record_keys(path: Path) -> set[tuple[str, str]]:
    # Accepts any JSONL whose rows carry query_id plus candidate_id or cand_id.
    keys = set()
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            cand = row.get("candidate_id", row.get("cand_id"))
            if "query_id" in row and cand is not None:
                keys.add((row["query_id"], cand))
    return keys
