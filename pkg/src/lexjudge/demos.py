"""Expert demonstration store with adaptive matching.

Demonstrations live in four sets keyed by (stage, fact type). Selection
selects the top-k lexically closest demonstrations to the stage input by
BM25 over each set; the ablated variant samples uniformly instead, seeded
per call site so results do not depend on evaluation order.
"""

from __future__ import annotations

import hashlib
import json
import random
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import EmptySetError, IntegrityError, ParseError
from .retrieval import Bm25Index, bm25_score, build_bm25_index, round_sig, tokenize


class Stage(str, Enum):
    FE = "FE"  # fact extraction
    FA = "FA"  # fact annotation


class FactType(str, Enum):
    MF = "MF"  # material facts
    LF = "LF"  # legal facts


POLARITIES = ("relevant", "irrelevant")


@dataclass(frozen=True, slots=True)
class Demonstration:
    """One worked example: stage input paired with its exemplar output.

    polarity is required for annotation demos (relevant or irrelevant
    pair) and must be absent for extraction demos.
    """

    id: str
    stage: Stage
    fact_type: FactType
    input_text: str
    exemplar_output: str
    polarity: str | None = None


class DemoLibrary:
    """Four demonstration sets, each with its own BM25 index."""

    def __init__(
        self,
        demos: Iterable[Demonstration],
        *,
        tokenizer_mode: str = "cjk_bigram",
        k1: float = 1.2,
        b: float = 0.75,
    ):
        self.tokenizer_mode = tokenizer_mode
        self._sets: dict[tuple[Stage, FactType], list[Demonstration]] = {
            (s, f): [] for s in Stage for f in FactType
        }
        seen: set[str] = set()
        for demo in demos:
            if demo.id in seen:
                raise IntegrityError(f"duplicate demonstration id {demo.id!r}")
            seen.add(demo.id)
            if not demo.input_text.strip() or not demo.exemplar_output.strip():
                raise IntegrityError(f"demonstration {demo.id!r} has empty text")
            if demo.stage is Stage.FA:
                if demo.polarity not in POLARITIES:
                    raise IntegrityError(
                        f"annotation demo {demo.id!r} needs polarity in {POLARITIES}"
                    )
            elif demo.polarity is not None:
                raise IntegrityError(f"extraction demo {demo.id!r} must not carry polarity")
            self._sets[(demo.stage, demo.fact_type)].append(demo)
        for fact_type in FactType:
            fa_set = self._sets[(Stage.FA, fact_type)]
            for polarity in POLARITIES:
                if fa_set and not any(d.polarity == polarity for d in fa_set):
                    raise IntegrityError(
                        f"FA/{fact_type.value} set has no {polarity} demonstration"
                    )
        self._indexes: dict[tuple[Stage, FactType], Bm25Index] = {}
        for key, demo_list in self._sets.items():
            if demo_list:
                docs = {d.id: tokenize(d.input_text, tokenizer_mode) for d in demo_list}
                self._indexes[key] = build_bm25_index(docs, k1=k1, b=b)

    def demo_set(self, stage: Stage, fact_type: FactType) -> list[Demonstration]:
        return list(self._sets[(stage, fact_type)])

    def counts(self) -> dict[str, int]:
        return {f"{s.value}_{f.value}": len(v) for (s, f), v in self._sets.items()}

    def __len__(self) -> int:
        return sum(len(v) for v in self._sets.values())

    def _ranked(self, x: str, stage: Stage, fact_type: FactType) -> list[Demonstration]:
        demo_list = self._sets[(stage, fact_type)]
        if not demo_list:
            raise EmptySetError(f"no demonstrations for {stage.value}/{fact_type.value}")
        index = self._indexes[(stage, fact_type)]
        query = tokenize(x, self.tokenizer_mode)
        by_id = {d.id: d for d in demo_list}
        scored = [(d.id, bm25_score(index, query, d.id)) for d in demo_list]
        scored.sort(key=lambda item: (-round_sig(item[1]), item[0]))
        return [by_id[doc_id] for doc_id, _ in scored]


def adm_select(library: DemoLibrary, x: str, stage: Stage, fact_type: FactType, k: int) -> list[Demonstration]:
    """Top-k demonstrations whose input text is lexically closest to x.

    Ordered by descending BM25 score, ties by ascending demo id; returns
    min(k, set size) items.
    """
    return library._ranked(x, stage, fact_type)[:k]


def adm_select_fa(
    library: DemoLibrary, x: str, fact_type: FactType, k_per_polarity: int
) -> tuple[list[Demonstration], list[Demonstration]]:
    """Top-k relevant and top-k irrelevant annotation demos closest to x."""
    ranked = library._ranked(x, Stage.FA, fact_type)
    relevant = [d for d in ranked if d.polarity == "relevant"][:k_per_polarity]
    irrelevant = [d for d in ranked if d.polarity == "irrelevant"][:k_per_polarity]
    return relevant, irrelevant


def _call_rng(seed: int, *key_parts: str) -> random.Random:
    digest = hashlib.sha256(("\x1f".join(key_parts) + f"|{seed}").encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def random_select(
    library: DemoLibrary,
    stage: Stage,
    fact_type: FactType,
    k: int,
    *,
    seed: int,
    call_key: str,
) -> list[Demonstration]:
    """Uniform demo sampling for the matching ablation.

    The RNG is derived from (seed, call_key, stage, fact type) so the
    draw is reproducible per call site and independent of scheduling.
    """
    demo_list = library.demo_set(stage, fact_type)
    if not demo_list:
        raise EmptySetError(f"no demonstrations for {stage.value}/{fact_type.value}")
    rng = _call_rng(seed, call_key, stage.value, fact_type.value)
    demo_list.sort(key=lambda d: d.id)
    return rng.sample(demo_list, min(k, len(demo_list)))


def random_select_fa(
    library: DemoLibrary,
    fact_type: FactType,
    k_per_polarity: int,
    *,
    seed: int,
    call_key: str,
) -> tuple[list[Demonstration], list[Demonstration]]:
    fa_set = library.demo_set(Stage.FA, fact_type)
    if not fa_set:
        raise EmptySetError(f"no demonstrations for FA/{fact_type.value}")
    out: dict[str, list[Demonstration]] = {}
    for polarity in POLARITIES:
        pool = sorted((d for d in fa_set if d.polarity == polarity), key=lambda d: d.id)
        rng = _call_rng(seed, call_key, "FA", fact_type.value, polarity)
        out[polarity] = rng.sample(pool, min(k_per_polarity, len(pool)))
    return out["relevant"], out["irrelevant"]


def _demo_from_record(record: dict, *, path: str, index: int) -> Demonstration:
    required = ("id", "stage", "fact_type", "input_text", "exemplar_output")
    for key in required:
        if key not in record:
            raise ParseError(f"demonstration #{index} missing key {key!r}", path=path)
    try:
        stage = Stage(record["stage"])
        fact_type = FactType(record["fact_type"])
    except ValueError as exc:
        raise ParseError(f"demonstration #{index}: {exc}", path=path) from None
    polarity = record.get("polarity")
    nfc = lambda s: unicodedata.normalize("NFC", str(s))
    return Demonstration(
        id=nfc(record["id"]),
        stage=stage,
        fact_type=fact_type,
        input_text=nfc(record["input_text"]),
        exemplar_output=nfc(record["exemplar_output"]),
        polarity=str(polarity) if polarity is not None else None,
    )


def load_demo_library(
    path: str | Path,
    *,
    tokenizer_mode: str = "cjk_bigram",
    k1: float = 1.2,
    b: float = 0.75,
) -> DemoLibrary:
    """Load a demonstration library from a JSON array file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc.msg}", path=str(path)) from None
    if not isinstance(raw, list):
        raise ParseError("demonstration file must hold a JSON array", path=str(path))
    demos = []
    for i, rec in enumerate(raw):
        if not isinstance(rec, dict):
            raise ParseError(f"demonstration #{i} must be a JSON object", path=str(path))
        demos.append(_demo_from_record(rec, path=str(path), index=i))
    return DemoLibrary(demos, tokenizer_mode=tokenizer_mode, k1=k1, b=b)
