"""Shared fixtures: bundled corpus handles, instrumented judges, engines."""

from __future__ import annotations

import threading

import pytest

from lexjudge.corpus import CaseStore, ingest_corpus
from lexjudge.demos import FactType, load_demo_library
from lexjudge.engine import FactExtraction, FactVerdict, JudgeEngine, JudgmentRecord
from lexjudge.gateway import (
    JudgeRequest,
    JudgeResponse,
    MockJudge,
    MockJudgeConfig,
    TokenUsage,
    load_lexicon,
    mock_complete,
    stage_of,
)
from lexjudge.toydata import toy_paths


@pytest.fixture(scope="session")
def toy():
    return toy_paths()


@pytest.fixture(scope="session")
def toy_corpus(toy):
    """(store, pools, qrels) for the bundled corpus."""
    return ingest_corpus(toy.cases, toy.pools, toy.qrels)


@pytest.fixture(scope="session")
def toy_lexicon(toy):
    return load_lexicon(toy.lexicon)


@pytest.fixture(scope="session")
def toy_library(toy):
    return load_demo_library(toy.demos)


@pytest.fixture()
def mock_cfg(toy_lexicon):
    return MockJudgeConfig(lexicon=toy_lexicon)


@pytest.fixture()
def mock_judge(mock_cfg):
    return MockJudge(mock_cfg)


class InstrumentedJudge:
    """Wraps a judge, recording the stage marker of every request."""

    def __init__(self, inner):
        self.inner = inner
        self.stages: list[str] = []
        self._lock = threading.Lock()

    def complete(self, request: JudgeRequest) -> JudgeResponse:
        stage = stage_of(request.user_text) or "UNKNOWN"
        with self._lock:
            self.stages.append(stage)
        return self.inner.complete(request)

    def count(self, prefix: str) -> int:
        return sum(1 for s in self.stages if s.startswith(prefix))


@pytest.fixture()
def instrumented(mock_judge):
    return InstrumentedJudge(mock_judge)


class ScriptedJudge:
    """Returns canned response texts in order; records every request."""

    def __init__(self, texts):
        self.texts = list(texts)
        self.requests: list[JudgeRequest] = []

    def complete(self, request: JudgeRequest) -> JudgeResponse:
        self.requests.append(request)
        if not self.texts:
            raise AssertionError("scripted judge ran out of responses")
        return JudgeResponse(
            text=self.texts.pop(0), usage=TokenUsage(1, 1), latency_ms=0.0
        )


class FaultyOnPairJudge:
    """Mock judge that garbles FA_MF responses for one (query, cand) pair.

    The garbled text carries no verdict line, so the stage exhausts its
    retries and the pair must surface as a failed record.
    """

    def __init__(self, cfg: MockJudgeConfig, poisoned_fragment: str):
        self.cfg = cfg
        self.poisoned_fragment = poisoned_fragment

    def complete(self, request: JudgeRequest) -> JudgeResponse:
        if (
            stage_of(request.user_text) == "FA_MF"
            and self.poisoned_fragment in request.user_text
        ):
            return JudgeResponse(
                text="no verdict provided", usage=TokenUsage(1, 1), latency_ms=0.0
            )
        return mock_complete(request, self.cfg)


def fabricate_record(
    query_id: str,
    candidate_id: str,
    label: int,
    *,
    status: str = "ok",
    run_id: str = "r1",
    query_text: str = "query facts",
    cand_text: str = "candidate facts",
) -> JudgmentRecord:
    """Hand-built judgment record whose verdicts are consistent with label."""
    if status != "ok":
        return JudgmentRecord(
            query_id=query_id,
            candidate_id=candidate_id,
            status=status,
            label=None,
            mf_extractions=None,
            lf_extractions=None,
            mf_verdict=None,
            lf_verdict=None,
            run_id=run_id,
            config_fingerprint="fab0",
            error="fabricated failure",
        )
    mf = bool(label & 1)
    lf = bool(label & 2)
    verdict_word = {True: "VERDICT: RELEVANT", False: "VERDICT: IRRELEVANT"}
    return JudgmentRecord(
        query_id=query_id,
        candidate_id=candidate_id,
        status="ok",
        label=label,
        mf_extractions=(
            FactExtraction(query_id, FactType.MF, query_text, f"===FACTS===\n{query_text}\n===END==="),
            FactExtraction(candidate_id, FactType.MF, cand_text, f"===FACTS===\n{cand_text}\n===END==="),
        ),
        lf_extractions=(
            FactExtraction(query_id, FactType.LF, "tag_q", "===FACTS===\ntag_q\n===END==="),
            FactExtraction(candidate_id, FactType.LF, "tag_c", "===FACTS===\ntag_c\n===END==="),
        ),
        mf_verdict=FactVerdict(FactType.MF, mf, "material comparison", f"material comparison\n{verdict_word[mf]}"),
        lf_verdict=FactVerdict(FactType.LF, lf, "legal comparison", f"legal comparison\n{verdict_word[lf]}"),
        run_id=run_id,
        config_fingerprint="fab0",
    )


def make_engine(judge, library, **kwargs) -> JudgeEngine:
    return JudgeEngine(judge, library, **kwargs)


@pytest.fixture()
def engine_factory(toy_library):
    def factory(judge, **kwargs):
        return make_engine(judge, toy_library, **kwargs)

    return factory


@pytest.fixture(scope="session")
def toy_store_only(toy_corpus) -> CaseStore:
    return toy_corpus[0]
