"""Mock-judge rules and the chat-completions backend (faults injected)."""

from __future__ import annotations

import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexjudge.errors import AuthError, DomainError, MalformedStageMarker, UpstreamError
from lexjudge.gateway import (
    ChatCompletionsJudge,
    FACTS_BEGIN,
    FACTS_END,
    INPUT_A,
    INPUT_B,
    JudgeRequest,
    MockJudgeConfig,
    STAGE_PREFIX,
    TARGET_BEGIN,
    TARGET_END,
    TransportError,
    load_lexicon,
    mock_complete,
    mock_lf_tags,
    mock_tokens,
    request_hash,
    stage_of,
)

from oracles import normalized_tokens

CJK_TEXT = st.text(
    alphabet=st.sampled_from(list("盗窃抢劫罪被告人案ab1 。，；")), max_size=30
)


def req(stage: str, target: str, temperature: float = 0.4) -> JudgeRequest:
    return JudgeRequest(
        system_text="system",
        user_text=f"{STAGE_PREFIX}{stage}\n{TARGET_BEGIN}\n{target}\n{TARGET_END}",
        temperature=temperature,
        model="m",
        max_tokens=64,
    )


def pair_target(a: str, b: str) -> str:
    return f"{INPUT_A}\n{a}\n{INPUT_B}\n{b}"


class TestRequestBasics:
    def test_empty_user_text(self):
        with pytest.raises(DomainError):
            JudgeRequest(system_text="", user_text="", temperature=0.4, model="m")

    def test_temperature_range(self):
        with pytest.raises(DomainError):
            JudgeRequest(system_text="", user_text="x", temperature=2.5, model="m")

    def test_request_hash_distinguishes_fields(self):
        base = JudgeRequest(system_text="s", user_text="u", temperature=0.4, model="m")
        assert request_hash(base) != request_hash(
            JudgeRequest(system_text="s", user_text="u!", temperature=0.4, model="m")
        )
        assert request_hash(base) != request_hash(
            JudgeRequest(system_text="s", user_text="u", temperature=0.5, model="m")
        )

    def test_stage_of(self):
        assert stage_of("#STAGE:FE_MF\nbody") == "FE_MF"
        assert stage_of("intro\n#STAGE:FA_LF\nbody") == "FA_LF"
        assert stage_of("#STAGE:XX\nbody") is None
        assert stage_of("no marker") is None


class TestMockRules:
    def test_threshold_validation(self):
        with pytest.raises(DomainError):
            MockJudgeConfig(mf_jaccard_threshold=0.0)
        with pytest.raises(DomainError):
            MockJudgeConfig(mf_jaccard_threshold=1.5)

    def test_fe_mf_emits_normalized_tokens(self, mock_cfg):
        response = mock_complete(req("FE_MF", "被告人王某，盗窃财物。"), mock_cfg)
        body = response.text
        assert body.startswith(FACTS_BEGIN) and body.endswith(FACTS_END)
        tokens = body.splitlines()[1].split()
        assert tokens == mock_tokens("被告人王某，盗窃财物。")
        assert len(tokens) == len(set(tokens))

    def test_fe_lf_emits_lexicon_intersection(self, mock_cfg):
        response = mock_complete(req("FE_LF", "某人实施盗窃并逃跑"), mock_cfg)
        assert response.text.splitlines()[1].split() == ["盗窃"]

    def test_fa_mf_identical_texts_relevant(self, mock_cfg):
        target = pair_target("被告 告人 盗窃", "被告 告人 盗窃")
        response = mock_complete(req("FA_MF", target), mock_cfg)
        assert response.text.endswith("VERDICT: RELEVANT")

    def test_fa_mf_two_of_six_irrelevant(self, mock_cfg):
        # |A ∩ B| = 2, |A ∪ B| = 6 so Jaccard = 1/3 < 0.4
        target = pair_target("w1 w2 w3 w4", "w1 w2 w5 w6")
        response = mock_complete(req("FA_MF", target), mock_cfg)
        assert response.text.endswith("VERDICT: IRRELEVANT")
        assert "jaccard=0.3333" in response.text

    def test_fa_mf_disjoint_irrelevant(self, mock_cfg):
        response = mock_complete(req("FA_MF", pair_target("a b", "c d")), mock_cfg)
        assert response.text.endswith("VERDICT: IRRELEVANT")

    def test_fa_lf_shared_tag_relevant(self, mock_cfg):
        response = mock_complete(req("FA_LF", pair_target("盗窃 抢劫", "盗窃")), mock_cfg)
        assert response.text.endswith("VERDICT: RELEVANT")

    def test_fa_lf_no_shared_tag_irrelevant(self, mock_cfg):
        response = mock_complete(req("FA_LF", pair_target("盗窃", "抢劫")), mock_cfg)
        assert response.text.endswith("VERDICT: IRRELEVANT")

    def test_temperature_ignored(self, mock_cfg):
        cold = mock_complete(req("FE_MF", "盗窃案件", 0.0), mock_cfg)
        hot = mock_complete(req("FE_MF", "盗窃案件", 1.9), mock_cfg)
        assert cold.text == hot.text

    def test_pure_under_repetition(self, mock_cfg):
        request = req("FA_MF", pair_target("盗窃 案件", "盗窃 案件 另外"))
        assert mock_complete(request, mock_cfg).text == mock_complete(request, mock_cfg).text

    def test_missing_stage_marker(self, mock_cfg):
        request = JudgeRequest(
            system_text="", user_text="plain text", temperature=0.4, model="m"
        )
        with pytest.raises(MalformedStageMarker):
            mock_complete(request, mock_cfg)

    def test_missing_target_block(self, mock_cfg):
        request = JudgeRequest(
            system_text="", user_text="#STAGE:FE_MF\nno target", temperature=0.4, model="m"
        )
        with pytest.raises(MalformedStageMarker):
            mock_complete(request, mock_cfg)

    def test_fa_without_input_sections(self, mock_cfg):
        with pytest.raises(MalformedStageMarker):
            mock_complete(req("FA_MF", "just one blob"), mock_cfg)

    @given(CJK_TEXT)
    @settings(max_examples=200)
    def test_tokens_match_independent_rules(self, text):
        assert mock_tokens(text) == normalized_tokens(text)

    @given(CJK_TEXT)
    @settings(max_examples=200)
    def test_tokens_idempotent_over_space_join(self, text):
        tokens = mock_tokens(text)
        assert mock_tokens(" ".join(tokens)) == tokens

    def test_lf_tags_sorted(self):
        lexicon = frozenset({"盗窃", "抢劫"})
        assert mock_lf_tags(["抢劫", "盗窃", "其他"], lexicon) == ["抢劫", "盗窃"]

    def test_load_lexicon_skips_comments(self, tmp_path):
        path = tmp_path / "lexicon.txt"
        path.write_text("# header\n盗窃\n\n 抢劫 \n", encoding="utf-8")
        assert load_lexicon(path) == frozenset({"盗窃", "抢劫"})


# -- chat-completions backend -------------------------------------------------


class FakeTransport:
    """Scripted (status, payload) responses; raises TransportError entries."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []
        self.lock = threading.Lock()

    def __call__(self, url, headers, payload, timeout):
        with self.lock:
            self.calls.append({"url": url, "headers": headers, "payload": payload})
            step = self.script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


def ok_payload(text="ok"):
    return (
        200,
        {
            "choices": [{"message": {"content": text}}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 3},
        },
    )


class FakeTime:
    """Deterministic clock whose sleep advances it, recording every wait."""

    def __init__(self):
        self.now = 0.0
        self.sleeps: list[float] = []

    def clock(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.now += seconds


def make_judge(transport, tmp_path, monkeypatch, **kwargs):
    monkeypatch.setenv("TEST_JUDGE_KEY", "secret-key")
    defaults = dict(
        base_url="https://backend.example/v1",
        model="m",
        key_env="TEST_JUDGE_KEY",
        timeout=5.0,
        retry=2,
        backoff_base=1.0,
        rate_limit_rpm=None,
        cache_dir=None,
        transcript_path=str(tmp_path / "transcript.jsonl"),
        transport=transport,
    )
    defaults.update(kwargs)
    fake = FakeTime()
    judge = ChatCompletionsJudge(**defaults, sleep=fake.sleep, clock=fake.clock)
    return judge, fake.sleeps


def plain_request(text="hello") -> JudgeRequest:
    return JudgeRequest(
        system_text="sys",
        user_text=f"{STAGE_PREFIX}FE_MF\n{TARGET_BEGIN}\n{text}\n{TARGET_END}",
        temperature=0.4,
        model="m",
        max_tokens=64,
    )


class TestChatCompletionsJudge:
    def test_success_roundtrip(self, tmp_path, monkeypatch):
        transport = FakeTransport([ok_payload("the answer")])
        judge, _ = make_judge(transport, tmp_path, monkeypatch)
        response = judge.complete(plain_request())
        assert response.text == "the answer"
        assert response.cached is False
        assert response.usage.prompt_tokens == 5
        body = transport.calls[0]["payload"]
        assert body["model"] == "m"
        assert body["messages"][0]["role"] == "system"
        assert body["messages"][1]["role"] == "user"
        assert transport.calls[0]["headers"]["Authorization"] == "Bearer secret-key"

    def test_missing_api_key(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ABSENT_KEY_VAR", raising=False)
        transport = FakeTransport([ok_payload()])
        judge = ChatCompletionsJudge(
            base_url="https://backend.example/v1",
            model="m",
            key_env="ABSENT_KEY_VAR",
            transport=transport,
        )
        with pytest.raises(AuthError):
            judge.complete(plain_request())
        assert transport.calls == []  # refused before any network use

    def test_retry_on_429_then_success(self, tmp_path, monkeypatch):
        transport = FakeTransport([(429, {}), (429, {}), ok_payload()])
        judge, sleeps = make_judge(transport, tmp_path, monkeypatch)
        response = judge.complete(plain_request())
        assert response.text == "ok"
        assert len(transport.calls) == 3
        # exponential backoff before each retry: base * 2^(attempt-1)
        assert sleeps == [1.0, 2.0]

    def test_retry_on_transport_error(self, tmp_path, monkeypatch):
        transport = FakeTransport([TransportError("timeout"), ok_payload()])
        judge, _ = make_judge(transport, tmp_path, monkeypatch)
        assert judge.complete(plain_request()).text == "ok"
        assert len(transport.calls) == 2

    def test_budget_exhausted(self, tmp_path, monkeypatch):
        transport = FakeTransport([(503, {}), (503, {}), (503, {})])
        judge, _ = make_judge(transport, tmp_path, monkeypatch)
        with pytest.raises(UpstreamError):
            judge.complete(plain_request())
        assert len(transport.calls) == 3  # retry=2 means three attempts

    def test_auth_failure_never_retried(self, tmp_path, monkeypatch):
        transport = FakeTransport([(401, {}), ok_payload()])
        judge, _ = make_judge(transport, tmp_path, monkeypatch)
        with pytest.raises(AuthError):
            judge.complete(plain_request())
        assert len(transport.calls) == 1

    def test_other_client_error_fails_fast(self, tmp_path, monkeypatch):
        transport = FakeTransport([(400, {"error": "bad request"}), ok_payload()])
        judge, _ = make_judge(transport, tmp_path, monkeypatch)
        with pytest.raises(UpstreamError):
            judge.complete(plain_request())
        assert len(transport.calls) == 1

    def test_cache_hit_skips_backend(self, tmp_path, monkeypatch):
        transport = FakeTransport([ok_payload("first")])
        judge, _ = make_judge(
            transport, tmp_path, monkeypatch, cache_dir=str(tmp_path / "cache")
        )
        first = judge.complete(plain_request())
        second = judge.complete(plain_request())
        assert first.cached is False and second.cached is True
        assert second.text == "first"
        assert len(transport.calls) == 1

    def test_cache_distinguishes_requests(self, tmp_path, monkeypatch):
        transport = FakeTransport([ok_payload("one"), ok_payload("two")])
        judge, _ = make_judge(
            transport, tmp_path, monkeypatch, cache_dir=str(tmp_path / "cache")
        )
        assert judge.complete(plain_request("a")).text == "one"
        assert judge.complete(plain_request("b")).text == "two"
        assert len(transport.calls) == 2

    def test_cache_survives_new_judge_instance(self, tmp_path, monkeypatch):
        cache_dir = str(tmp_path / "cache")
        transport = FakeTransport([ok_payload("persisted")])
        judge, _ = make_judge(transport, tmp_path, monkeypatch, cache_dir=cache_dir)
        judge.complete(plain_request())
        fresh_transport = FakeTransport([])
        fresh_judge, _ = make_judge(
            fresh_transport, tmp_path, monkeypatch, cache_dir=cache_dir
        )
        assert fresh_judge.complete(plain_request()).text == "persisted"
        assert fresh_transport.calls == []

    def test_transcript_one_line_per_backend_call(self, tmp_path, monkeypatch):
        transcript = tmp_path / "transcript.jsonl"
        transport = FakeTransport([ok_payload("x"), ok_payload("y")])
        judge, _ = make_judge(
            transport,
            tmp_path,
            monkeypatch,
            cache_dir=str(tmp_path / "cache"),
            transcript_path=str(transcript),
        )
        judge.complete(plain_request("a"))
        judge.complete(plain_request("a"))  # cached: no new transcript line
        judge.complete(plain_request("b"))
        lines = [json.loads(l) for l in transcript.read_text().splitlines()]
        assert len(lines) == 2
        for entry in lines:
            assert set(entry) == {"ts", "request_hash", "stage", "model", "latency_ms", "usage"}
            assert entry["stage"] == "FE_MF"

    def test_rate_limit_sleeps_when_bucket_empty(self, tmp_path, monkeypatch):
        transport = FakeTransport([ok_payload(), ok_payload(), ok_payload()])
        judge, sleeps = make_judge(
            transport, tmp_path, monkeypatch, rate_limit_rpm=2
        )
        judge.complete(plain_request("a"))
        judge.complete(plain_request("b"))
        assert sleeps == []
        judge.complete(plain_request("c"))  # bucket of 2 exhausted at t=0
        # refilling one token at 2 requests/minute takes 30 seconds
        assert sleeps == [pytest.approx(30.0)]

    def test_malformed_success_payload(self, tmp_path, monkeypatch):
        transport = FakeTransport([(200, {"unexpected": True})])
        judge, _ = make_judge(transport, tmp_path, monkeypatch)
        with pytest.raises(UpstreamError):
            judge.complete(plain_request())
