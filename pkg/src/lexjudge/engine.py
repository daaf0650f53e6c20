"""Staged relevance judging.

A pair is judged in six steps, material facts always before legal facts:
extract the material facts of the query and the candidate, derive the legal
facts of each from its extracted material facts, then annotate relevance
per fact layer and combine the two binary verdicts into the graded label
(1 point for material facts, 2 for legal facts).

Every prompt is assembled from an editable template plus adaptively
matched demonstrations. Three ablation switches exist: disable_adm swaps
matching for seeded random sampling, disable_fe forwards raw fact text
without extraction prompts, disable_fa_demos drops the polarity
demonstrations from annotation prompts.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from ._util import atomic_write_text, dumps_jsonl
from .corpus import Case, CandidatePool, CaseStore, aggregate_label
from .demos import (
    DemoLibrary,
    Demonstration,
    FactType,
    Stage,
    adm_select,
    adm_select_fa,
    random_select,
    random_select_fa,
)
from .errors import (
    DomainError,
    JudgeResponseUnparseable,
    StageFailure,
    TemplateError,
)
from .gateway import (
    FACTS_BEGIN,
    FACTS_END,
    INPUT_A,
    INPUT_B,
    STAGE_PREFIX,
    TARGET_BEGIN,
    TARGET_END,
    Judge,
    JudgeRequest,
)

SYSTEM_TEXT = (
    "You are a careful legal annotator comparing criminal cases. "
    "Follow the requested output format exactly."
)

TASK_DESCRIPTIONS = {
    ("FE", "MF"): (
        "Read the case below and extract its Material Facts as a concise "
        "sequence of key elements."
    ),
    ("FE", "LF"): (
        "Read the extracted Material Facts below and state the Legal Facts "
        "they support."
    ),
    ("FA", "MF"): (
        "Decide whether the Material Facts of case A are relevant to the "
        "Material Facts of case B."
    ),
    ("FA", "LF"): (
        "Decide whether the Legal Facts of case A are relevant to the "
        "Legal Facts of case B."
    ),
}

DEFINITIONS = {
    "MF": (
        "Material Facts are the objective elements of a case: the parties, "
        "the cause of the dispute, how the conduct unfolded, its outcome, "
        "and when and where it took place."
    ),
    "LF": (
        "Legal Facts are the legal evaluation of the Material Facts, such "
        "as the actor's intent, any fault of the victim, and the causal "
        "link between the conduct and the harm."
    ),
}

FE_REMINDER = (
    "Reminder: output the facts between a line ===FACTS=== and a line ===END===."
)
FA_REMINDER = (
    "Reminder: end with one line reading exactly VERDICT: RELEVANT or "
    "VERDICT: IRRELEVANT."
)

TEMPLATE_NAMES = ("fe_mf", "fe_lf", "fa_mf", "fa_lf")
_PLACEHOLDER_RE = re.compile(r"\{\{([a-z_]+)\}\}")
_KNOWN_PLACEHOLDERS = {"task_description", "definitions", "demos", "target"}
_VERDICT_RE = re.compile(r"^\s*VERDICT:\s*(RELEVANT|IRRELEVANT)\s*$", re.IGNORECASE)


def load_templates(templates_dir: str | Path | None = None) -> dict[str, str]:
    """Read the four prompt templates, validating their placeholders."""
    templates: dict[str, str] = {}
    for name in TEMPLATE_NAMES:
        if templates_dir is None:
            ref = resources.files("lexjudge").joinpath(f"templates/{name}.txt")
            if not ref.is_file():
                raise TemplateError(f"packaged template {name}.txt is missing")
            text = ref.read_text(encoding="utf-8")
        else:
            path = Path(templates_dir) / f"{name}.txt"
            if not path.is_file():
                raise TemplateError(f"template file not found: {path}")
            text = path.read_text(encoding="utf-8")
        found = set(_PLACEHOLDER_RE.findall(text))
        unknown = found - _KNOWN_PLACEHOLDERS
        if unknown:
            raise TemplateError(f"template {name} has unknown placeholder(s): {sorted(unknown)}")
        missing = _KNOWN_PLACEHOLDERS - found
        if missing:
            raise TemplateError(f"template {name} lacks placeholder(s): {sorted(missing)}")
        templates[name] = text
    return templates


def serialize_demos(demos: Sequence[Demonstration]) -> str:
    blocks = []
    for i, demo in enumerate(demos, start=1):
        tag = f" ({demo.polarity} pair)" if demo.polarity else ""
        out_word = "judgment" if demo.stage is Stage.FA else "extraction"
        blocks.append(
            f"Example {i}{tag} input:\n{demo.input_text}\n"
            f"Example {i}{tag} {out_word}:\n{demo.exemplar_output}"
        )
    return "\n\n".join(blocks)


def assemble_prompt(
    stage: Stage,
    fact_type: FactType,
    demos: Sequence[Demonstration],
    target: str,
    *,
    templates: Mapping[str, str] | None = None,
) -> str:
    """Fill a stage template; the target always lands after the demos.

    Substitution is single-pass, so braces inside case text or
    demonstrations are never re-expanded.
    """
    if templates is None:
        templates = load_templates()
    name = f"{stage.value}_{fact_type.value}".lower()
    template = templates[name]
    values = {
        "task_description": TASK_DESCRIPTIONS[(stage.value, fact_type.value)],
        "definitions": DEFINITIONS[fact_type.value],
        "demos": serialize_demos(demos),
        "target": target,
    }
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)


def parse_facts_block(raw_text: str) -> str:
    lines = raw_text.splitlines()
    stripped = [line.strip() for line in lines]
    try:
        start = stripped.index(FACTS_BEGIN)
        end = stripped.index(FACTS_END, start + 1)
    except ValueError:
        raise JudgeResponseUnparseable("no facts block between sentinels") from None
    return "\n".join(lines[start + 1 : end]).strip()


def parse_verdict(raw_text: str) -> tuple[bool, str]:
    lines = raw_text.splitlines()
    for i in range(len(lines) - 1, -1, -1):
        if not lines[i].strip():
            continue
        match = _VERDICT_RE.match(lines[i])
        if match:
            reasoning = "\n".join(lines[:i]).strip()
            return match.group(1).upper() == "RELEVANT", reasoning
        break
    raise JudgeResponseUnparseable("reply does not end with a verdict line")


def parse_judge_response(stage: Stage, raw_text: str) -> str | tuple[bool, str]:
    """Extraction text for FE replies, (verdict, reasoning) for FA replies."""
    if stage is Stage.FE:
        return parse_facts_block(raw_text)
    return parse_verdict(raw_text)


@dataclass(frozen=True, slots=True)
class AblationFlags:
    disable_adm: bool = False
    disable_fe: bool = False
    disable_fa_demos: bool = False

    def to_dict(self) -> dict[str, bool]:
        return {
            "disable_adm": self.disable_adm,
            "disable_fe": self.disable_fe,
            "disable_fa_demos": self.disable_fa_demos,
        }


@dataclass(frozen=True, slots=True)
class FactExtraction:
    case_id: str
    fact_type: FactType
    text: str
    raw_response: str


@dataclass(frozen=True, slots=True)
class FactVerdict:
    fact_type: FactType
    relevant: bool
    reasoning: str
    raw_response: str


@dataclass(frozen=True, slots=True)
class JudgmentRecord:
    """Full audit trail of one judged pair; failed pairs keep status and error."""

    query_id: str
    candidate_id: str
    status: str
    label: int | None
    mf_extractions: tuple[FactExtraction, FactExtraction] | None
    lf_extractions: tuple[FactExtraction, FactExtraction] | None
    mf_verdict: FactVerdict | None
    lf_verdict: FactVerdict | None
    run_id: str
    config_fingerprint: str
    error: str | None = None

    def to_dict(self) -> dict:
        def ex(pair: tuple[FactExtraction, FactExtraction] | None) -> dict | None:
            if pair is None:
                return None
            return {
                "query": {"text": pair[0].text, "raw_response": pair[0].raw_response},
                "candidate": {"text": pair[1].text, "raw_response": pair[1].raw_response},
            }

        def ve(v: FactVerdict | None) -> dict | None:
            if v is None:
                return None
            return {"relevant": v.relevant, "reasoning": v.reasoning, "raw_response": v.raw_response}

        return {
            "query_id": self.query_id,
            "candidate_id": self.candidate_id,
            "status": self.status,
            "label": self.label,
            "mf": {"extractions": ex(self.mf_extractions), "verdict": ve(self.mf_verdict)},
            "lf": {"extractions": ex(self.lf_extractions), "verdict": ve(self.lf_verdict)},
            "run_id": self.run_id,
            "config_fingerprint": self.config_fingerprint,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "JudgmentRecord":
        def ex(block: Mapping | None, fact_type: FactType, qid: str, cid: str):
            if block is None:
                return None
            return (
                FactExtraction(qid, fact_type, block["query"]["text"], block["query"]["raw_response"]),
                FactExtraction(cid, fact_type, block["candidate"]["text"], block["candidate"]["raw_response"]),
            )

        def ve(block: Mapping | None, fact_type: FactType):
            if block is None:
                return None
            return FactVerdict(fact_type, bool(block["relevant"]), block["reasoning"], block["raw_response"])

        qid = data["query_id"]
        cid = data["candidate_id"]
        return cls(
            query_id=qid,
            candidate_id=cid,
            status=data["status"],
            label=data["label"],
            mf_extractions=ex(data["mf"]["extractions"], FactType.MF, qid, cid),
            lf_extractions=ex(data["lf"]["extractions"], FactType.LF, qid, cid),
            mf_verdict=ve(data["mf"]["verdict"], FactType.MF),
            lf_verdict=ve(data["lf"]["verdict"], FactType.LF),
            run_id=data["run_id"],
            config_fingerprint=data["config_fingerprint"],
            error=data.get("error"),
        )


def compute_fingerprint(
    *,
    model: str,
    temperature: float,
    top_k_demos: int,
    fa_demos_per_polarity: int,
    flags: AblationFlags,
    templates: Mapping[str, str],
) -> str:
    payload = {
        "model": model,
        "temperature": temperature,
        "top_k_demos": top_k_demos,
        "fa_demos_per_polarity": fa_demos_per_polarity,
        "ablation": flags.to_dict(),
        "templates": {
            name: hashlib.sha256(text.encode("utf-8")).hexdigest()
            for name, text in sorted(templates.items())
        },
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class JudgeEngine:
    """Drives the staged workflow against any judge backend.

    Fact extraction results are cached per (case id, fact type) for the
    lifetime of the engine, so a query case is extracted once per run no
    matter how many candidates it faces.
    """

    def __init__(
        self,
        judge: Judge,
        library: DemoLibrary,
        *,
        model: str = "gpt-3.5-turbo",
        temperature: float = 0.4,
        max_tokens: int = 1024,
        top_k_demos: int = 2,
        fa_demos_per_polarity: int = 2,
        retry: int = 2,
        flags: AblationFlags | None = None,
        templates_dir: str | Path | None = None,
        sampling_seed: int = 0,
        parallelism: int = 1,
        run_id: str | None = None,
    ):
        if top_k_demos < 1 or fa_demos_per_polarity < 1:
            raise DomainError("demo counts must be >= 1")
        if retry < 0:
            raise DomainError("retry budget must be >= 0")
        if parallelism < 1:
            raise DomainError("parallelism must be >= 1")
        self.judge = judge
        self.library = library
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.top_k_demos = top_k_demos
        self.fa_demos_per_polarity = fa_demos_per_polarity
        self.retry = retry
        self.flags = flags or AblationFlags()
        self.templates = load_templates(templates_dir)
        self.sampling_seed = sampling_seed
        self.parallelism = parallelism
        self.config_fingerprint = compute_fingerprint(
            model=model,
            temperature=temperature,
            top_k_demos=top_k_demos,
            fa_demos_per_polarity=fa_demos_per_polarity,
            flags=self.flags,
            templates=self.templates,
        )
        self.run_id = run_id if run_id is not None else "r1"
        self._fe_cache: dict[tuple[str, str], FactExtraction] = {}
        self._fe_lock = threading.Lock()

    # -- prompting ---------------------------------------------------------

    def _user_text(self, stage: Stage, fact_type: FactType, demos: Sequence[Demonstration], target: str) -> str:
        wrapped = f"{TARGET_BEGIN}\n{target}\n{TARGET_END}"
        body = assemble_prompt(stage, fact_type, demos, wrapped, templates=self.templates)
        return f"{STAGE_PREFIX}{stage.value}_{fact_type.value}\n{body}"

    def _complete_with_retry(self, user_text: str, reminder: str):
        last = "no attempt made"
        for attempt in range(self.retry + 1):
            text = user_text if attempt == 0 else f"{user_text}\n\n{reminder}"
            request = JudgeRequest(
                system_text=SYSTEM_TEXT,
                user_text=text,
                temperature=self.temperature,
                model=self.model,
                max_tokens=self.max_tokens,
            )
            response = self.judge.complete(request)
            yield response
            last = "reply did not follow the response protocol"
        raise JudgeResponseUnparseable(f"{last} after {self.retry + 1} attempt(s)")

    # -- stages ------------------------------------------------------------

    def extract_fact(
        self,
        case: Case,
        fact_type: FactType,
        prior_mf: FactExtraction | None = None,
    ) -> FactExtraction:
        """Run one extraction stage for a case.

        Legal-fact extraction consumes the case's extracted material facts,
        never the raw text, unless extraction is ablated entirely.
        """
        if self.flags.disable_fe:
            return FactExtraction(case.id, fact_type, case.fact_text, "")
        if fact_type is FactType.LF:
            if prior_mf is None:
                raise DomainError("legal-fact extraction requires the material-fact extraction")
            target = prior_mf.text
        else:
            target = case.fact_text
        if self.flags.disable_adm:
            demos = random_select(
                self.library,
                Stage.FE,
                fact_type,
                self.top_k_demos,
                seed=self.sampling_seed,
                call_key=f"FE:{fact_type.value}:{case.id}",
            )
        else:
            demos = adm_select(self.library, target, Stage.FE, fact_type, self.top_k_demos)
        user_text = self._user_text(Stage.FE, fact_type, demos, target)
        for response in self._complete_with_retry(user_text, FE_REMINDER):
            try:
                text = parse_facts_block(response.text)
            except JudgeResponseUnparseable:
                continue
            if text:
                return FactExtraction(case.id, fact_type, text, response.text)
        raise AssertionError("unreachable")  # _complete_with_retry raises

    def judge_fact_pair(
        self,
        a: FactExtraction,
        b: FactExtraction,
        fact_type: FactType,
    ) -> FactVerdict:
        """Annotate one fact layer of a pair of extractions."""
        target = f"{INPUT_A}\n{a.text}\n{INPUT_B}\n{b.text}"
        if self.flags.disable_fa_demos:
            demos: list[Demonstration] = []
        elif self.flags.disable_adm:
            relevant, irrelevant = random_select_fa(
                self.library,
                fact_type,
                self.fa_demos_per_polarity,
                seed=self.sampling_seed,
                call_key=f"FA:{fact_type.value}:{a.case_id}|{b.case_id}",
            )
            demos = relevant + irrelevant
        else:
            relevant, irrelevant = adm_select_fa(
                self.library, f"{a.text}\n{b.text}", fact_type, self.fa_demos_per_polarity
            )
            demos = relevant + irrelevant
        user_text = self._user_text(Stage.FA, fact_type, demos, target)
        for response in self._complete_with_retry(user_text, FA_REMINDER):
            try:
                relevant_flag, reasoning = parse_verdict(response.text)
            except JudgeResponseUnparseable:
                continue
            return FactVerdict(fact_type, relevant_flag, reasoning, response.text)
        raise AssertionError("unreachable")

    # -- pair and pool drivers ----------------------------------------------

    def _cached_extract(self, case: Case, fact_type: FactType, prior_mf: FactExtraction | None = None) -> FactExtraction:
        key = (case.id, fact_type.value)
        with self._fe_lock:
            hit = self._fe_cache.get(key)
        if hit is not None:
            return hit
        extraction = self.extract_fact(case, fact_type, prior_mf)
        with self._fe_lock:
            return self._fe_cache.setdefault(key, extraction)

    def judge_pair(self, query: Case, candidate: Case) -> JudgmentRecord:
        """Judge one pair through all six stages, material facts first."""

        def run(stage: Stage, fact_type: FactType, fn):
            try:
                return fn()
            except StageFailure:
                raise
            except Exception as exc:
                raise StageFailure(stage.value, fact_type.value, str(exc)) from exc

        mf_q = run(Stage.FE, FactType.MF, lambda: self._cached_extract(query, FactType.MF))
        mf_c = run(Stage.FE, FactType.MF, lambda: self._cached_extract(candidate, FactType.MF))
        lf_q = run(Stage.FE, FactType.LF, lambda: self._cached_extract(query, FactType.LF, mf_q))
        lf_c = run(Stage.FE, FactType.LF, lambda: self._cached_extract(candidate, FactType.LF, mf_c))
        mf_verdict = run(Stage.FA, FactType.MF, lambda: self.judge_fact_pair(mf_q, mf_c, FactType.MF))
        lf_verdict = run(Stage.FA, FactType.LF, lambda: self.judge_fact_pair(lf_q, lf_c, FactType.LF))
        return JudgmentRecord(
            query_id=query.id,
            candidate_id=candidate.id,
            status="ok",
            label=aggregate_label(mf_verdict.relevant, lf_verdict.relevant),
            mf_extractions=(mf_q, mf_c),
            lf_extractions=(lf_q, lf_c),
            mf_verdict=mf_verdict,
            lf_verdict=lf_verdict,
            run_id=self.run_id,
            config_fingerprint=self.config_fingerprint,
        )

    def _failed_record(self, query_id: str, candidate_id: str, error: str) -> JudgmentRecord:
        return JudgmentRecord(
            query_id=query_id,
            candidate_id=candidate_id,
            status="failed",
            label=None,
            mf_extractions=None,
            lf_extractions=None,
            mf_verdict=None,
            lf_verdict=None,
            run_id=self.run_id,
            config_fingerprint=self.config_fingerprint,
            error=error,
        )

    def _judge_pair_safe(self, query: Case, candidate: Case) -> JudgmentRecord:
        try:
            return self.judge_pair(query, candidate)
        except Exception as exc:
            return self._failed_record(query.id, candidate.id, str(exc))

    def judge_query(self, query: Case, candidates: Sequence[Case], top_n: int | None = None) -> list[JudgmentRecord]:
        """Judge a query against the first top_n of its candidates.

        Pair failures become failed records rather than aborting the pool;
        output order always follows the candidate order.
        """
        chosen = list(candidates if top_n is None else candidates[:top_n])
        if self.parallelism > 1 and len(chosen) > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                return list(pool.map(lambda c: self._judge_pair_safe(query, c), chosen))
        return [self._judge_pair_safe(query, c) for c in chosen]

    def judge_pools(
        self,
        store: CaseStore,
        pools: Sequence[CandidatePool],
        top_n: int | None = None,
    ) -> list[JudgmentRecord]:
        records: list[JudgmentRecord] = []
        for pool in pools:
            query = store.get(pool.query_id)
            candidates = [store.get(cid) for cid in pool.candidate_ids]
            records.extend(self.judge_query(query, candidates, top_n))
        return records


def write_records_jsonl(path: str | Path, records: Sequence[JudgmentRecord]) -> None:
    atomic_write_text(path, dumps_jsonl(r.to_dict() for r in records))


def read_records_jsonl(path: str | Path) -> list[JudgmentRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(JudgmentRecord.from_dict(json.loads(line)))
    return records
