"""Generate the bundled toy corpus.

Writes cases.jsonl, pools.json, qrels.json, demos.json, and lexicon.txt into
src/lexjudge/data/toy/. The corpus is built so that the mock judge's rules
force a known gold label for every (query, candidate) pair:

* Twelve "crime families", each with a query case and three candidates:
  - variant a: the query with the defendant's surname changed — near-identical
    token sets (material-fact match) and the same crime term (legal-fact
    match) → label 3;
  - variant b: the query with its crime term swapped for a different offense
    word — near-identical token sets but disjoint crime terms → label 1;
  - variant c: a different narrative of the same offense — few shared tokens
    but the same crime term → label 2;
  - candidates borrowed from other families → label 0.
* Every pair's token Jaccard stays well clear of the 0.4 decision threshold
  (asserted outside [0.35, 0.45]).
* Every case mentions exactly one lexicon term, so legal-fact extraction is
  never empty and tag sets are singletons by construction.

The script ends by running the real engine with the mock judge over the whole
corpus and asserting that every produced label equals the stored gold label.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from lexjudge.corpus import ingest_corpus, validate_case  # noqa: E402
from lexjudge.demos import load_demo_library  # noqa: E402
from lexjudge.engine import JudgeEngine  # noqa: E402
from lexjudge.gateway import (  # noqa: E402
    INPUT_A,
    INPUT_B,
    JudgeRequest,
    MockJudge,
    MockJudgeConfig,
    STAGE_PREFIX,
    TARGET_BEGIN,
    TARGET_END,
    mock_complete,
    mock_lf_tags,
    mock_tokens,
)

OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "lexjudge" / "data" / "toy"

# (family key, crime term, swap term, query surname, variant-a surname, base
# narrative, variant-c narrative). The base must contain "<surname>某" once
# and the crime term once; variant c must contain the crime term once; no
# narrative may contain any other lexicon term.
FAMILIES = [
    ("theft", "盗窃", "抢夺", "王", "许",
     "被告人王某深夜翻墙进入电子厂仓库盗窃笔记本电脑二十台",
     "两名男子趁商场打烊之际盗窃柜台内的手表与首饰随后销赃"),
    ("robbery", "抢劫", "勒索", "陈", "杜",
     "被告人陈某持刀在偏僻巷口抢劫下班路人的手机和现金",
     "三人结伙深夜闯入加油站持械抢劫营业款并打伤收银员"),
    ("fraud", "诈骗", "赌博", "刘", "金",
     "被告人刘某虚构投资项目通过网络诈骗多名老年人钱款共计五十万元",
     "一名女子假冒客服以退款为名诈骗网购买家的银行卡余额"),
    ("injury", "伤害", "殴打", "赵", "任",
     "被告人赵某因琐事与邻居发生争执持木棍实施伤害致其重伤",
     "足球赛后两伙球迷斗殴其中一人用酒瓶伤害对方球迷面部"),
    ("homicide", "杀人", "虐待", "孙", "崔",
     "被告人孙某因感情纠纷深夜在公寓楼道持匕首杀人后潜逃外省",
     "渔村村民因宅基地纠纷用猎枪杀人并将尸体沉入水库"),
    ("drugs", "毒品", "吸毒", "周", "倪",
     "被告人周某多次向城中村租户贩卖毒品并在出租屋内藏匿电子秤",
     "边境检查站在长途客车夹层内查获毒品三公斤司机被当场控制"),
    ("kidnap", "绑架", "拐卖", "吴", "邹",
     "被告人吴某伙同他人绑架企业主之子并索要赎金一百万元",
     "两名保姆合谋绑架雇主幼童藏于郊外废弃厂房三日"),
    ("arson", "纵火", "爆炸", "郑", "冯",
     "被告人郑某因被辞退心生怨恨深夜对厂房仓库纵火造成重大损失",
     "山林护林员发现游客在防火期纵火焚烧秸秆引燃周边灌木"),
    ("bribery", "受贿", "贪污", "何", "齐",
     "被告人何某利用审批职务便利多次受贿共计三百万元为他人谋取利益",
     "某国企采购经理在设备招标过程中受贿供应商回扣并泄露标底"),
    ("smuggle", "走私", "偷渡", "马", "卢",
     "被告人马某组织渔船在夜间从公海走私冻品入境逃避海关监管",
     "口岸缉私队在集装箱货柜夹层查获走私香烟两万条"),
    ("traffic", "肇事", "逃逸", "宋", "童",
     "被告人宋某醉酒驾驶小轿车闯红灯肇事致两名行人重度昏迷",
     "货运司机疲劳驾驶大货车在高速路肇事追尾三辆私家车"),
    ("rape", "强奸", "猥亵", "高", "史",
     "被告人高某在出租车内对醉酒女乘客实施强奸被路过巡警抓获",
     "健身教练多次以私教课为名强奸会员并威胁其不得声张"),
]

LEXICON = sorted({crime for _, crime, _, _, _, _, _ in FAMILIES}
                 | {swap for _, _, swap, _, _, _, _ in FAMILIES})

THRESHOLD = 0.4
MARGIN_LOW, MARGIN_HIGH = 0.35, 0.45


def jaccard(a: str, b: str) -> float:
    sa, sb = set(mock_tokens(a)), set(mock_tokens(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def tags(text: str) -> set[str]:
    return set(mock_lf_tags(mock_tokens(text), frozenset(LEXICON)))


def expected_label(a: str, b: str) -> int:
    mf = jaccard(a, b) >= THRESHOLD
    lf = bool(tags(a) & tags(b))
    return int(mf) + 2 * int(lf)


def build_cases() -> tuple[list[dict], dict[str, str]]:
    cases: list[dict] = []
    texts: dict[str, str] = {}

    def add(case_id: str, text: str, tag: str, full_text: str | None) -> None:
        record = {"id": case_id, "fact_text": text, "crime_tags": [tag], "full_text": full_text}
        problems = validate_case_record(record)
        assert not problems, f"{case_id}: {problems}"
        assert tags(text) == {tag}, f"{case_id}: tags {tags(text)} != {{{tag}}}"
        retok = mock_tokens(" ".join(mock_tokens(text)))
        assert retok == mock_tokens(text), f"{case_id}: tokenization not idempotent"
        cases.append(record)
        texts[case_id] = text

    for index, (_, crime, swap, name_q, name_a, base, other) in enumerate(FAMILIES, start=1):
        qid = f"q{index:02d}"
        assert base.count(f"{name_q}某") == 1 and base.count(crime) == 1, qid
        assert other.count(crime) == 1, qid
        add(qid, base, crime, base + "。全文另含程序经过与裁判结果。")
        add(f"c{index:02d}a", base.replace(f"{name_q}某", f"{name_a}某"), crime, None)
        add(f"c{index:02d}b", base.replace(crime, swap), swap, None)
        add(f"c{index:02d}c", other, crime, None)
    return cases, texts


def validate_case_record(record: dict) -> list[str]:
    from lexjudge.corpus import case_from_record

    try:
        case = case_from_record(record)
    except Exception as exc:  # pragma: no cover - generator guard
        return [str(exc)]
    return validate_case(case)


def build_pools() -> list[dict]:
    pools = []
    n = len(FAMILIES)
    for index in range(1, n + 1):
        own = [f"c{index:02d}{s}" for s in "abc"]
        fillers = []
        for offset, suffixes in ((1, "abc"), (2, "abc"), (3, "a")):
            other = (index - 1 + offset) % n + 1
            fillers.extend(f"c{other:02d}{s}" for s in suffixes)
        pools.append({"query_id": f"q{index:02d}", "candidate_ids": own + fillers})
    return pools


def build_qrels(pools: list[dict], texts: dict[str, str]) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    for pool in pools:
        qid = pool["query_id"]
        qrels[qid] = {}
        for cid in pool["candidate_ids"]:
            j = jaccard(texts[qid], texts[cid])
            assert not (MARGIN_LOW < j < MARGIN_HIGH), (
                f"{qid}/{cid}: jaccard {j:.4f} too close to the threshold"
            )
            qrels[qid][cid] = expected_label(texts[qid], texts[cid])
    return qrels


# -- demonstration library ---------------------------------------------------

DEMO_SENTENCES = [
    ("蒋", "成", "被告人蒋某在地铁站内抢夺乘客背包后沿通道逃跑"),
    ("袁", "文", "被告人袁某在棋牌室组织赌博并从中抽头渔利"),
    ("潘", "钱", "被告人潘某以介绍工作为名拐卖两名女子至外地"),
    ("唐", "沈", "被告人唐某在采石场私藏雷管引发爆炸致三人受伤"),
]


def mock_reply(stage: str, target: str, cfg: MockJudgeConfig) -> str:
    request = JudgeRequest(
        system_text="",
        user_text=f"{STAGE_PREFIX}{stage}\n{TARGET_BEGIN}\n{target}\n{TARGET_END}",
        temperature=0.0,
        model="toy",
        max_tokens=1024,
    )
    return mock_complete(request, cfg).text


def build_demos(cfg: MockJudgeConfig) -> list[dict]:
    def mf_text(sentence: str) -> str:
        return " ".join(mock_tokens(sentence))

    def lf_text(sentence: str) -> str:
        return " ".join(mock_lf_tags(mock_tokens(sentence), cfg.lexicon))

    def pair(a: str, b: str) -> str:
        return f"{INPUT_A}\n{a}\n{INPUT_B}\n{b}"

    sentences = [s for _, _, s in DEMO_SENTENCES]
    twins = [s.replace(f"{old}某", f"{new}某") for old, new, s in DEMO_SENTENCES]
    for sentence in sentences + twins:
        assert tags(sentence), f"demo sentence lacks a lexicon term: {sentence}"

    demos: list[dict] = []

    def add(demo_id: str, stage: str, fact_type: str, input_text: str,
            exemplar: str, polarity: str | None) -> None:
        assert input_text.strip() and exemplar.strip()
        demos.append({
            "id": demo_id,
            "stage": stage,
            "fact_type": fact_type,
            "input_text": input_text,
            "exemplar_output": exemplar,
            "polarity": polarity,
        })

    for i, sentence in enumerate(sentences[:2], start=1):
        add(f"fe-mf-{i}", "FE", "MF", sentence,
            mock_reply("FE_MF", sentence, cfg), None)
        add(f"fe-lf-{i}", "FE", "LF", mf_text(sentence),
            mock_reply("FE_LF", mf_text(sentence), cfg), None)

    fa_mf_rel = [(mf_text(sentences[0]), mf_text(twins[0])),
                 (mf_text(sentences[1]), mf_text(twins[1]))]
    fa_mf_irr = [(mf_text(sentences[0]), mf_text(sentences[1])),
                 (mf_text(sentences[2]), mf_text(sentences[3]))]
    fa_lf_rel = [(lf_text(sentences[0]), lf_text(twins[0])),
                 (lf_text(sentences[1]), lf_text(twins[1]))]
    fa_lf_irr = [(lf_text(sentences[0]), lf_text(sentences[1])),
                 (lf_text(sentences[2]), lf_text(sentences[3]))]

    for i, (a, b) in enumerate(fa_mf_rel, start=1):
        reply = mock_reply("FA_MF", pair(a, b), cfg)
        assert reply.endswith("VERDICT: RELEVANT"), reply
        add(f"fa-mf-rel-{i}", "FA", "MF", pair(a, b), reply, "relevant")
    for i, (a, b) in enumerate(fa_mf_irr, start=1):
        reply = mock_reply("FA_MF", pair(a, b), cfg)
        assert reply.endswith("VERDICT: IRRELEVANT"), reply
        add(f"fa-mf-irr-{i}", "FA", "MF", pair(a, b), reply, "irrelevant")
    for i, (a, b) in enumerate(fa_lf_rel, start=1):
        reply = mock_reply("FA_LF", pair(a, b), cfg)
        assert reply.endswith("VERDICT: RELEVANT"), reply
        add(f"fa-lf-rel-{i}", "FA", "LF", pair(a, b), reply, "relevant")
    for i, (a, b) in enumerate(fa_lf_irr, start=1):
        reply = mock_reply("FA_LF", pair(a, b), cfg)
        assert reply.endswith("VERDICT: IRRELEVANT"), reply
        add(f"fa-lf-irr-{i}", "FA", "LF", pair(a, b), reply, "irrelevant")
    return demos


def closure_check() -> None:
    """Run the real pipeline over the written files; labels must equal gold."""
    store, pools, qrels = ingest_corpus(
        OUT_DIR / "cases.jsonl", OUT_DIR / "pools.json", OUT_DIR / "qrels.json"
    )
    library = load_demo_library(OUT_DIR / "demos.json")
    judge = MockJudge(MockJudgeConfig(lexicon=frozenset(LEXICON)))
    engine = JudgeEngine(judge, library)
    records = engine.judge_pools(store, pools)
    assert len(records) == sum(len(p.candidate_ids) for p in pools)
    mismatches = [
        (r.query_id, r.candidate_id, r.label, qrels.label(r.query_id, r.candidate_id))
        for r in records
        if r.status != "ok" or r.label != qrels.label(r.query_id, r.candidate_id)
    ]
    assert not mismatches, f"pipeline/gold mismatches: {mismatches[:5]}"


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    cases, texts = build_cases()
    assert len({c["id"] for c in cases}) == len(cases)
    pools = build_pools()
    qrels = build_qrels(pools, texts)

    labels = sorted({label for per in qrels.values() for label in per.values()})
    assert labels == [0, 1, 2, 3], labels
    for qid, per in qrels.items():
        assert sorted(set(per.values())) == [0, 1, 2, 3], (qid, per)

    cfg = MockJudgeConfig(lexicon=frozenset(LEXICON))
    demos = build_demos(cfg)

    (OUT_DIR / "cases.jsonl").write_text(
        "".join(json.dumps(c, ensure_ascii=False) + "\n" for c in cases), encoding="utf-8"
    )
    (OUT_DIR / "pools.json").write_text(
        json.dumps(pools, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )
    (OUT_DIR / "qrels.json").write_text(
        json.dumps(qrels, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )
    (OUT_DIR / "demos.json").write_text(
        json.dumps(demos, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )
    (OUT_DIR / "lexicon.txt").write_text(
        "# one legal-fact term per line\n" + "\n".join(LEXICON) + "\n", encoding="utf-8"
    )

    closure_check()

    histogram: dict[int, int] = {}
    for per in qrels.values():
        for label in per.values():
            histogram[label] = histogram.get(label, 0) + 1
    pair_count = sum(len(per) for per in qrels.values())
    print(f"cases={len(cases)} pools={len(pools)} pairs={pair_count}")
    print(f"label histogram: { {k: histogram[k] for k in sorted(histogram)} }")
    print(f"lexicon terms: {len(LEXICON)}; demos: {len(demos)}")
    print("closure check: every pipeline label equals gold")


if __name__ == "__main__":
    main()
