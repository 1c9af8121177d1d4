"""Metric core: judging, citation set arithmetic, score composition."""

import json
import random
from fractions import Fraction

import pytest

from hayrick.core import InputError, Insight
from hayrick.scoring import (
    AggregateCell,
    CoverageJudgment,
    CoverageLevel,
    InsightScore,
    JudgingError,
    LLMJudge,
    SentinelJudge,
    aggregate_run,
    as_fraction,
    citation_prf,
    compose_report,
    coverage_score,
    insight_score,
    judge_coverage,
    parse_judge_reply,
    render1,
    report_from_dict,
    report_to_dict,
    score_summary,
)
from hayrick.summarize import parse_summary


def bullets(*lines):
    return parse_summary("\n".join(lines)).bullets


INSIGHT = Insight("s01-i01", "s01", "Metric M01 reached 41 units on day 01.")


# ---------------------------------------------------------------------------
# Judging


def test_sentinel_judge_full_on_verbatim_bullet():
    bs = bullets("- Unrelated remark", f"- {INSIGHT.text} [1,2]")
    judgment = judge_coverage(INSIGHT, bs, SentinelJudge())
    assert judgment.level is CoverageLevel.FULL
    assert judgment.linked_bullet_index == 2


def test_sentinel_judge_partial_on_half_overlap():
    bs = bullets("- Metric M01 reached some level, reportedly")
    judgment = judge_coverage(INSIGHT, bs, SentinelJudge())
    assert judgment.level is CoverageLevel.PARTIAL
    assert judgment.linked_bullet_index == 1


def test_sentinel_judge_none_when_absent():
    bs = bullets("- Entirely different topic", "- Another stray remark")
    judgment = judge_coverage(INSIGHT, bs, SentinelJudge())
    assert judgment.level is CoverageLevel.NONE
    assert judgment.linked_bullet_index is None


def test_judge_retries_then_succeeds():
    replies = ["garbage", "{not json", json.dumps({"coverage": "FULL_COVERAGE", "bullet": 1})]

    class Flaky:
        def __init__(self):
            self.calls = 0

        def assess(self, insight, bs):
            self.calls += 1
            return replies[self.calls - 1]

    judge = Flaky()
    raws = []
    judgment = judge_coverage(INSIGHT, bullets("- x"), judge, raw_sink=lambda a, r: raws.append((a, r)))
    assert judge.calls == 3  # success after 2 retries
    assert judgment.level is CoverageLevel.FULL
    assert [a for a, _ in raws] == [1, 2, 3]


def test_judge_gives_up_after_three_retries():
    class Broken:
        def assess(self, insight, bs):
            return "never valid"

    with pytest.raises(JudgingError):
        judge_coverage(INSIGHT, bullets("- x"), Broken())


def test_parse_judge_reply_contract():
    judgment = parse_judge_reply('{"coverage": "PARTIAL_COVERAGE", "bullet": 2}', "i", 3)
    assert judgment.level is CoverageLevel.PARTIAL and judgment.linked_bullet_index == 2
    none = parse_judge_reply('{"coverage": "NO_COVERAGE"}', "i", 3)
    assert none.level is CoverageLevel.NONE and none.linked_bullet_index is None
    with pytest.raises(Exception):
        parse_judge_reply('{"coverage": "FULL_COVERAGE", "bullet": 9}', "i", 3)
    with pytest.raises(Exception):
        parse_judge_reply('{"coverage": "FULL_COVERAGE"}', "i", 3)
    with pytest.raises(Exception):
        parse_judge_reply('{"coverage": "MAYBE"}', "i", 3)


def test_llm_judge_renders_prompt_and_passes_reply_through():
    seen = {}

    class SpyGateway:
        def generate(self, endpoint, prompt, params=None):
            seen["prompt"] = prompt
            return '{"coverage": "NO_COVERAGE"}', None

    judge = LLMJudge(SpyGateway(), endpoint=None, few_shot_examples="EXAMPLE BLOCK")
    reply = judge.assess(INSIGHT, bullets("- one", "- two"))
    assert json.loads(reply)["coverage"] == "NO_COVERAGE"
    assert INSIGHT.text in seen["prompt"]
    assert "1. one" in seen["prompt"] and "2. two" in seen["prompt"]
    assert "EXAMPLE BLOCK" in seen["prompt"]
    assert "NO_COVERAGE" in seen["prompt"]


# ---------------------------------------------------------------------------
# Coverage score


def test_coverage_score_mixed_levels():
    judgments = [
        CoverageJudgment("a", CoverageLevel.FULL, 1),
        CoverageJudgment("b", CoverageLevel.PARTIAL, 2),
        CoverageJudgment("c", CoverageLevel.NONE),
    ]
    assert coverage_score(judgments) == Fraction(50)


def test_coverage_score_all_full():
    judgments = [CoverageJudgment(f"i{k}", CoverageLevel.FULL, 1) for k in range(4)]
    assert coverage_score(judgments) == Fraction(100)


def test_coverage_score_matches_point_mapping_oracle():
    rng = random.Random(0)
    levels = [CoverageLevel.NONE, CoverageLevel.PARTIAL, CoverageLevel.FULL]
    points = {CoverageLevel.NONE: 0, CoverageLevel.PARTIAL: 50, CoverageLevel.FULL: 100}
    for _ in range(20):
        chosen = [rng.choice(levels) for _ in range(7)]
        judgments = [
            CoverageJudgment(f"i{k}", lv, 1 if lv is not CoverageLevel.NONE else None)
            for k, lv in enumerate(chosen)
        ]
        expected = Fraction(sum(points[lv] for lv in chosen), 7)
        assert coverage_score(judgments) == expected


def test_duplicate_insight_ids_rejected():
    judgments = [CoverageJudgment("a", CoverageLevel.NONE), CoverageJudgment("a", CoverageLevel.NONE)]
    with pytest.raises(InputError):
        coverage_score(judgments)


def test_judgment_shape_invariants():
    with pytest.raises(InputError):
        CoverageJudgment("a", CoverageLevel.NONE, linked_bullet_index=1)
    with pytest.raises(InputError):
        CoverageJudgment("a", CoverageLevel.FULL, linked_bullet_index=None)


# ---------------------------------------------------------------------------
# Citation arithmetic


def test_citation_prf_identity():
    assert citation_prf({2, 5, 9}, {2, 5, 9}) == (Fraction(1), Fraction(1), Fraction(1))


def test_citation_prf_worked_example():
    p, r, f1 = citation_prf({1, 2, 3}, {2, 3, 4, 5})
    assert (p, r, f1) == (Fraction(2, 3), Fraction(1, 2), Fraction(4, 7))
    assert float(f1) == pytest.approx(0.5714, abs=1e-4)


def test_citation_prf_empty_cited():
    assert citation_prf(set(), {1, 2}) == (Fraction(0), Fraction(0), Fraction(0))


def test_citation_prf_empty_gold_is_contract_violation():
    with pytest.raises(InputError):
        citation_prf({1}, set())


def test_citation_prf_relabeling_symmetry_and_f1_bounds():
    rng = random.Random(7)
    for _ in range(200):
        gold = frozenset(rng.sample(range(1, 30), rng.randint(1, 10)))
        cited = frozenset(rng.sample(range(1, 30), rng.randint(0, 10)))
        p, r, f1 = citation_prf(cited, gold)
        #

        relabel = {d: d + 100 for d in set(cited) | set(gold)}
        p2, r2, f2 = citation_prf({relabel[d] for d in cited}, {relabel[d] for d in gold})
        assert (p, r, f1) == (p2, r2, f2)
        if p > 0 and r > 0:
            assert min(p, r) <= f1 <= max(p, r)


# ---------------------------------------------------------------------------
# Summary scoring


def test_worked_example_exact():
    per_insight = [
        insight_score("a", CoverageLevel.FULL, linked_bullet=2, f1=0.29),
        insight_score("b", CoverageLevel.PARTIAL, linked_bullet=1, f1=0.73),
        insight_score("c", CoverageLevel.NONE),
    ]
    report = compose_report(per_insight)
    assert render1(report.coverage_score) == "50.0"
    assert render1(report.citation_score) == "51.0"
    assert render1(report.joint_score) == "21.8"
    # Exact values behind the rendering.
    assert report.coverage_score == Fraction(50)
    assert report.citation_score == Fraction(51)
    assert report.joint_score == Fraction(131, 6)  # (29 + 36.5 + 0) / 3


def test_score_summary_links_citations_to_linked_bullet_only():
    bs = bullets("- Alpha fact [1,2]", "- Beta fact [3]")
    judgments = [
        CoverageJudgment("a", CoverageLevel.FULL, 1),
        CoverageJudgment("b", CoverageLevel.FULL, 2),
    ]
    gold = {"a": {1, 2}, "b": {1, 2, 3}}
    report = score_summary(judgments, bs, gold)
    by_id = {s.insight_id: s for s in report.per_insight}
    assert by_id["a"].f1 == Fraction(1)
    assert by_id["b"].cited == frozenset({3})
    assert by_id["b"].recall == Fraction(1, 3)


def test_perfect_summary_scores_100_everywhere():
    bs = bullets("- Fact one [1,2]", "- Fact two [3,4]")
    judgments = [
        CoverageJudgment("a", CoverageLevel.FULL, 1),
        CoverageJudgment("b", CoverageLevel.FULL, 2),
    ]
    report = score_summary(judgments, bs, {"a": {1, 2}, "b": {3, 4}})
    assert report.coverage_score == report.citation_score == report.joint_score == Fraction(100)


def test_two_insights_sharing_one_bullet_both_use_its_citations():
    bs = bullets("- Combined statement [1,2]")
    judgments = [
        CoverageJudgment("a", CoverageLevel.FULL, 1),
        CoverageJudgment("b", CoverageLevel.PARTIAL, 1),
    ]
    report = score_summary(judgments, bs, {"a": {1, 2}, "b": {1, 2}})
    assert all(s.cited == frozenset({1, 2}) for s in report.per_insight)


def test_score_summary_random_instances_match_brute_force():
    rng = random.Random(3)
    for _ in range(40):
        n = rng.randint(1, 6)
        lines = [f"- bullet {k} text [{rng.randint(1, 9)},{rng.randint(1, 9)}]" for k in range(n)]
        bs = bullets(*lines)
        judgments = []
        gold = {}
        for k in range(n):
            level = rng.choice(list(CoverageLevel))
            link = rng.randint(1, n) if level is not CoverageLevel.NONE else None
            judgments.append(CoverageJudgment(f"i{k}", level, link))
            gold[f"i{k}"] = set(rng.sample(range(1, 10), rng.randint(1, 5)))
        report = score_summary(judgments, bs, gold)

        # Independent brute-force recomputation, insight by insight.
        total_joint = Fraction(0)
        total_cov = 0
        f1s = []
        for judgment in judgments:
            total_cov += judgment.level.points
            if judgment.level is CoverageLevel.NONE:
                continue
            cited = bs[judgment.linked_bullet_index - 1].cited_document_ids
            g = gold[judgment.insight_id]
            inter = len(set(cited) & g)
            p = Fraction(inter, len(cited)) if cited else Fraction(0)
            r = Fraction(inter, len(g))
            f1 = Fraction(0) if p + r == 0 else 2 * p * r / (p + r)
            f1s.append(f1)
            total_joint += judgment.level.points * f1
        assert report.joint_score == total_joint / n
        assert report.coverage_score == Fraction(total_cov, n)
        if f1s:
            assert report.citation_score == 100 * sum(f1s) / len(f1s)
        else:
            assert report.citation_score == Fraction(0) and report.covered_count == 0


def test_all_none_reports_zero_citation_with_flag():
    bs = bullets("- something")
    judgments = [CoverageJudgment("a", CoverageLevel.NONE), CoverageJudgment("b", CoverageLevel.NONE)]
    report = score_summary(judgments, bs, {"a": {1}, "b": {2}})
    assert report.coverage_score == 0 and report.joint_score == 0
    assert report.citation_score == 0
    assert report.covered_count == 0


def test_link_out_of_range_is_input_error():
    bs = bullets("- only one")
    judgments = [CoverageJudgment("a", CoverageLevel.FULL, 5)]
    with pytest.raises(InputError):
        score_summary(judgments, bs, {"a": {1}})


def test_judgments_must_cover_exactly_the_gold_map():
    bs = bullets("- b")
    with pytest.raises(InputError):
        score_summary([CoverageJudgment("a", CoverageLevel.NONE)], bs, {"a": {1}, "b": {2}})


def test_joint_bounded_by_coverage_and_monotone_in_upgrades():
    rng = random.Random(11)
    ladder = [CoverageLevel.NONE, CoverageLevel.PARTIAL, CoverageLevel.FULL]
    for _ in range(50):
        n = rng.randint(1, 5)
        scores = []
        for k in range(n):
            level = rng.choice(ladder)
            f1 = Fraction(rng.randint(1, 100), 100)
            if level is CoverageLevel.NONE:
                scores.append(InsightScore(insight_id=f"i{k}", level=level))
            else:
                scores.append(insight_score(f"i{k}", level, linked_bullet=1, f1=f1))
        report = compose_report(scores)
        assert report.joint_score <= report.coverage_score
        max_f1 = max((s.f1 for s in scores if s.f1 is not None), default=Fraction(0))
        assert report.joint_score <= 100 * max_f1 if scores else True

        # Upgrading any one insight never decreases coverage or joint.
        for k, original in enumerate(scores):
            if original.level is CoverageLevel.FULL:
                continue
            upgraded_level = ladder[ladder.index(original.level) + 1]
            f1 = original.f1 if original.f1 is not None else Fraction(rng.randint(1, 100), 100)
            upgraded = scores.copy()
            upgraded[k] = insight_score(f"i{k}", upgraded_level, linked_bullet=1, f1=f1)
            upgraded_report = compose_report(upgraded)
            assert upgraded_report.coverage_score >= report.coverage_score
            assert upgraded_report.joint_score >= report.joint_score


# ---------------------------------------------------------------------------
# Rendering and persistence


def test_render1_half_away_from_zero():
    assert render1(Fraction(131, 6)) == "21.8"
    assert render1(Fraction(2185, 100)) == "21.9"
    assert render1(0) == "0.0"
    assert render1(100) == "100.0"
    assert render1(Fraction(-2185, 100)) == "-21.9"
    assert render1(56.05) == "56.1"


def test_report_roundtrip_recomputes_identically():
    bs = bullets("- Alpha [1,2]", "- Beta [2,9]")
    judgments = [
        CoverageJudgment("a", CoverageLevel.FULL, 1),
        CoverageJudgment("b", CoverageLevel.PARTIAL, 2),
    ]
    report = score_summary(judgments, bs, {"a": {1, 2}, "b": {2, 3, 4}})
    raw = json.loads(json.dumps(report_to_dict(report)))
    again = report_from_dict(raw)
    assert again == report
    assert again.rounded() == report.rounded()


# ---------------------------------------------------------------------------
# Aggregation


def fixed_report(value):
    return compose_report(
        [insight_score("a", CoverageLevel.FULL, linked_bullet=1, f1=as_fraction(value) / 100)],
        words_per_bullet=10,
    )


def test_aggregate_single_report_is_identity():
    report = fixed_report(40)
    [cell] = aggregate_run([report], [("m", "oracle")])
    assert cell == AggregateCell(
        summarizer="m",
        retriever="oracle",
        n=1,
        coverage=report.coverage_score,
        citation=report.citation_score,
        joint=report.joint_score,
        words_per_bullet=report.words_per_bullet,
    )


def test_aggregate_two_reports_mean():
    reports = [fixed_report(40), fixed_report(60)]
    [cell] = aggregate_run(reports, [("m", "oracle")] * 2)
    assert cell.joint == Fraction(50)
    assert cell.n == 2


def test_aggregate_groups_cells_and_sorts():
    reports = [fixed_report(10), fixed_report(30), fixed_report(50)]
    grouping = [("b", "random"), ("a", "oracle"), ("b", "random")]
    cells = aggregate_run(reports, grouping)
    assert [(c.summarizer, c.retriever, c.n) for c in cells] == [("a", "oracle", 1), ("b", "random", 2)]
    assert cells[1].joint == Fraction(30)


def test_aggregate_requires_parallel_grouping():
    with pytest.raises(InputError):
        aggregate_run([fixed_report(10)], [])
