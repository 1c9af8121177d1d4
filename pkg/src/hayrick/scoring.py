"""The metric core: coverage judging plus Coverage / Citation / Joint scores.

Per reference insight, a judgment assigns NONE (0 points), PARTIAL (50) or
FULL (100) and links the single candidate bullet that carries the coverage.
Citations are compared set-wise against the insight's gold documents and
combined as F1. Scores are carried as exact rationals internally and
rendered at one decimal, so published-style figures reproduce without float
drift.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .core import HayrickError, InputError, Insight
from .retrieval import content_tokens
from .summarize import Bullet


class JudgingError(HayrickError):
    """Judge unreachable or persistently malformed."""


class CoverageLevel(Enum):
    NONE = "NONE"
    PARTIAL = "PARTIAL"
    FULL = "FULL"

    @property
    def points(self) -> int:
        return COVERAGE_POINTS[self]


COVERAGE_POINTS = {
    CoverageLevel.NONE: 0,
    CoverageLevel.PARTIAL: 50,
    CoverageLevel.FULL: 100,
}

# Wire vocabulary used in judge replies.
WIRE_LEVELS = {
    "NO_COVERAGE": CoverageLevel.NONE,
    "PARTIAL_COVERAGE": CoverageLevel.PARTIAL,
    "FULL_COVERAGE": CoverageLevel.FULL,
}
LEVEL_TO_WIRE = {level: wire for wire, level in WIRE_LEVELS.items()}


@dataclass(frozen=True)
class CoverageJudgment:
    insight_id: str
    level: CoverageLevel
    linked_bullet_index: int | None = None  # 1-based; required unless NONE

    def __post_init__(self):
        if self.level is CoverageLevel.NONE and self.linked_bullet_index is not None:
            raise InputError("NONE judgment must not link a bullet")
        if self.level is not CoverageLevel.NONE and self.linked_bullet_index is None:
            raise InputError(f"{self.level.value} judgment must link a bullet")


def as_fraction(x) -> Fraction:
    """Exact conversion; floats go through their decimal repr so 0.29 means 29/100."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


def render1(x) -> str:
    """Render a score at one decimal, rounding half away from zero, exactly."""
    f = as_fraction(x)
    scaled = f * 10
    if scaled >= 0:
        n = math.floor(scaled + Fraction(1, 2))
    else:
        n = -math.floor(-scaled + Fraction(1, 2))
    sign = "-" if n < 0 else ""
    q, r = divmod(abs(n), 10)
    return f"{sign}{q}.{r}"


# ---------------------------------------------------------------------------
# Judges


class CoverageJudge(Protocol):
    """Returns the raw (ideally JSON) reply assessing one insight against bullets."""

    def assess(self, insight: Insight, bullets: Sequence[Bullet]) -> str: ...


class SentinelJudge:
    """Deterministic judge for tests and offline runs.

    FULL when a bullet contains the insight text verbatim; PARTIAL when a
    bullet contains at least `partial_threshold` of the insight's content
    words; NONE otherwise. Links the first bullet achieving the best level.
    """

    def __init__(self, partial_threshold: float = 0.5):
        self.partial_threshold = partial_threshold

    def assess(self, insight: Insight, bullets: Sequence[Bullet]) -> str:
        for bullet in bullets:
            if insight.text in bullet.text:
                return json.dumps({"coverage": "FULL_COVERAGE", "bullet": bullet.index})
        wanted = content_tokens(insight.text)
        if wanted:
            best_index, best_ratio = None, 0.0
            for bullet in bullets:
                ratio = len(wanted & content_tokens(bullet.text)) / len(wanted)
                if ratio > best_ratio:
                    best_index, best_ratio = bullet.index, ratio
            if best_index is not None and best_ratio >= self.partial_threshold:
                return json.dumps({"coverage": "PARTIAL_COVERAGE", "bullet": best_index})
        return json.dumps({"coverage": "NO_COVERAGE"})


class LLMJudge:
    """Judge backed by a gateway endpoint answering the coverage prompt."""

    def __init__(self, gateway, endpoint, few_shot_examples: str = "", params: dict | None = None):
        self.gateway = gateway
        self.endpoint = endpoint
        self.few_shot_examples = few_shot_examples
        self.params = dict(params or {})

    def assess(self, insight: Insight, bullets: Sequence[Bullet]) -> str:
        from .templating import render_template

        prompt = render_template(
            "coverage_judge",
            few_shot_examples=self.few_shot_examples or "(no examples)",
            insight=insight.text,
            bullets="\n".join(f"{b.index}. {b.text}" for b in bullets),
        )
        text, _ = self.gateway.generate(self.endpoint, prompt, self.params)
        return text


_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


class MalformedJudgeReply(HayrickError):
    pass


def parse_judge_reply(raw: str, insight_id: str, n_bullets: int) -> CoverageJudgment:
    match = _JSON_OBJECT.search(raw)
    if not match:
        raise MalformedJudgeReply(f"no JSON object in judge reply: {raw[:120]!r}")
    try:
        parsed = json.loads(match.group(0))
    except json.JSONDecodeError as exc:
        raise MalformedJudgeReply(f"invalid JSON in judge reply: {exc}") from exc
    if not isinstance(parsed, dict):
        raise MalformedJudgeReply("judge reply is not an object")
    wire = parsed.get("coverage")
    if wire not in WIRE_LEVELS:
        raise MalformedJudgeReply(f"unknown coverage value: {wire!r}")
    level = WIRE_LEVELS[wire]
    if level is CoverageLevel.NONE:
        return CoverageJudgment(insight_id=insight_id, level=level, linked_bullet_index=None)
    bullet = parsed.get("bullet")
    if not isinstance(bullet, int) or isinstance(bullet, bool) or not 1 <= bullet <= n_bullets:
        raise MalformedJudgeReply(f"linked bullet out of range: {bullet!r} (1..{n_bullets})")
    return CoverageJudgment(insight_id=insight_id, level=level, linked_bullet_index=bullet)


def judge_coverage(
    insight: Insight,
    bullets: Sequence[Bullet],
    judge: CoverageJudge,
    max_retries: int = 3,
    raw_sink: Callable[[int, str], None] | None = None,
) -> CoverageJudgment:
    """Ask the judge about one insight; retry malformed replies up to 3 times."""
    if not bullets:
        raise InputError("cannot judge coverage against zero bullets")
    last_error: Exception | None = None
    for attempt in range(1, max_retries + 2):
        try:
            raw = judge.assess(insight, bullets)
        except HayrickError as exc:
            raise JudgingError(f"judge failed on insight {insight.id}: {exc}") from exc
        if raw_sink is not None:
            raw_sink(attempt, raw)
        try:
            return parse_judge_reply(raw, insight.id, len(bullets))
        except MalformedJudgeReply as exc:
            last_error = exc
    raise JudgingError(f"judge reply malformed after {max_retries} retries on insight {insight.id}: {last_error}")


# ---------------------------------------------------------------------------
# Score arithmetic


def citation_prf(cited: Iterable[int], gold: Iterable[int]) -> tuple[Fraction, Fraction, Fraction]:
    """Set precision/recall/F1 between cited and gold document ids.

    Empty cited gives (0, 0, 0); empty gold is a contract violation (valid
    haystacks place every insight somewhere).
    """
    cited_set = frozenset(cited)
    gold_set = frozenset(gold)
    if not gold_set:
        raise InputError("gold citation set must be non-empty")
    hits = len(cited_set & gold_set)
    precision = Fraction(hits, len(cited_set)) if cited_set else Fraction(0)
    recall = Fraction(hits, len(gold_set))
    if precision + recall == 0:
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass(frozen=True)
class InsightScore:
    insight_id: str
    level: CoverageLevel
    linked_bullet: int | None = None
    cited: frozenset[int] | None = None
    gold: frozenset[int] | None = None
    precision: Fraction | None = None
    recall: Fraction | None = None
    f1: Fraction | None = None

    @property
    def covered(self) -> bool:
        return self.level is not CoverageLevel.NONE

    @property
    def coverage_points(self) -> int:
        return self.level.points

    @property
    def joint_points(self) -> Fraction:
        if not self.covered or self.f1 is None:
            return Fraction(0)
        return self.coverage_points * self.f1


def insight_score(
    insight_id: str,
    level: CoverageLevel | str,
    linked_bullet: int | None = None,
    cited: Iterable[int] | None = None,
    gold: Iterable[int] | None = None,
    precision=None,
    recall=None,
    f1=None,
) -> InsightScore:
    """Build a per-insight score either from citation sets or from direct
    precision/recall/F1 values (floats are taken at their decimal meaning)."""
    if isinstance(level, str):
        level = CoverageLevel(level)
    if level is CoverageLevel.NONE:
        return InsightScore(insight_id=insight_id, level=level)
    if cited is not None and gold is not None:
        p, r, f = citation_prf(cited, gold)
        return InsightScore(
            insight_id=insight_id,
            level=level,
            linked_bullet=linked_bullet,
            cited=frozenset(cited),
            gold=frozenset(gold),
            precision=p,
            recall=r,
            f1=f,
        )
    if f1 is None:
        raise InputError("covered insight needs either citation sets or an f1 value")
    return InsightScore(
        insight_id=insight_id,
        level=level,
        linked_bullet=linked_bullet,
        precision=as_fraction(precision) if precision is not None else None,
        recall=as_fraction(recall) if recall is not None else None,
        f1=as_fraction(f1),
    )


@dataclass(frozen=True)
class ScoreReport:
    coverage_score: Fraction
    citation_score: Fraction
    citation_precision: Fraction
    citation_recall: Fraction
    joint_score: Fraction
    words_per_bullet: Fraction
    per_insight: tuple[InsightScore, ...]
    covered_count: int

    @property
    def insight_count(self) -> int:
        return len(self.per_insight)

    def rounded(self) -> dict[str, str]:
        return {
            "coverage": render1(self.coverage_score),
            "citation": render1(self.citation_score),
            "citation_precision": render1(self.citation_precision),
            "citation_recall": render1(self.citation_recall),
            "joint": render1(self.joint_score),
            "words_per_bullet": render1(self.words_per_bullet),
        }


def compose_report(per_insight: Sequence[InsightScore], words_per_bullet=0) -> ScoreReport:
    """Average per-insight scores into a summary-level report.

    Coverage and Joint average over ALL insights; Citation (and its
    precision/recall) average over covered insights only, reported as 0 with
    covered_count == 0 when nothing was covered.
    """
    if not per_insight:
        raise InputError("cannot compose a report from zero insights")
    ids = [s.insight_id for s in per_insight]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate insight ids in per-insight scores")
    n = len(per_insight)
    covered = [s for s in per_insight if s.covered]
    coverage = Fraction(sum(s.coverage_points for s in per_insight), n)
    joint = sum((s.joint_points for s in per_insight), Fraction(0)) / n
    if covered:
        citation = 100 * sum((s.f1 or Fraction(0) for s in covered), Fraction(0)) / len(covered)
        precision = 100 * sum((s.precision or Fraction(0) for s in covered), Fraction(0)) / len(covered)
        recall = 100 * sum((s.recall or Fraction(0) for s in covered), Fraction(0)) / len(covered)
    else:
        citation = precision = recall = Fraction(0)
    return ScoreReport(
        coverage_score=coverage,
        citation_score=citation,
        citation_precision=precision,
        citation_recall=recall,
        joint_score=joint,
        words_per_bullet=as_fraction(words_per_bullet),
        per_insight=tuple(per_insight),
        covered_count=len(covered),
    )


def coverage_score(judgments: Sequence[CoverageJudgment]) -> Fraction:
    """Mean coverage points over all judged insights, in [0, 100]."""
    if not judgments:
        raise InputError("no judgments")
    ids = [j.insight_id for j in judgments]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate insight ids in judgments")
    return Fraction(sum(j.level.points for j in judgments), len(judgments))


def score_summary(
    judgments: Sequence[CoverageJudgment],
    bullets: Sequence[Bullet],
    gold_map: Mapping[str, Iterable[int]],
) -> ScoreReport:
    """Score one summary: citations are taken from each insight's LINKED
    bullet only, then composed per compose_report."""
    if {j.insight_id for j in judgments} != set(gold_map):
        raise InputError("judgments must cover exactly the subtopic's insights")
    by_index = {b.index: b for b in bullets}
    scores: list[InsightScore] = []
    for judgment in judgments:
        if judgment.level is CoverageLevel.NONE:
            scores.append(InsightScore(insight_id=judgment.insight_id, level=CoverageLevel.NONE))
            continue
        bullet = by_index.get(judgment.linked_bullet_index)
        if bullet is None:
            raise InputError(
                f"judgment for {judgment.insight_id} links bullet "
                f"{judgment.linked_bullet_index}, out of range"
            )
        scores.append(
            insight_score(
                judgment.insight_id,
                judgment.level,
                linked_bullet=bullet.index,
                cited=bullet.cited_document_ids,
                gold=gold_map[judgment.insight_id],
            )
        )
    total_words = sum(len(b.text.split()) for b in bullets)
    wpb = Fraction(total_words, len(bullets)) if bullets else Fraction(0)
    return compose_report(scores, words_per_bullet=wpb)


# ---------------------------------------------------------------------------
# Persistence


def _fraction_str(x: Fraction | None) -> str | None:
    return None if x is None else str(x)


def _fraction_or_none(s) -> Fraction | None:
    return None if s is None else Fraction(s)


def insight_score_to_dict(score: InsightScore) -> dict:
    return {
        "insight_id": score.insight_id,
        "level": score.level.value,
        "linked_bullet": score.linked_bullet,
        "cited": sorted(score.cited) if score.cited is not None else None,
        "gold": sorted(score.gold) if score.gold is not None else None,
        "precision": _fraction_str(score.precision),
        "recall": _fraction_str(score.recall),
        "f1": _fraction_str(score.f1),
    }


def insight_score_from_dict(raw: dict) -> InsightScore:
    return InsightScore(
        insight_id=raw["insight_id"],
        level=CoverageLevel(raw["level"]),
        linked_bullet=raw.get("linked_bullet"),
        cited=frozenset(raw["cited"]) if raw.get("cited") is not None else None,
        gold=frozenset(raw["gold"]) if raw.get("gold") is not None else None,
        precision=_fraction_or_none(raw.get("precision")),
        recall=_fraction_or_none(raw.get("recall")),
        f1=_fraction_or_none(raw.get("f1")),
    )


def report_to_dict(report: ScoreReport) -> dict:
    return {
        "scores": {
            "coverage": float(report.coverage_score),
            "citation": float(report.citation_score),
            "citation_precision": float(report.citation_precision),
            "citation_recall": float(report.citation_recall),
            "joint": float(report.joint_score),
            "words_per_bullet": float(report.words_per_bullet),
        },
        "rounded": report.rounded(),
        "covered_count": report.covered_count,
        "insight_count": report.insight_count,
        "words_per_bullet": str(report.words_per_bullet),
        "per_insight": [insight_score_to_dict(s) for s in report.per_insight],
    }


def report_from_dict(raw: dict) -> ScoreReport:
    """Rebuild a report by recomputing from the persisted per-insight detail,
    so every rendered number is recomputable from what was stored."""
    per_insight = [insight_score_from_dict(entry) for entry in raw["per_insight"]]
    return compose_report(per_insight, words_per_bullet=Fraction(raw["words_per_bullet"]))


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class AggregateCell:
    summarizer: str
    retriever: str
    n: int
    coverage: Fraction
    citation: Fraction
    joint: Fraction
    words_per_bullet: Fraction


def aggregate_run(
    reports: Sequence[ScoreReport],
    grouping: Sequence[tuple[str, str]],
) -> list[AggregateCell]:
    """Unweighted means per (summarizer, retriever) cell; one row per
    non-empty cell, sorted by key. Empty cells simply do not appear."""
    if len(reports) != len(grouping):
        raise InputError("grouping must parallel reports")
    cells: dict[tuple[str, str], list[ScoreReport]] = {}
    for report, key in zip(reports, grouping):
        cells.setdefault(tuple(key), []).append(report)
    out = []
    for (summarizer, retriever), group in sorted(cells.items()):
        n = len(group)
        out.append(
            AggregateCell(
                summarizer=summarizer,
                retriever=retriever,
                n=n,
                coverage=sum((r.coverage_score for r in group), Fraction(0)) / n,
                citation=sum((r.citation_score for r in group), Fraction(0)) / n,
                joint=sum((r.joint_score for r in group), Fraction(0)) / n,
                words_per_bullet=sum((r.words_per_bullet for r in group), Fraction(0)) / n,
            )
        )
    return out
