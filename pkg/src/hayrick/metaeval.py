"""Validation of the automatic judge against human labels, plus the bias,
position-sensitivity, and human-snapshot analyses.

Correlations are Pearson (recorded as such in all outputs). Undefined
quantities (a correlation over zero-variance data, linking accuracy with no
jointly-covered pairs) come back as None rather than a fabricated number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .core import Haystack, HayrickError, InputError, Subtopic
from .retrieval import assemble_context, score_documents
from .scoring import (
    CoverageJudge,
    CoverageJudgment,
    CoverageLevel,
    InsightScore,
    ScoreReport,
    as_fraction,
    citation_prf,
    compose_report,
    judge_coverage,
    render1,
    score_summary,
)
from .summarize import SummaryParseError, parse_summary

CORRELATION_KIND = "pearson"


class InsufficientDataError(HayrickError):
    """Fewer aligned data points than the statistic needs."""


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None when either side has zero variance.

    Exact ±1.0 is returned whenever the rational correlation is exactly ±1,
    which keeps identity checks immune to sqrt rounding.
    """
    if len(xs) != len(ys):
        raise InputError("correlation inputs must align")
    n = len(xs)
    if n < 2:
        raise InsufficientDataError(f"need at least 2 pairs, got {n}")
    fx = [as_fraction(x) for x in xs]
    fy = [as_fraction(y) for y in ys]
    mx = sum(fx, Fraction(0)) / n
    my = sum(fy, Fraction(0)) / n
    cov = sum(((x - mx) * (y - my) for x, y in zip(fx, fy)), Fraction(0))
    vx = sum(((x - mx) ** 2 for x in fx), Fraction(0))
    vy = sum(((y - my) ** 2 for y in fy), Fraction(0))
    if vx == 0 or vy == 0:
        return None
    ratio = cov * cov / (vx * vy)
    if ratio == 1:
        return 1.0 if cov > 0 else -1.0
    return float(cov) / math.sqrt(float(vx) * float(vy))


# ---------------------------------------------------------------------------
# Human labels


@dataclass(frozen=True)
class HumanLabel:
    summary_id: str
    insight_id: str
    level: CoverageLevel
    linked_bullet_index: int | None = None
    annotator_id: str = ""


def labels_from_judgments(
    summary_id: str,
    judgments: Iterable[CoverageJudgment],
    annotator_id: str = "auto",
) -> list[HumanLabel]:
    return [
        HumanLabel(
            summary_id=summary_id,
            insight_id=j.insight_id,
            level=j.level,
            linked_bullet_index=j.linked_bullet_index,
            annotator_id=annotator_id,
        )
        for j in judgments
    ]


def load_human_labels(path) -> list[HumanLabel]:
    """One JSON record per line: summary_id, insight_id, level, bullet, annotator."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            out.append(
                HumanLabel(
                    summary_id=raw["summary_id"],
                    insight_id=raw["insight_id"],
                    level=CoverageLevel(raw["level"]),
                    linked_bullet_index=raw.get("bullet"),
                    annotator_id=raw.get("annotator", ""),
                )
            )
    return out


def _aligned(
    human: Iterable[HumanLabel], auto: Iterable[HumanLabel]
) -> list[tuple[HumanLabel, HumanLabel]]:
    human_by_key = {(lab.summary_id, lab.insight_id): lab for lab in human}
    pairs = []
    for lab in auto:
        match = human_by_key.get((lab.summary_id, lab.insight_id))
        if match is not None:
            pairs.append((match, lab))
    return pairs


def coverage_correlation(human: Iterable[HumanLabel], auto: Iterable[HumanLabel]) -> float | None:
    """Pearson correlation of point-mapped coverage levels over aligned
    (summary, insight) pairs."""
    pairs = _aligned(human, auto)
    if len(pairs) < 2:
        raise InsufficientDataError(f"only {len(pairs)} aligned (summary, insight) pairs")
    return pearson(
        [h.level.points for h, _ in pairs],
        [a.level.points for _, a in pairs],
    )


def linking_accuracy(human: Iterable[HumanLabel], auto: Iterable[HumanLabel]) -> float | None:
    """Among pairs both sides mark covered: % agreeing on the linked bullet.
    None when no pair qualifies."""
    both_covered = [
        (h, a)
        for h, a in _aligned(human, auto)
        if h.level is not CoverageLevel.NONE and a.level is not CoverageLevel.NONE
    ]
    if not both_covered:
        return None
    agree = sum(1 for h, a in both_covered if h.linked_bullet_index == a.linked_bullet_index)
    return 100.0 * agree / len(both_covered)


# ---------------------------------------------------------------------------
# Judge bias


@dataclass(frozen=True)
class CoveragePoint:
    """Coverage score of one summary under one scorer."""

    summary_id: str
    summarizer: str
    coverage: float


def model_bias_delta(
    auto: Iterable[CoveragePoint], human: Iterable[CoveragePoint]
) -> dict[str, float]:
    """Mean (auto - human) coverage per summarizer over paired summaries.
    Unpaired reports are excluded."""
    human_by_id = {p.summary_id: p for p in human}
    deltas: dict[str, list[float]] = {}
    for point in auto:
        match = human_by_id.get(point.summary_id)
        if match is None:
            continue
        deltas.setdefault(point.summarizer, []).append(point.coverage - match.coverage)
    return {name: sum(vals) / len(vals) for name, vals in sorted(deltas.items())}


@dataclass(frozen=True)
class LengthPoint:
    """One summary's verbosity plus its score and auto-human delta."""

    words_per_bullet: float
    score: float
    delta: float | None = None


def length_bias(points: Sequence[LengthPoint]) -> tuple[float | None, float | None]:
    """(length-to-score, length-to-delta) Pearson correlations; None when a
    side has zero variance or no data."""
    if len(points) < 2:
        raise InsufficientDataError(f"need at least 2 summaries, got {len(points)}")
    score_corr = pearson([p.words_per_bullet for p in points], [p.score for p in points])
    with_delta = [p for p in points if p.delta is not None]
    delta_corr = None
    if len(with_delta) >= 2:
        delta_corr = pearson([p.words_per_bullet for p in with_delta], [p.delta for p in with_delta])
    return score_corr, delta_corr


# ---------------------------------------------------------------------------
# Position sensitivity


def position_sensitivity(joint_random, joint_top, joint_bottom) -> float:
    """Max absolute Joint-Score deviation of top/bottom from the random
    ordering. Computed exactly over the inputs' decimal values."""
    random_f = as_fraction(joint_random)
    deviation = max(abs(as_fraction(joint_top) - random_f), abs(as_fraction(joint_bottom) - random_f))
    return float(deviation)


# ---------------------------------------------------------------------------
# Human snapshot scoring


@dataclass(frozen=True)
class SnapshotSeries:
    session_id: str
    snapshots: tuple[tuple[int, str], ...]  # (minutes_elapsed, raw summary)

    def __post_init__(self):
        minutes = [m for m, _ in self.snapshots]
        if any(b <= a for a, b in zip(minutes, minutes[1:])):
            raise InputError(f"session {self.session_id}: minutes must be strictly increasing")


def load_snapshots(path) -> tuple[list[SnapshotSeries], int]:
    """One JSON record per line: session, minutes, payload. Returns the
    per-session series plus the count of malformed lines skipped."""
    sessions: dict[str, list[tuple[int, str]]] = {}
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                session = str(raw["session"])
                minutes = int(raw["minutes"])
                payload = str(raw["payload"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                skipped += 1
                continue
            sessions.setdefault(session, []).append((minutes, payload))
    series = [
        SnapshotSeries(session_id=session, snapshots=tuple(sorted(snaps)))
        for session, snaps in sorted(sessions.items())
    ]
    return series, skipped


@dataclass(frozen=True)
class SnapshotScore:
    minutes: int
    report: ScoreReport
    parse_failed: bool = False


def score_snapshots(
    series: SnapshotSeries,
    haystack: Haystack,
    subtopic: Subtopic,
    judge: CoverageJudge,
) -> list[SnapshotScore]:
    """Score every snapshot of a session against the subtopic's insights.
    Unparseable snapshots score zero (flagged) rather than aborting."""
    insights = haystack.subtopic_insights(subtopic.id)
    gold_map = {i.id: i.gold_document_ids for i in insights}
    out: list[SnapshotScore] = []
    for minutes, raw in series.snapshots:
        try:
            summary = parse_summary(raw)
        except SummaryParseError:
            zero = compose_report(
                [InsightScore(insight_id=i.id, level=CoverageLevel.NONE) for i in insights],
                words_per_bullet=0,
            )
            out.append(SnapshotScore(minutes=minutes, report=zero, parse_failed=True))
            continue
        judgments = [judge_coverage(i, summary.bullets, judge) for i in insights]
        report = score_summary(judgments, summary.bullets, gold_map)
        out.append(SnapshotScore(minutes=minutes, report=report))
    return out


def snapshot_table(rows: Sequence[SnapshotScore]) -> str:
    """Plot-ready TSV: minutes, coverage, citation precision/recall/F1, joint."""
    lines = ["minutes\tcoverage\tcitation_precision\tcitation_recall\tcitation_f1\tjoint"]
    for row in rows:
        r = row.report
        lines.append(
            "\t".join(
                [
                    str(row.minutes),
                    render1(r.coverage_score),
                    render1(r.citation_precision),
                    render1(r.citation_recall),
                    render1(r.citation_score),
                    render1(r.joint_score),
                ]
            )
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Budget feasibility bound


def oracle_citation_f1_bound(haystack: Haystack, subtopic: Subtopic, budget_tokens: int) -> Fraction:
    """Best achievable mean citation F1 for the subtopic when context is the
    oracle-retrieved selection under the budget: for each insight, the best a
    system can do is cite exactly the gold documents present in context."""
    scored = score_documents(haystack, subtopic, "oracle")
    selection = assemble_context(scored, haystack.documents, budget_tokens, query=subtopic.query)
    in_context = set(selection.selected_ids)
    totals = Fraction(0)
    insights = haystack.subtopic_insights(subtopic.id)
    for insight in insights:
        clipped = insight.gold_document_ids & in_context
        if clipped:
            _, _, f1 = citation_prf(clipped, insight.gold_document_ids)
        else:
            f1 = Fraction(0)
        totals += f1
    return totals / len(insights)
