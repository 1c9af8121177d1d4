"""Domain model for haystacks: synthesized document corpora with a known insight placement map.

A haystack is a set of documents generated around one topic. The topic is
broken into subtopics, each subtopic into insights (atomic, entity-bearing
facts), and every insight is planted into a known set of documents. That
placement map is the ground truth every downstream metric relies on, so this
module owns its validation and its canonical on-disk form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Iterable

FORMAT_VERSION = "1"

DOMAINS = ("conversation", "news")


class HayrickError(Exception):
    """Base class for all package errors."""


class NotFoundError(HayrickError):
    """A referenced identifier does not exist."""


class ConfigurationError(HayrickError):
    """A config value is invalid or infeasible."""


class InputError(HayrickError):
    """Caller passed structurally invalid inputs to a computation."""


# ---------------------------------------------------------------------------
# Token counting


def words_4_3_counter(text: str) -> int:
    """ceil(word_count * 4/3) over whitespace-split words."""
    words = len(text.split())
    return (4 * words + 2) // 3


TOKEN_COUNTERS: dict[str, Callable[[str], int]] = {
    "words-4-3": words_4_3_counter,
}

DEFAULT_TOKEN_COUNTER = "words-4-3"


def get_token_counter(name: str) -> Callable[[str], int]:
    try:
        return TOKEN_COUNTERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown token counter: {name!r}") from None


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs for building one haystack. Snapshotted into the haystack itself."""

    n_subtopics_target: int = 10
    insights_per_subtopic: tuple[int, int] = (5, 10)
    n_documents: int = 100
    words_per_document: int = 750
    min_repeats: int = 5
    max_doc_regenerations: int = 5
    max_chapter_retries: int = 10
    rng_seed: int = 0
    insights_per_document: tuple[int, int] = (3, 6)
    token_counter: str = DEFAULT_TOKEN_COUNTER

    def validate(self) -> None:
        """Raise ConfigurationError on invalid or infeasible settings."""
        positive = {
            "n_subtopics_target": self.n_subtopics_target,
            "n_documents": self.n_documents,
            "words_per_document": self.words_per_document,
            "max_doc_regenerations": self.max_doc_regenerations,
            "max_chapter_retries": self.max_chapter_retries,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.min_repeats < 0:
            raise ConfigurationError("min_repeats must be nonnegative")
        for name, rng in (
            ("insights_per_subtopic", self.insights_per_subtopic),
            ("insights_per_document", self.insights_per_document),
        ):
            lo, hi = rng
            if lo <= 0 or hi < lo:
                raise ConfigurationError(f"{name} range invalid: {rng}")
        if self.min_repeats > self.n_documents:
            raise ConfigurationError(
                f"min_repeats={self.min_repeats} exceeds n_documents={self.n_documents}: "
                "an insight can appear at most once per document"
            )
        # Expected capacity must cover the placement floor.
        mean_per_doc = sum(self.insights_per_document) / 2
        mean_per_sub = sum(self.insights_per_subtopic) / 2
        expected_insights = self.n_subtopics_target * mean_per_sub
        if self.n_documents * mean_per_doc < expected_insights * self.min_repeats:
            raise ConfigurationError(
                "infeasible config: n_documents x mean insights-per-doc "
                f"({self.n_documents} x {mean_per_doc}) cannot cover "
                f"{expected_insights:.0f} expected insights x min_repeats={self.min_repeats}"
            )
        get_token_counter(self.token_counter)


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class Topic:
    id: str
    title: str
    domain: str  # one of DOMAINS
    seed_documents: tuple[str, ...] = ()


@dataclass(frozen=True)
class Subtopic:
    id: str
    topic_id: str
    name: str
    query: str
    insight_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Insight:
    id: str
    subtopic_id: str
    text: str
    gold_document_ids: frozenset[int] = frozenset()


@dataclass(frozen=True)
class Document:
    id: int  # 1-based; this is the integer cited in summaries
    text: str
    assigned_insight_ids: frozenset[str] = frozenset()
    token_count: int = 0


@dataclass(frozen=True)
class Haystack:
    topic: Topic
    subtopics: tuple[Subtopic, ...]
    insights: dict[str, Insight]
    documents: tuple[Document, ...]
    config: SynthesisConfig

    def subtopic(self, subtopic_id: str) -> Subtopic:
        for sub in self.subtopics:
            if sub.id == subtopic_id:
                return sub
        raise NotFoundError(f"unknown subtopic id: {subtopic_id!r}")

    def document(self, document_id: int) -> Document:
        if 1 <= document_id <= len(self.documents):
            doc = self.documents[document_id - 1]
            if doc.id == document_id:
                return doc
        for doc in self.documents:
            if doc.id == document_id:
                return doc
        raise NotFoundError(f"unknown document id: {document_id}")

    def subtopic_insights(self, subtopic_id: str) -> list[Insight]:
        sub = self.subtopic(subtopic_id)
        return [self.insights[iid] for iid in sub.insight_ids]

    def total_tokens(self) -> int:
        return sum(d.token_count for d in self.documents)


def gold_citations(haystack: Haystack, insight_id: str) -> frozenset[int]:
    """Ground-truth set of document ids that contain the insight."""
    try:
        return haystack.insights[insight_id].gold_document_ids
    except KeyError:
        raise NotFoundError(f"unknown insight id: {insight_id!r}") from None


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    subject_ids: tuple = ()

    def __str__(self) -> str:
        ids = ", ".join(str(s) for s in self.subject_ids)
        return f"[{self.code}] {self.message}" + (f" ({ids})" if ids else "")


ValidationReport = list


def validate_haystack(haystack: Haystack) -> list[Violation]:
    """Check every structural invariant; an empty report means valid.

    Violations are data rather than exceptions: a report lists every broken
    invariant with the offending ids so a bad haystack can be diagnosed in
    one pass.
    """
    out: list[Violation] = []
    topic = haystack.topic
    config = haystack.config

    if topic.domain not in DOMAINS:
        out.append(Violation("domain-invalid", f"topic domain {topic.domain!r} not in {DOMAINS}", (topic.id,)))
    if not topic.title.strip():
        out.append(Violation("title-empty", "topic title is empty", (topic.id,)))

    insight_ids = set(haystack.insights)
    n_docs = len(haystack.documents)

    # Document ids must be exactly 1..N in order.
    for position, doc in enumerate(haystack.documents, start=1):
        if doc.id != position:
            out.append(
                Violation(
                    "doc-ids-not-contiguous",
                    f"document at position {position} has id {doc.id}; ids must be 1..N in order",
                    (doc.id,),
                )
            )

    # Subtopic-side checks.
    seen_insight_owner: dict[str, str] = {}
    for sub in haystack.subtopics:
        if sub.topic_id != topic.id:
            out.append(Violation("subtopic-foreign-topic", f"subtopic {sub.id} references topic {sub.topic_id!r}", (sub.id,)))
        if not sub.insight_ids:
            out.append(Violation("subtopic-empty-insights", f"subtopic {sub.id} lists no insights", (sub.id,)))
        if len(set(sub.insight_ids)) != len(sub.insight_ids):
            out.append(Violation("subtopic-duplicate-insight-ids", f"subtopic {sub.id} lists duplicate insight ids", (sub.id,)))
        if not sub.query.strip():
            out.append(Violation("subtopic-query-empty", f"subtopic {sub.id} has no query", (sub.id,)))
        for iid in sub.insight_ids:
            if iid not in insight_ids:
                out.append(Violation("subtopic-unknown-insight", f"subtopic {sub.id} lists unknown insight {iid!r}", (sub.id, iid)))
                continue
            if iid in seen_insight_owner:
                out.append(
                    Violation(
                        "insight-multi-subtopic",
                        f"insight {iid} reachable from both {seen_insight_owner[iid]} and {sub.id}",
                        (iid,),
                    )
                )
            seen_insight_owner[iid] = sub.id
            if haystack.insights[iid].subtopic_id != sub.id:
                out.append(
                    Violation(
                        "insight-owner-mismatch",
                        f"insight {iid} declares subtopic {haystack.insights[iid].subtopic_id!r} but is listed under {sub.id}",
                        (iid, sub.id),
                    )
                )

    # Insight-side checks.
    for iid, insight in haystack.insights.items():
        if iid != insight.id:
            out.append(Violation("insight-key-mismatch", f"insights map key {iid!r} != insight id {insight.id!r}", (iid,)))
        if not insight.text.strip():
            out.append(Violation("insight-text-empty", f"insight {iid} has empty text", (iid,)))
        if iid not in seen_insight_owner:
            out.append(Violation("insight-orphan", f"insight {iid} is not reachable from any subtopic", (iid,)))
        if len(insight.gold_document_ids) < config.min_repeats:
            out.append(
                Violation(
                    "insight-min-repeats",
                    f"insight {iid} placed in {len(insight.gold_document_ids)} documents, "
                    f"below min_repeats={config.min_repeats}",
                    (iid,),
                )
            )
        for did in insight.gold_document_ids:
            if not 1 <= did <= n_docs:
                out.append(Violation("insight-unknown-document", f"insight {iid} cites out-of-range document {did}", (iid, did)))

    # Document-side checks, including bidirectional placement consistency.
    counter = get_token_counter(config.token_counter)
    for doc in haystack.documents:
        if doc.token_count != counter(doc.text):
            out.append(
                Violation(
                    "doc-token-count",
                    f"document {doc.id} token_count={doc.token_count} but counter gives {counter(doc.text)}",
                    (doc.id,),
                )
            )
        for iid in doc.assigned_insight_ids:
            if iid not in insight_ids:
                out.append(Violation("doc-unknown-insight", f"document {doc.id} assigned unknown insight {iid!r}", (doc.id, iid)))
            elif doc.id not in haystack.insights[iid].gold_document_ids:
                out.append(
                    Violation(
                        "bidirectional-inconsistency",
                        f"document {doc.id} claims insight {iid} but the insight does not list document {doc.id}",
                        (doc.id, iid),
                    )
                )
    for iid, insight in haystack.insights.items():
        for did in insight.gold_document_ids:
            if 1 <= did <= n_docs and iid not in haystack.documents[did - 1].assigned_insight_ids:
                out.append(
                    Violation(
                        "bidirectional-inconsistency",
                        f"insight {iid} lists document {did} but the document does not list insight {iid}",
                        (iid, did),
                    )
                )
    return out


# ---------------------------------------------------------------------------
# Serialization (canonical JSON; round-trips bit-exactly)


def config_to_dict(config: SynthesisConfig) -> dict:
    return {
        "n_subtopics_target": config.n_subtopics_target,
        "insights_per_subtopic": list(config.insights_per_subtopic),
        "n_documents": config.n_documents,
        "words_per_document": config.words_per_document,
        "min_repeats": config.min_repeats,
        "max_doc_regenerations": config.max_doc_regenerations,
        "max_chapter_retries": config.max_chapter_retries,
        "rng_seed": config.rng_seed,
        "insights_per_document": list(config.insights_per_document),
        "token_counter": config.token_counter,
    }


def config_from_dict(raw: dict) -> SynthesisConfig:
    data = dict(raw)
    for key in ("insights_per_subtopic", "insights_per_document"):
        if key in data:
            data[key] = tuple(data[key])
    return SynthesisConfig(**data)


def haystack_to_dict(haystack: Haystack) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "topic": {
            "id": haystack.topic.id,
            "title": haystack.topic.title,
            "domain": haystack.topic.domain,
            "seed_documents": list(haystack.topic.seed_documents),
        },
        "subtopics": [
            {
                "id": sub.id,
                "topic_id": sub.topic_id,
                "name": sub.name,
                "query": sub.query,
                "insight_ids": list(sub.insight_ids),
            }
            for sub in haystack.subtopics
        ],
        "insights": {
            iid: {
                "id": ins.id,
                "subtopic_id": ins.subtopic_id,
                "text": ins.text,
                "gold_document_ids": sorted(ins.gold_document_ids),
            }
            for iid, ins in haystack.insights.items()
        },
        "documents": [
            {
                "id": doc.id,
                "text": doc.text,
                "assigned_insight_ids": sorted(doc.assigned_insight_ids),
                "token_count": doc.token_count,
            }
            for doc in haystack.documents
        ],
        "config": config_to_dict(haystack.config),
    }


def haystack_from_dict(raw: dict) -> Haystack:
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported haystack format_version: {version!r}")
    topic = Topic(
        id=raw["topic"]["id"],
        title=raw["topic"]["title"],
        domain=raw["topic"]["domain"],
        seed_documents=tuple(raw["topic"].get("seed_documents", ())),
    )
    subtopics = tuple(
        Subtopic(
            id=s["id"],
            topic_id=s["topic_id"],
            name=s["name"],
            query=s["query"],
            insight_ids=tuple(s["insight_ids"]),
        )
        for s in raw["subtopics"]
    )
    insights = {
        iid: Insight(
            id=i["id"],
            subtopic_id=i["subtopic_id"],
            text=i["text"],
            gold_document_ids=frozenset(i["gold_document_ids"]),
        )
        for iid, i in raw["insights"].items()
    }
    documents = tuple(
        Document(
            id=d["id"],
            text=d["text"],
            assigned_insight_ids=frozenset(d["assigned_insight_ids"]),
            token_count=d["token_count"],
        )
        for d in raw["documents"]
    )
    return Haystack(
        topic=topic,
        subtopics=subtopics,
        insights=insights,
        documents=documents,
        config=config_from_dict(raw["config"]),
    )


def canonical_json(payload: dict) -> str:
    """Deterministic rendering: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def dumps_haystack(haystack: Haystack) -> str:
    return canonical_json(haystack_to_dict(haystack))


def loads_haystack(text: str) -> Haystack:
    return haystack_from_dict(json.loads(text))


def save_haystack(haystack: Haystack, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_haystack(haystack))


def load_haystack(path) -> Haystack:
    with open(path, encoding="utf-8") as fh:
        return loads_haystack(fh.read())


def with_gold(insight: Insight, document_ids: Iterable[int]) -> Insight:
    return replace(insight, gold_document_ids=frozenset(document_ids))
