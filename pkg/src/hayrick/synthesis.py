"""Haystack construction: subtopics, insights, placement, and verified documents.

Every generation step goes through a pluggable text generator and a verifier.
The verifier loops are what make the placement map trustworthy: a document is
only accepted once the verifier confirms that every assigned insight is
expressed in it and that no other insight leaked in. On unrecoverable
verification failure the build aborts rather than ship an unsound map.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from random import Random
from typing import Protocol, Sequence

from .core import (
    ConfigurationError,
    HayrickError,
    Document,
    Haystack,
    Insight,
    Subtopic,
    Topic,
    get_token_counter,
    validate_haystack,
    with_gold,
)
from .core import SynthesisConfig as SynthesisConfig  # defined in core (the haystack embeds it); re-exported here
from .templating import render_template

logger = logging.getLogger(__name__)


class SynthesisError(HayrickError):
    """A synthesis stage failed; carries the stage label and partial state."""

    def __init__(self, stage: str, message: str, partial=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.partial = partial


class DocumentVerificationError(SynthesisError):
    """Document could not be verified within the regeneration budget."""

    def __init__(self, doc_id: int, missing: set, leaked: set, attempts: int):
        super().__init__(
            "document",
            f"document {doc_id} failed verification after {attempts} attempts "
            f"(missing={sorted(missing)}, leaked={sorted(leaked)})",
        )
        self.doc_id = doc_id
        self.missing = set(missing)
        self.leaked = set(leaked)
        self.attempts = attempts


class TextGenerator(Protocol):
    """Anything that turns a prompt into text. `stage` names the pipeline step
    so implementations can route to different models per stage."""

    def generate(self, prompt: str, stage: str) -> str: ...


class StageRoutedGenerator:
    """Routes each stage to its own backend, falling back to a default."""

    def __init__(self, default: TextGenerator, per_stage: dict[str, TextGenerator] | None = None):
        self.default = default
        self.per_stage = dict(per_stage or {})

    def generate(self, prompt: str, stage: str) -> str:
        backend = self.per_stage.get(stage, self.default)
        return backend.generate(prompt, stage)


class Verifier(Protocol):
    """Confirms which insights a piece of text expresses."""

    def document_insights(self, text: str, candidates: Sequence[Insight]) -> set[str]:
        """Ids of the candidate insights expressed in the text."""
        ...

    def chapter_covers(self, text: str, insight: Insight) -> bool: ...


class SentinelVerifier:
    """Deterministic verifier: an insight is 'expressed' iff its exact text
    occurs as a substring. The test-suite oracle counterpart of the LLM judge."""

    def document_insights(self, text: str, candidates: Sequence[Insight]) -> set[str]:
        return {ins.id for ins in candidates if ins.text in text}

    def chapter_covers(self, text: str, insight: Insight) -> bool:
        return insight.text in text


class LLMVerifier:
    """Verifier backed by a text generator answering the document-check prompt."""

    def __init__(self, generator: TextGenerator, max_retries: int = 3, log: "SynthesisLog | None" = None):
        self.generator = generator
        self.max_retries = max_retries
        self.log = log

    def document_insights(self, text: str, candidates: Sequence[Insight]) -> set[str]:
        numbered = "\n".join(f"{k}. {ins.text}" for k, ins in enumerate(candidates, start=1))
        prompt = render_template("document_check", document=text, insights=numbered)
        last = ""
        for attempt in range(1, self.max_retries + 2):
            last = self.generator.generate(prompt, stage="document_check")
            numbers = _parse_json_int_array(last)
            accepted = numbers is not None
            if self.log is not None:
                self.log.record("document_check", attempt, accepted)
            if numbers is not None:
                return {candidates[n - 1].id for n in numbers if 1 <= n <= len(candidates)}
        raise SynthesisError("document_check", f"unparseable verifier reply after retries: {last!r}")

    def chapter_covers(self, text: str, insight: Insight) -> bool:
        return bool(self.document_insights(text, [insight]))


def _parse_json_int_array(text: str) -> list[int] | None:
    match = re.search(r"\[[^\]]*\]", text)
    if not match:
        return None
    try:
        parsed = json.loads(match.group(0))
    except json.JSONDecodeError:
        return None
    if not isinstance(parsed, list) or not all(isinstance(x, int) for x in parsed):
        return None
    return parsed


class SynthesisLog:
    """One structured record per generator call: stage, attempt, accepted.

    Appends are lock-guarded so concurrent document slots can share a log.
    """

    def __init__(self):
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def record(self, stage: str, attempt: int, accepted: bool, **detail) -> None:
        entry = {"stage": stage, "attempt": attempt, "accepted": accepted}
        if detail:
            entry["detail"] = detail
        with self._lock:
            self.records.append(entry)

    def max_attempt(self, stage: str) -> int:
        return max((r["attempt"] for r in self.records if r["stage"] == stage), default=0)

    def dump_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.records:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subtopics


def _parse_lines(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        line = re.sub(r"^(?:[-*•]|\d+[.)])\s*", "", line)
        if line:
            out.append(line)
    return out


def _parse_overlap_pairs(text: str, names: Sequence[str]) -> list[tuple[str, str]]:
    known = set(names)
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.upper() == "NONE":
            continue
        if "|" in line:
            a, _, b = line.partition("|")
            a, b = a.strip(), b.strip()
            if a in known and b in known and a != b:
                pairs.append((a, b))
    return pairs


def generate_subtopics(
    topic: Topic,
    generator: TextGenerator,
    config: SynthesisConfig,
    log: SynthesisLog | None = None,
) -> list[Subtopic]:
    """Draft n_subtopics_target distinct subtopics (query and insights filled later).

    Distinctness loop: a judge call lists overlapping pairs; the second member
    of each pair is dropped and replacements are generated, up to the retry
    bound.
    """
    target = config.n_subtopics_target
    names: list[str] = []
    seed_block = "\n".join(topic.seed_documents) or "(none)"

    def request(count: int, avoid: Sequence[str], attempt: int) -> list[str]:
        prompt = render_template(
            "subtopics",
            topic=topic.title,
            n_subtopics=str(count),
            avoid="\n".join(f"- {name}" for name in avoid) or "(none)",
            seed_documents=seed_block,
        )
        reply = generator.generate(prompt, stage="subtopics")
        drafts = [n for n in _parse_lines(reply) if n not in avoid]
        if log is not None:
            log.record("subtopics", attempt, bool(drafts), requested=count, received=len(drafts))
        return drafts

    attempt = 1
    names = request(target, (), attempt)[:target]
    while True:
        if len(names) < target:
            if attempt > config.max_chapter_retries:
                raise SynthesisError("subtopics", f"only {len(names)}/{target} distinct subtopics", partial=names)
            attempt += 1
            names.extend(request(target - len(names), names, attempt)[: target - len(names)])
            continue
        overlap_prompt = render_template("subtopic_overlap", subtopics="\n".join(f"- {n}" for n in names))
        reply = generator.generate(overlap_prompt, stage="subtopic_overlap")
        pairs = _parse_overlap_pairs(reply, names)
        if log is not None:
            log.record("subtopic_overlap", attempt, not pairs, overlapping=len(pairs))
        if not pairs:
            break
        if attempt > config.max_chapter_retries:
            raise SynthesisError("subtopics", f"subtopics still overlap after {attempt} attempts", partial=names)
        dropped = {b for _, b in pairs}
        logger.info("dropping %d overlapping subtopic(s): %s", len(dropped), sorted(dropped))
        names = [n for n in names if n not in dropped]
        attempt += 1
    return [
        Subtopic(id=f"s{k:02d}", topic_id=topic.id, name=name, query="", insight_ids=())
        for k, name in enumerate(names[:target], start=1)
    ]


# ---------------------------------------------------------------------------
# Insights

SiblingContext = Sequence[tuple[str, Sequence[str]]]  # (subtopic name, its insight texts)


def generate_insights(
    subtopic: Subtopic,
    sibling_context: SiblingContext,
    generator: TextGenerator,
    config: SynthesisConfig,
    domain: str = "news",
    topic_title: str = "",
    all_subtopic_names: Sequence[str] | None = None,
    log: SynthesisLog | None = None,
) -> list[Insight]:
    """Draft insights for one subtopic and verify they belong to it.

    Conversation mode steers generation away from sibling material via the
    avoid block in the prompt. News mode re-classifies each draft against all
    subtopic names and drops any draft whose classified subtopic differs from
    its origin.
    """
    lo, hi = config.insights_per_subtopic
    if domain == "conversation":
        avoid_lines = [f"- {name}: {text}" for name, texts in sibling_context for text in texts]
        avoid_lines.extend(f"- {name}" for name, texts in sibling_context if not texts)
        avoid = "\n".join(avoid_lines) or "(none)"
    else:
        avoid = "(none)"
    prompt = render_template(
        "insights",
        topic=topic_title or subtopic.topic_id,
        subtopic=subtopic.name,
        n_min=str(lo),
        n_max=str(hi),
        avoid=avoid,
    )
    reply = generator.generate(prompt, stage="insights")
    texts = _parse_lines(reply)[:hi]
    if log is not None:
        log.record("insights", 1, len(texts) >= lo, subtopic=subtopic.id, received=len(texts))
    if len(texts) < lo:
        raise SynthesisError("insights", f"subtopic {subtopic.id} produced {len(texts)} insights, need >= {lo}")

    if domain == "news":
        names = list(all_subtopic_names or [subtopic.name, *(n for n, _ in sibling_context)])
        kept = []
        for text in texts:
            classify_prompt = render_template(
                "classify", subtopics="\n".join(f"- {n}" for n in names), insight=text
            )
            verdict = generator.generate(classify_prompt, stage="classify_insight").strip()
            ok = verdict == subtopic.name
            if log is not None:
                log.record("classify_insight", 1, ok, subtopic=subtopic.id)
            if ok:
                kept.append(text)
            else:
                logger.info("dropping insight of %s reclassified as %r: %s", subtopic.id, verdict, text)
        texts = kept
        if len(texts) < lo:
            raise SynthesisError(
                "insights",
                f"subtopic {subtopic.id} kept {len(texts)} insights after classification, need >= {lo}",
            )
    return [
        Insight(id=f"{subtopic.id}-i{k:02d}", subtopic_id=subtopic.id, text=text)
        for k, text in enumerate(texts, start=1)
    ]


# ---------------------------------------------------------------------------
# Placement


@dataclass
class InsightAssignment:
    """Who goes where: one insight-id set per document plus per-insight counts."""

    per_document: list[set[str]]
    placement_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.placement_counts:
            counts: dict[str, int] = {}
            for doc_set in self.per_document:
                for iid in doc_set:
                    counts[iid] = counts.get(iid, 0) + 1
            self.placement_counts = counts


def assign_insights(insights: Sequence[Insight], config: SynthesisConfig, rng: Random) -> InsightAssignment:
    """Randomly place insights into documents, honoring the min_repeats floor.

    Per-document counts are sampled from the configured range; each insight
    gets a quota of min_repeats placements plus a random share of the leftover
    slots, and quotas are realized into the least-loaded documents first so
    total placements equal the sampled slot count exactly.
    """
    ids = [ins.id for ins in insights]
    if not ids:
        raise ConfigurationError("no insights to assign")
    n_docs = config.n_documents
    lo, hi = config.insights_per_document
    if config.min_repeats > n_docs:
        raise ConfigurationError(f"min_repeats={config.min_repeats} exceeds n_documents={n_docs}")

    per_doc_target = [min(rng.randint(lo, hi), len(ids)) for _ in range(n_docs)]
    total_slots = sum(per_doc_target)
    floor = len(ids) * config.min_repeats
    if total_slots < floor:
        raise ConfigurationError(
            f"infeasible assignment: {total_slots} document slots cannot cover "
            f"{len(ids)} insights x min_repeats={config.min_repeats}"
        )

    quotas = {iid: config.min_repeats for iid in ids}
    leftover = total_slots - floor
    open_ids = [iid for iid in ids if quotas[iid] < n_docs]
    for _ in range(leftover):
        if not open_ids:
            break  # every insight already appears in every document
        iid = rng.choice(open_ids)
        quotas[iid] += 1
        if quotas[iid] >= n_docs:
            open_ids.remove(iid)

    # Realize quotas: biggest quota first, each into the docs with the most
    # remaining capacity (ties broken by document index).
    remaining = list(per_doc_target)
    per_document: list[set[str]] = [set() for _ in range(n_docs)]
    order = sorted(ids, key=lambda iid: (-quotas[iid], rng.random()))
    for iid in order:
        candidates = sorted(range(n_docs), key=lambda d: (-remaining[d], d))
        chosen = [d for d in candidates if remaining[d] > 0][: quotas[iid]]
        if len(chosen) < quotas[iid]:
            raise ConfigurationError(
                f"infeasible assignment: could not place insight {iid} {quotas[iid]} times"
            )
        for d in chosen:
            per_document[d].add(iid)
            remaining[d] -= 1
    return InsightAssignment(per_document=per_document)


# ---------------------------------------------------------------------------
# Documents


@dataclass(frozen=True)
class DocumentSlot:
    doc_id: int
    topic: Topic
    subtopic_names: tuple[tuple[str, str], ...] = ()  # (subtopic_id, name) pairs for prompt rendering


def generate_document(
    slot: DocumentSlot,
    assigned_insights: Sequence[Insight],
    other_insights: Sequence[Insight],
    generator: TextGenerator,
    verifier: Verifier,
    config: SynthesisConfig,
    log: SynthesisLog | None = None,
) -> Document:
    """Generate one document and loop until the verifier accepts it.

    Acceptance means: every assigned insight expressed, no other insight
    leaked in. News mode regenerates via targeted edits; conversation mode
    builds the document chapter-by-chapter (one insight per chapter) with a
    per-chapter retry bound, then verifies the assembled whole.
    """
    if not assigned_insights:
        raise SynthesisError("document", f"document {slot.doc_id} has no assigned insights")
    if slot.topic.domain == "conversation":
        return _generate_document_chapters(slot, assigned_insights, other_insights, generator, verifier, config, log)
    return _generate_document_news(slot, assigned_insights, other_insights, generator, verifier, config, log)


def _verify(text: str, assigned, others, verifier: Verifier) -> tuple[set[str], set[str]]:
    present = verifier.document_insights(text, list(assigned) + list(others))
    assigned_ids = {i.id for i in assigned}
    missing = assigned_ids - present
    leaked = present - assigned_ids
    return missing, leaked


def _finish_document(slot: DocumentSlot, text: str, assigned, config: SynthesisConfig) -> Document:
    counter = get_token_counter(config.token_counter)
    return Document(
        id=slot.doc_id,
        text=text,
        assigned_insight_ids=frozenset(i.id for i in assigned),
        token_count=counter(text),
    )


def _generate_document_news(slot, assigned, others, generator, verifier, config, log) -> Document:
    insight_block = "\n".join(f"- {i.text}" for i in assigned)
    text = ""
    missing: set[str] = set()
    leaked: set[str] = set()
    by_id = {i.id: i for i in list(assigned) + list(others)}
    for attempt in range(1, config.max_doc_regenerations + 1):
        if attempt == 1:
            prompt = render_template(
                "document_news",
                topic=slot.topic.title,
                insights=insight_block,
                words=str(config.words_per_document),
            )
            text = generator.generate(prompt, stage="document")
        else:
            prompt = render_template(
                "document_edit",
                document=text,
                add="\n".join(f"- {by_id[i].text}" for i in sorted(missing)) or "(none)",
                remove="\n".join(f"- {by_id[i].text}" for i in sorted(leaked)) or "(none)",
            )
            text = generator.generate(prompt, stage="document_edit")
        missing, leaked = _verify(text, assigned, others, verifier)
        accepted = not missing and not leaked
        if log is not None:
            log.record("document", attempt, accepted, doc_id=slot.doc_id)
        if accepted:
            return _finish_document(slot, text, assigned, config)
    raise DocumentVerificationError(slot.doc_id, missing, leaked, config.max_doc_regenerations)


def _generate_document_chapters(slot, assigned, others, generator, verifier, config, log) -> Document:
    words_per_chapter = max(1, config.words_per_document // len(assigned))
    names = dict(slot.subtopic_names)
    subtopic_of = {i.id: names.get(i.subtopic_id, i.subtopic_id) for i in assigned}
    missing: set[str] = set()
    leaked: set[str] = set()
    for attempt in range(1, config.max_doc_regenerations + 1):
        chapters = []
        for insight in assigned:
            prompt = render_template(
                "chapter",
                topic=slot.topic.title,
                subtopic=subtopic_of[insight.id],
                insight=insight.text,
                words=str(words_per_chapter),
            )
            for retry in range(1, config.max_chapter_retries + 1):
                chapter = generator.generate(prompt, stage="chapter")
                ok = verifier.chapter_covers(chapter, insight)
                if log is not None:
                    log.record("chapter", retry, ok, doc_id=slot.doc_id, insight=insight.id)
                if ok:
                    chapters.append(chapter)
                    break
            else:
                raise DocumentVerificationError(slot.doc_id, {insight.id}, set(), config.max_chapter_retries)
        text = "\n\n".join(chapters)
        missing, leaked = _verify(text, assigned, others, verifier)
        accepted = not missing and not leaked
        if log is not None:
            log.record("document", attempt, accepted, doc_id=slot.doc_id)
        if accepted:
            return _finish_document(slot, text, assigned, config)
    raise DocumentVerificationError(slot.doc_id, missing, leaked, config.max_doc_regenerations)


# ---------------------------------------------------------------------------
# Queries


def subtopic_to_query(subtopic: Subtopic, generator: TextGenerator | None = None, log: SynthesisLog | None = None) -> str:
    """Render the subtopic as an interrogative query.

    Without a generator, falls back to the fixed question template. Output is
    normalized to end with a question mark.
    """
    if generator is None:
        return f"What is discussed regarding {subtopic.name}?"
    prompt = render_template("query", subtopic=subtopic.name)
    reply = generator.generate(prompt, stage="query").strip()
    if log is not None:
        log.record("query", 1, bool(reply), subtopic=subtopic.id)
    if not reply:
        raise SynthesisError("query", f"empty query for subtopic {subtopic.id}")
    reply = reply.rstrip(".!")
    if not reply.endswith("?"):
        reply += "?"
    return reply


# ---------------------------------------------------------------------------
# End-to-end build


def build_haystack(
    topic: Topic,
    config: SynthesisConfig,
    generator: TextGenerator,
    verifier: Verifier,
    log: SynthesisLog | None = None,
    workers: int = 1,
) -> Haystack:
    """Run the full pipeline and return a validated haystack.

    Deterministic given (config.rng_seed, scripted generator): all sampling
    draws from one seeded RNG in a fixed order. Document slots are
    independent once the assignment is fixed, so with workers > 1 they run
    concurrently (the generator and verifier must be safe for concurrent
    calls); documents are assembled in slot order either way.
    """
    config.validate()
    if topic.domain not in ("conversation", "news"):
        raise ConfigurationError(f"unsupported topic domain: {topic.domain!r}")
    rng = Random(config.rng_seed)

    subtopics = generate_subtopics(topic, generator, config, log=log)

    insights_by_subtopic: dict[str, list[Insight]] = {}
    all_names = [s.name for s in subtopics]
    for sub in subtopics:
        siblings: SiblingContext = [
            (other.name, [i.text for i in insights_by_subtopic.get(other.id, [])])
            for other in subtopics
            if other.id != sub.id
        ]
        insights_by_subtopic[sub.id] = generate_insights(
            sub,
            siblings,
            generator,
            config,
            domain=topic.domain,
            topic_title=topic.title,
            all_subtopic_names=all_names,
            log=log,
        )

    subtopics = tuple(
        Subtopic(
            id=sub.id,
            topic_id=sub.topic_id,
            name=sub.name,
            query=subtopic_to_query(sub, generator, log=log),
            insight_ids=tuple(i.id for i in insights_by_subtopic[sub.id]),
        )
        for sub in subtopics
    )

    all_insights: list[Insight] = [i for sub in subtopics for i in insights_by_subtopic[sub.id]]
    assignment = assign_insights(all_insights, config, rng)

    by_id = {i.id: i for i in all_insights}
    name_pairs = tuple((sub.id, sub.name) for sub in subtopics)

    def build_slot(job: tuple[int, set[str]]) -> Document:
        doc_index, id_set = job
        assigned = [by_id[iid] for iid in sorted(id_set)]
        others = [i for i in all_insights if i.id not in id_set]
        return generate_document(
            DocumentSlot(doc_id=doc_index, topic=topic, subtopic_names=name_pairs),
            assigned,
            others,
            generator,
            verifier,
            config,
            log=log,
        )

    jobs = list(enumerate(assignment.per_document, start=1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            documents = list(pool.map(build_slot, jobs))
    else:
        documents = [build_slot(job) for job in jobs]

    placements: dict[str, set[int]] = {i.id: set() for i in all_insights}
    for doc in documents:
        for iid in doc.assigned_insight_ids:
            placements[iid].add(doc.id)
    insights = {i.id: with_gold(i, placements[i.id]) for i in all_insights}

    haystack = Haystack(
        topic=topic,
        subtopics=subtopics,
        insights=insights,
        documents=tuple(documents),
        config=config,
    )
    violations = validate_haystack(haystack)
    if violations:
        raise SynthesisError("assemble", "built haystack failed validation: " + "; ".join(map(str, violations)))
    return haystack
