"""Deterministic offline backends: a template-aware text generator, sentinel
summarizers, and fixture builders.

These exist so the whole pipeline can run desk-scale with no network: the
generator fabricates subtopics, entity-bearing insight sentences, and
documents that embed each assigned insight verbatim, which the sentinel
verifier and judge can then check by substring. They parse the stock prompt
templates; custom templates need custom mocks.
"""

from __future__ import annotations

import re
import zlib

from .core import Haystack, SynthesisConfig, Topic, words_4_3_counter
from .gateway import UsageRecord
from .synthesis import SentinelVerifier, build_haystack

FILLER_SENTENCE = "The session continued with routine remarks and no further specifics."

_TOPIC = re.compile(r"^Topic: (.*)$", re.MULTILINE)
_SUBTOPIC = re.compile(r"^Subtopic: (.*)$", re.MULTILINE)
_INSIGHT = re.compile(r"^Insight: (.*)$", re.MULTILINE)
_QUERY = re.compile(r"^Query: (.*)$", re.MULTILINE)
_N_SUBTOPICS = re.compile(r"Propose (\d+) subtopics")
_N_RANGE = re.compile(r"between (\d+) and (\d+) insights")
_WORDS = re.compile(r"(?:approximately|roughly) (\d+)\s+words")
_DOC_HEADER = re.compile(r"^Document (\d+):$", re.MULTILINE)


def _stable_int(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def _block(prompt: str, start_marker: str, end_marker: str | None = None) -> str:
    _, found, rest = prompt.partition(start_marker)
    if not found:
        return ""
    if end_marker:
        rest = rest.partition(end_marker)[0]
    return rest.strip("\n")


def _dash_lines(block: str) -> list[str]:
    return [line[2:].strip() for line in block.splitlines() if line.startswith("- ")]


def _pad_to_words(parts: list[str], target_words: int) -> str:
    text = " ".join(parts)
    while len(text.split()) < target_words:
        text += " " + FILLER_SENTENCE
    return text


class MockTextGenerator:
    """Pure function of (prompt, stage); mirrors the stock templates.

    Insight sentences carry a subtopic-unique code, a number, and a day so
    they read like entity-bearing facts and never collide as substrings.
    """

    def generate(self, prompt: str, stage: str) -> str:
        handler = getattr(self, f"_stage_{stage}", None)
        if handler is None:
            raise ValueError(f"mock generator has no handler for stage {stage!r}")
        return handler(prompt)

    # -- synthesis stages ---------------------------------------------------

    def _stage_subtopics(self, prompt: str) -> str:
        count = int(_N_SUBTOPICS.search(prompt).group(1))
        topic = _TOPIC.search(prompt).group(1)
        avoid = set(_dash_lines(_block(prompt, "existing subtopics:\n", "\n\nSeed material")))
        names = []
        k = 1
        while len(names) < count:
            name = f"{topic} focus area {k:02d}"
            if name not in avoid:
                names.append(name)
            k += 1
        return "\n".join(names)

    def _stage_subtopic_overlap(self, prompt: str) -> str:
        return "NONE"

    def _stage_insights(self, prompt: str) -> str:
        name = _SUBTOPIC.search(prompt).group(1)
        lo, hi = (int(g) for g in _N_RANGE.search(prompt).groups())
        count = lo + _stable_int(name) % (hi - lo + 1)
        lines = [
            f"Within {name}, metric M{j:02d} reached {40 + j} units on day {j:02d}."
            for j in range(1, count + 1)
        ]
        return "\n".join(lines)

    def _stage_classify_insight(self, prompt: str) -> str:
        insight = _INSIGHT.search(prompt).group(1)
        names = _dash_lines(_block(prompt, "Subtopics:\n", "\n\nInsight:"))
        contained = [n for n in names if n in insight]
        if contained:
            return max(contained, key=len)
        return names[0] if names else ""

    def _stage_query(self, prompt: str) -> str:
        name = _SUBTOPIC.search(prompt).group(1)
        return f"What is discussed regarding {name}?"

    def _stage_document(self, prompt: str) -> str:
        topic = _TOPIC.search(prompt).group(1)
        words = int(_WORDS.search(prompt).group(1))
        insights = _dash_lines(_block(prompt, "following insights:\n", "\n\nDo not include"))
        return _pad_to_words([f"Report on {topic}."] + insights, words)

    def _stage_document_edit(self, prompt: str) -> str:
        text = _block(prompt, "Document:\n", "\n\nAdd sentences")
        add = _dash_lines(_block(prompt, "missing insights:\n", "\n\nRemove"))
        remove = _dash_lines(_block(prompt, "extraneous insights:\n", "\n\nKeep everything"))
        for sentence in remove:
            if sentence != "(none)":
                text = text.replace(sentence, "").replace("  ", " ")
        extra = [s for s in add if s != "(none)"]
        return text + (" " + " ".join(extra) if extra else "")

    def _stage_chapter(self, prompt: str) -> str:
        insight = _INSIGHT.search(prompt).group(1)
        words = int(_WORDS.search(prompt).group(1))
        return _pad_to_words([f"One participant noted: {insight}"], words)

    def _stage_document_check(self, prompt: str) -> str:
        document = _block(prompt, "Document:\n", "\nCandidate insights:")
        block = _block(prompt, "Candidate insights:\n", "\n\nReply with")
        found = []
        for line in block.splitlines():
            match = re.match(r"^(\d+)\. (.*)$", line.strip())
            if match and match.group(2) in document:
                found.append(int(match.group(1)))
        return "[" + ",".join(str(n) for n in found) + "]"


# ---------------------------------------------------------------------------
# Gateway-shaped mock summarizers


def _usage(name: str, prompt: str, text: str) -> UsageRecord:
    return UsageRecord(
        endpoint=name,
        input_tokens=words_4_3_counter(prompt),
        output_tokens=words_4_3_counter(text),
        cost=0.0,
        cache_hit=False,
        latency_ms=0,
    )


def _subtopic_for_prompt(haystack: Haystack, prompt: str):
    query = _QUERY.search(prompt).group(1)
    for sub in haystack.subtopics:
        if sub.query == query:
            return sub
    raise ValueError(f"prompt query does not match any subtopic: {query!r}")


def _parse_document_blocks(prompt: str) -> list[tuple[int, str]]:
    docs_block = prompt.partition("\nDocuments:\n")[2]
    docs_block = docs_block.partition("\n\nReply with the bullet points only.")[0]
    headers = list(_DOC_HEADER.finditer(docs_block))
    out = []
    for k, header in enumerate(headers):
        end = headers[k + 1].start() if k + 1 < len(headers) else len(docs_block)
        out.append((int(header.group(1)), docs_block[header.end():end].strip()))
    return out


class PerfectSummarizer:
    """Emits every reference insight verbatim with its exact gold citations."""

    name = "mock:perfect"

    def __init__(self, haystack: Haystack):
        self.haystack = haystack

    def generate(self, endpoint, prompt: str, params=None) -> tuple[str, UsageRecord]:
        sub = _subtopic_for_prompt(self.haystack, prompt)
        bullets = []
        for insight in self.haystack.subtopic_insights(sub.id):
            cites = ",".join(str(d) for d in sorted(insight.gold_document_ids))
            bullets.append(f"- {insight.text} [{cites}]")
        text = "\n".join(bullets)
        return text, _usage(self.name, prompt, text)


class LossySummarizer:
    """Covers every other insight and cites only one gold document for each,
    yielding deliberately mid-range scores."""

    name = "mock:lossy"

    def __init__(self, haystack: Haystack):
        self.haystack = haystack

    def generate(self, endpoint, prompt: str, params=None) -> tuple[str, UsageRecord]:
        sub = _subtopic_for_prompt(self.haystack, prompt)
        bullets = []
        for k, insight in enumerate(self.haystack.subtopic_insights(sub.id)):
            if k % 2 == 0:
                bullets.append(f"- {insight.text} [{min(insight.gold_document_ids)}]")
            else:
                bullets.append(f"- No additional remarks were recorded for item {k + 1}.")
        text = "\n".join(bullets)
        return text, _usage(self.name, prompt, text)


class WindowSummarizer:
    """Only reads the first `window` context documents: an insight is emitted
    (citing where it was seen) only if it appears within that window. Makes
    document-order effects visible."""

    def __init__(self, haystack: Haystack, window: int = 10):
        self.haystack = haystack
        self.window = window
        self.name = f"mock:window:{window}"

    def generate(self, endpoint, prompt: str, params=None) -> tuple[str, UsageRecord]:
        sub = _subtopic_for_prompt(self.haystack, prompt)
        visible = _parse_document_blocks(prompt)[: self.window]
        bullets = []
        for k, insight in enumerate(self.haystack.subtopic_insights(sub.id)):
            found = [doc_id for doc_id, text in visible if insight.text in text]
            if found:
                bullets.append(f"- {insight.text} [{','.join(str(d) for d in found)}]")
            else:
                bullets.append(f"- Item {k + 1} was not located in the reviewed material.")
        text = "\n".join(bullets)
        return text, _usage(self.name, prompt, text)


# ---------------------------------------------------------------------------
# Fixture builder


def build_mock_haystack(
    seed: int = 0,
    domain: str = "news",
    title: str = "Quarterly planning review",
    n_subtopics: int = 2,
    insights_per_subtopic: tuple[int, int] = (3, 4),
    n_documents: int = 12,
    words_per_document: int = 120,
    min_repeats: int = 2,
    insights_per_document: tuple[int, int] = (2, 3),
) -> Haystack:
    """Build a small, fully valid haystack offline in a few milliseconds."""
    topic = Topic(id="mock-topic", title=title, domain=domain)
    config = SynthesisConfig(
        n_subtopics_target=n_subtopics,
        insights_per_subtopic=insights_per_subtopic,
        n_documents=n_documents,
        words_per_document=words_per_document,
        min_repeats=min_repeats,
        insights_per_document=insights_per_document,
        rng_seed=seed,
        max_doc_regenerations=5,
        max_chapter_retries=10,
    )
    return build_haystack(topic, config, MockTextGenerator(), SentinelVerifier())
