"""Summary task prompt construction and candidate-summary parsing.

A candidate summary is the raw text a summarizer returned: one bullet per
line, each bullet citing source documents in bracketed integer lists like
[1,2]. Parsing is total over arbitrary text; the only hard failure is a
text with no bullets at all.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import Document, HayrickError, InputError

CITATION_GROUP = re.compile(r"\[([^\[\]]*)\]")
INT_LIST = re.compile(r"^\s*\d+(?:\s*[,\s]\s*\d+)*\s*$")
LIST_MARKER = re.compile(r"^(?:[-*•]+|\d+[.)])\s*")


class SummaryParseError(HayrickError):
    """Raw text yielded no bullets."""


class SummaryRunError(HayrickError):
    """Summarizer endpoint failed to produce output."""


@dataclass(frozen=True)
class SummaryRequest:
    haystack_id: str
    subtopic_id: str
    query: str
    context_document_ids: tuple[int, ...]
    n_bullets_required: int
    summarizer: str  # endpoint name


@dataclass(frozen=True)
class Bullet:
    index: int  # 1-based position in the summary
    text: str
    cited_document_ids: frozenset[int]


@dataclass(frozen=True)
class CandidateSummary:
    raw_text: str
    bullets: tuple[Bullet, ...]
    words_per_bullet: float
    ignored_bracket_groups: int = 0

    def render(self) -> str:
        return "\n".join(f"- {b.text}" for b in self.bullets)


def build_summary_prompt(request: SummaryRequest, documents: Sequence[Document]) -> str:
    """Render the task prompt: query, bullet count, citation instructions, and
    the documents in the given order, each headed by its 1-based id."""
    from .templating import render_template

    if not documents:
        raise InputError("empty context: no documents to summarize")
    blocks = []
    for doc in documents:
        blocks.append(f"Document {doc.id}:\n{doc.text}")
    return render_template(
        "summary_task",
        n_documents=str(len(documents)),
        query=request.query,
        n_bullets=str(request.n_bullets_required),
        documents="\n\n".join(blocks),
    )


def parse_summary(raw_text: str) -> CandidateSummary:
    """Split on line breaks, strip list markers, and pull citation sets out of
    bracketed integer groups. Bracketed non-integer content is ignored but
    counted."""
    if not raw_text.strip():
        raise SummaryParseError("empty summary text")
    bullets: list[Bullet] = []
    ignored = 0
    total_words = 0
    for line in raw_text.splitlines():
        line = line.strip()
        if not line:
            continue
        text = LIST_MARKER.sub("", line).strip()
        if not text:
            continue
        cited: set[int] = set()
        for group in CITATION_GROUP.findall(text):
            if INT_LIST.match(group):
                cited.update(int(tok) for tok in re.split(r"[,\s]+", group.strip()))
            else:
                ignored += 1
        total_words += len(text.split())
        bullets.append(Bullet(index=len(bullets) + 1, text=text, cited_document_ids=frozenset(cited)))
    if not bullets:
        raise SummaryParseError("no bullets found in summary text")
    return CandidateSummary(
        raw_text=raw_text,
        bullets=tuple(bullets),
        words_per_bullet=total_words / len(bullets),
        ignored_bracket_groups=ignored,
    )


def out_of_range_citations(summary: CandidateSummary, n_documents: int) -> set[int]:
    """Cited ids outside 1..N. Kept in the citation sets (they count as
    precision misses); this helper only surfaces them for warnings."""
    bad: set[int] = set()
    for bullet in summary.bullets:
        bad.update(did for did in bullet.cited_document_ids if not 1 <= did <= n_documents)
    return bad


def run_summarization(
    request: SummaryRequest,
    documents: Sequence[Document],
    gateway,
    endpoint,
    params: dict | None = None,
    persist_raw: Callable[[str], None] | None = None,
):
    """Build the prompt, call the summarizer, persist the raw output before
    parsing, and return (CandidateSummary, UsageRecord)."""
    prompt = build_summary_prompt(request, documents)
    try:
        raw_text, usage = gateway.generate(endpoint, prompt, params or {})
    except HayrickError:
        raise
    except Exception as exc:
        raise SummaryRunError(f"summarizer {request.summarizer!r} failed: {exc}") from exc
    if persist_raw is not None:
        persist_raw(raw_text)
    try:
        summary = parse_summary(raw_text)
    except SummaryParseError as exc:
        raise SummaryParseError(f"{exc}; raw output began: {raw_text[:200]!r}") from exc
    return summary, usage
