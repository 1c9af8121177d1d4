"""Document relevance scoring, token-budgeted context assembly, and the
document orderings used by the position-bias experiment.

Six retriever kinds produce one finite score per document. Context assembly
sorts by descending score (ties by ascending document id) and takes the
longest prefix that fits the token budget; documents are atomic, never split.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from random import Random
from typing import Protocol, Sequence

from .core import ConfigurationError, Document, Haystack, HayrickError, Subtopic

RETRIEVER_KINDS = ("random", "keywords", "embed", "long_embed", "rerank", "oracle")

DEFAULT_BUDGET_TOKENS = 15000


class RetrievalError(HayrickError):
    """A retrieval provider failed while scoring documents."""


class EmbeddingProvider(Protocol):
    def embed(self, texts: Sequence[str]) -> Sequence[Sequence[float]]: ...


class RerankingProvider(Protocol):
    def rerank(self, query: str, texts: Sequence[str]) -> Sequence[float]: ...


# ---------------------------------------------------------------------------
# Keyword machinery

_WORD = re.compile(r"[a-z]+")


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    """The fixed English stopword list shipped with the package."""
    text = resources.files("hayrick").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())

def content_tokens(text: str) -> frozenset[str]:
    """Lowercased alphabetic tokens minus stopwords (types, not occurrences)."""
    return frozenset(_WORD.findall(text.lower())) - stopwords()


def keyword_overlap(a: str, b: str) -> int:
    return len(content_tokens(a) & content_tokens(b))


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(u, v))
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(y * y for y in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


# ---------------------------------------------------------------------------
# Scoring


def score_documents(
    haystack: Haystack,
    subtopic: Subtopic,
    kind: str,
    providers: dict | None = None,
    rng: Random | None = None,
) -> list[tuple[int, float]]:
    """One finite relevance score per document for the subtopic's query.

    oracle counts the subtopic's insights planted in each document (pure map
    lookup); keywords counts content-token overlap with the query; random
    draws from the supplied rng; embed/long_embed/rerank call their provider.
    """
    providers = providers or {}
    docs = haystack.documents
    if kind == "random":
        if rng is None:
            raise ConfigurationError("random retriever requires an rng")
        return [(doc.id, rng.random()) for doc in docs]
    if kind == "oracle":
        subtopic_ids = set(subtopic.insight_ids)
        return [(doc.id, float(len(subtopic_ids & doc.assigned_insight_ids))) for doc in docs]
    if kind == "keywords":
        query_tokens = content_tokens(subtopic.query)
        return [(doc.id, float(len(query_tokens & content_tokens(doc.text)))) for doc in docs]
    if kind in ("embed", "long_embed"):
        provider = providers.get(kind)
        if provider is None:
            raise ConfigurationError(f"{kind} retriever requires an embedding provider")
        try:
            vectors = provider.embed([subtopic.query] + [doc.text for doc in docs])
        except HayrickError:
            raise
        except Exception as exc:
            raise RetrievalError(f"{kind} provider failed: {exc}") from exc
        query_vec, doc_vecs = vectors[0], vectors[1:]
        return [(doc.id, cosine(query_vec, vec)) for doc, vec in zip(docs, doc_vecs)]
    if kind == "rerank":
        provider = providers.get("rerank")
        if provider is None:
            raise ConfigurationError("rerank retriever requires a rerank provider")
        try:
            scores = provider.rerank(subtopic.query, [doc.text for doc in docs])
        except HayrickError:
            raise
        except Exception as exc:
            raise RetrievalError(f"rerank provider failed: {exc}") from exc
        return [(doc.id, float(s)) for doc, s in zip(docs, scores)]
    raise ConfigurationError(f"unknown retriever kind: {kind!r} (expected one of {RETRIEVER_KINDS})")


# ---------------------------------------------------------------------------
# Context assembly


@dataclass
class ContextSelection:
    query: str
    scored: list[tuple[int, float]]  # sorted by (-score, id); selection is a prefix of this
    selected_ids: list[int]
    budget_tokens: int
    used_tokens: int
    budget_warning: bool = False  # nothing fit under the budget

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "scored": [[doc_id, score] for doc_id, score in self.scored],
            "selected_ids": list(self.selected_ids),
            "budget_tokens": self.budget_tokens,
            "used_tokens": self.used_tokens,
            "budget_warning": self.budget_warning,
        }


def assemble_context(
    scored: Sequence[tuple[int, float]],
    documents: Sequence[Document],
    budget_tokens: int = DEFAULT_BUDGET_TOKENS,
    query: str = "",
) -> ContextSelection:
    """Take the longest descending-score prefix of whole documents that fits.

    Ties break by ascending document id. Selection stops at the first
    document that would exceed the budget, so the result is always a prefix
    of the sorted order.
    """
    for _, score in scored:
        if not math.isfinite(score):
            raise RetrievalError("non-finite relevance score")
    by_id = {doc.id: doc for doc in documents}
    ranked = sorted(scored, key=lambda pair: (-pair[1], pair[0]))
    selected: list[int] = []
    used = 0
    for doc_id, _ in ranked:
        tokens = by_id[doc_id].token_count
        if used + tokens > budget_tokens:
            break
        selected.append(doc_id)
        used += tokens
    return ContextSelection(
        query=query,
        scored=list(ranked),
        selected_ids=selected,
        budget_tokens=budget_tokens,
        used_tokens=used,
        budget_warning=not selected,
    )


# ---------------------------------------------------------------------------
# Position-bias orderings

PLACEMENTS = ("random", "top", "bottom")


def order_for_position_bias(
    haystack: Haystack,
    subtopic: Subtopic,
    placement: str,
    rng: Random,
) -> list[Document]:
    """Order documents with the subtopic's relevant documents at the chosen spot.

    Relevant means the document contains at least one of the subtopic's
    insights (per the placement map). top/bottom keep all relevant documents
    contiguous at that extremity; internal order is a seeded shuffle. random
    shuffles everything.
    """
    if placement not in PLACEMENTS:
        raise ConfigurationError(f"unknown placement: {placement!r} (expected one of {PLACEMENTS})")
    subtopic_ids = set(subtopic.insight_ids)
    relevant = [doc for doc in haystack.documents if subtopic_ids & doc.assigned_insight_ids]
    other = [doc for doc in haystack.documents if not subtopic_ids & doc.assigned_insight_ids]
    if placement == "random":
        everything = list(haystack.documents)
        rng.shuffle(everything)
        return everything
    rng.shuffle(relevant)
    rng.shuffle(other)
    if placement == "top":
        return relevant + other
    return other + relevant
