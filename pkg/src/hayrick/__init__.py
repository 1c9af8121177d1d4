"""Benchmark factory and scoring harness for cited, query-focused
summarization over synthesized document corpora."""

from .core import (
    ConfigurationError,
    Document,
    Haystack,
    HayrickError,
    Insight,
    InputError,
    NotFoundError,
    Subtopic,
    SynthesisConfig,
    Topic,
    gold_citations,
    load_haystack,
    save_haystack,
    validate_haystack,
)
from .scoring import (
    CoverageJudgment,
    CoverageLevel,
    ScoreReport,
    citation_prf,
    coverage_score,
    score_summary,
)
from .synthesis import build_haystack

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CoverageJudgment",
    "CoverageLevel",
    "Document",
    "Haystack",
    "HayrickError",
    "Insight",
    "InputError",
    "NotFoundError",
    "ScoreReport",
    "Subtopic",
    "SynthesisConfig",
    "Topic",
    "build_haystack",
    "citation_prf",
    "coverage_score",
    "gold_citations",
    "load_haystack",
    "save_haystack",
    "score_summary",
    "validate_haystack",
    "__version__",
]
