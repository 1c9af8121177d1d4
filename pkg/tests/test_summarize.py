"""Prompt construction and candidate-summary parsing."""

import pytest

from hayrick.core import Document, InputError
from hayrick.gateway import UsageRecord
from hayrick.summarize import (
    CandidateSummary,
    SummaryParseError,
    SummaryRequest,
    build_summary_prompt,
    out_of_range_citations,
    parse_summary,
    run_summarization,
)


def docs(n=3):
    return [Document(id=k, text=f"Body of document {k}.", token_count=5) for k in range(1, n + 1)]


def request(n_bullets=5, doc_ids=(1, 2, 3)):
    return SummaryRequest(
        haystack_id="h",
        subtopic_id="s01",
        query="What is discussed regarding Alpha?",
        context_document_ids=tuple(doc_ids),
        n_bullets_required=n_bullets,
        summarizer="mock:any",
    )


# ---------------------------------------------------------------------------
# Prompt


def test_prompt_contains_query_count_citation_example_and_docs_in_order():
    prompt = build_summary_prompt(request(), docs())
    assert "What is discussed regarding Alpha?" in prompt
    assert "exactly 5 bullet points" in prompt
    assert "[1,2]" in prompt
    assert prompt.index("Document 1:") < prompt.index("Document 2:") < prompt.index("Document 3:")


def test_empty_context_is_an_error():
    with pytest.raises(InputError):
        build_summary_prompt(request(), [])


def test_permuting_documents_changes_only_the_document_block():
    a = build_summary_prompt(request(), docs())
    b = build_summary_prompt(request(), list(reversed(docs())))
    # Oracle: diff the two renderings; instructions before the block match.
    cut = "Documents:\n"
    assert a.split(cut)[0] == b.split(cut)[0]
    assert a.split(cut)[1] != b.split(cut)[1]


def test_document_headers_use_original_ids():
    prompt = build_summary_prompt(request(doc_ids=(7, 2)), [docs(9)[6], docs(9)[1]])
    assert "Document 7:" in prompt and "Document 2:" in prompt


# ---------------------------------------------------------------------------
# Parsing


def test_parse_basic_bullets_and_citations():
    summary = parse_summary("- Pomodoro is discussed [3,7]\n- Deadlines cause stress [2]")
    assert len(summary.bullets) == 2
    assert summary.bullets[0].cited_document_ids == {3, 7}
    assert summary.bullets[1].cited_document_ids == {2}
    assert summary.bullets[0].text.startswith("Pomodoro")


def test_multiple_groups_union_dedup():
    # Oracle: enumerate the union by hand: {1,2} | {2,9} = {1,2,9}.
    summary = parse_summary("technique [1,2] and also [2,9]")
    assert summary.bullets[0].cited_document_ids == {1, 2, 9}


def test_bullet_without_brackets_has_empty_cites():
    summary = parse_summary("- No citations here at all")
    assert summary.bullets[0].cited_document_ids == frozenset()


def test_noninteger_brackets_ignored_but_counted():
    summary = parse_summary("- A fact [sic] with [2] and [not, numbers]")
    assert summary.bullets[0].cited_document_ids == {2}
    assert summary.ignored_bracket_groups == 2


def test_blank_lines_dropped_and_markers_stripped():
    raw = "1. First point [1]\n\n* Second point [2]\n   \n- Third [3]\n"
    summary = parse_summary(raw)
    assert [b.text for b in summary.bullets] == ["First point [1]", "Second point [2]", "Third [3]"]
    assert [b.index for b in summary.bullets] == [1, 2, 3]


def test_words_per_bullet():
    summary = parse_summary("- one two three\n- four five")
    assert summary.words_per_bullet == pytest.approx(2.5)


def test_empty_text_is_parse_error():
    with pytest.raises(SummaryParseError):
        parse_summary("   \n  ")


def test_parse_never_raises_on_arbitrary_text():
    nasty = [
        "no markers anywhere",
        "[[[]]]",
        "[]",
        "- [9999999999]",
        "•   weird bullets [1] • more",
        "- negative [-1] ignored as non-list",
        "]" * 50 + "[" * 50,
    ]
    for raw in nasty:
        summary = parse_summary(raw)
        assert summary.bullets
        for bullet in summary.bullets:
            assert all(isinstance(d, int) for d in bullet.cited_document_ids)


def test_parse_total_over_random_text():
    import random
    import string

    rng = random.Random(99)
    alphabet = string.ascii_letters + string.digits + "[], .-*\n•"
    for _ in range(200):
        raw = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 120)))
        try:
            summary = parse_summary(raw)
        except SummaryParseError:
            continue  # the one allowed failure mode
        for bullet in summary.bullets:
            assert all(isinstance(d, int) and d >= 0 for d in bullet.cited_document_ids)
        assert summary.words_per_bullet >= 0


def test_parse_idempotent_on_own_rendering():
    raw = "1. First point [1,4]\n- Second [2] extra [x]\n* Third"
    once = parse_summary(raw)
    twice = parse_summary(once.render())
    assert [b.text for b in once.bullets] == [b.text for b in twice.bullets]
    assert [b.cited_document_ids for b in once.bullets] == [b.cited_document_ids for b in twice.bullets]


def test_out_of_range_citations_flagged_not_dropped():
    summary = parse_summary("- Cites beyond range [2,99]")
    assert summary.bullets[0].cited_document_ids == {2, 99}
    assert out_of_range_citations(summary, n_documents=10) == {99}


# ---------------------------------------------------------------------------
# Runner


class ScriptedGateway:
    def __init__(self, text):
        self.text = text
        self.calls = 0

    def generate(self, endpoint, prompt, params=None):
        self.calls += 1
        return self.text, UsageRecord(endpoint="scripted", input_tokens=11, output_tokens=7)


def test_run_summarization_parses_and_reports_usage():
    gateway = ScriptedGateway("- A point [1]\n- B point [2]")
    raws = []
    summary, usage = run_summarization(
        request(n_bullets=2), docs(), gateway, endpoint=None, persist_raw=raws.append
    )
    assert isinstance(summary, CandidateSummary)
    assert len(summary.bullets) == 2
    assert usage.input_tokens == 11 and usage.output_tokens == 7
    assert raws == ["- A point [1]\n- B point [2]"]


def test_run_summarization_stable_given_scripted_gateway():
    gateway = ScriptedGateway("- Same thing [1]")
    first, _ = run_summarization(request(n_bullets=1), docs(), gateway, endpoint=None)
    second, _ = run_summarization(request(n_bullets=1), docs(), gateway, endpoint=None)
    assert first.bullets == second.bullets


def test_run_summarization_empty_output_is_parse_error_with_raw_persisted():
    gateway = ScriptedGateway("")
    raws = []
    with pytest.raises(SummaryParseError):
        run_summarization(request(), docs(), gateway, endpoint=None, persist_raw=raws.append)
    assert raws == [""]  # raw output persisted before parsing
