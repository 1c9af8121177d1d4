"""Command-line orchestration: synthesize, run, evaluate, position-bias,
human-score, report.

Every run writes an audit trail under runs/<run-id>/: the verbatim raw model
outputs, one record per task, per-insight judgments, per-summary score
reports, and rendered tables. Every number in a table is recomputable from
the persisted reports (the `report` command does exactly that). Reruns skip
tasks that already have a record, so an interrupted run resumes where it
stopped.

Exit codes: 0 success, 1 partial failures, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from random import Random

from .core import (
    ConfigurationError,
    Haystack,
    HayrickError,
    canonical_json,
    config_from_dict,
    dumps_haystack,
    load_haystack,
    save_haystack,
    Topic,
    validate_haystack,
)
from .gateway import (
    EmbedProvider,
    GatewayTextGenerator,
    HttpTransport,
    ModelGateway,
    RerankProvider,
    load_endpoints,
)
from .metaeval import load_snapshots, position_sensitivity, score_snapshots
from .mocks import LossySummarizer, MockTextGenerator, PerfectSummarizer, WindowSummarizer
from .retrieval import PLACEMENTS, assemble_context, order_for_position_bias, score_documents
from .scoring import (
    LLMJudge,
    SentinelJudge,
    aggregate_run,
    judge_coverage,
    render1,
    report_from_dict,
    report_to_dict,
    score_summary,
)
from .summarize import SummaryRequest, out_of_range_citations, parse_summary, run_summarization
from .synthesis import LLMVerifier, SentinelVerifier, SynthesisLog, build_haystack

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

FULL_CONTEXT = "full"  # pseudo-retriever: the whole haystack, no budget


@dataclass
class RunConfig:
    haystack_path: str
    retrievers: list[str]
    summarizers: list[str]
    judge: str = "mock:sentinel"
    subtopics: list[str] = field(default_factory=list)  # empty = all
    context_budget: int = 15000
    ordering: str = "random"  # document order for full-context tasks
    rng_seed: int = 0
    output_dir: str = "runs"
    registry_path: str | None = None
    cache_dir: str | None = None
    workers: int = 1

    def validate(self) -> None:
        if self.context_budget <= 0:
            raise ConfigurationError("context budget must be positive")
        if not self.retrievers:
            raise ConfigurationError("need at least one retriever")
        if not self.summarizers:
            raise ConfigurationError("need at least one summarizer")
        if self.ordering not in PLACEMENTS:
            raise ConfigurationError(f"ordering must be one of {PLACEMENTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def run_id(self) -> str:
        digest = hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()
        return digest[:12]


def _stable_rng(*parts) -> Random:
    return Random("|".join(str(p) for p in parts))


def _task_id(subtopic_id: str, retriever: str, summarizer: str) -> str:
    safe = lambda s: s.replace(":", "-").replace("/", "-")
    return f"{safe(subtopic_id)}__{safe(retriever)}__{safe(summarizer)}"


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(canonical_json(payload), encoding="utf-8")
    tmp.replace(path)


def _haystack_hash(haystack: Haystack) -> str:
    return hashlib.sha256(dumps_haystack(haystack).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Backend resolution


def _build_gateway(registry_path: str | None, cache_dir: str | None):
    registry = load_endpoints(registry_path) if registry_path else {}
    gateway = ModelGateway(HttpTransport(), cache_dir=cache_dir) if registry else None
    return registry, gateway


def _resolve_summarizer(name: str, haystack: Haystack, registry: dict, gateway):
    """Returns (gateway_like, endpoint). Mock names carry their own backend."""
    if name == "mock:perfect":
        return PerfectSummarizer(haystack), None
    if name == "mock:lossy":
        return LossySummarizer(haystack), None
    if name.startswith("mock:window:"):
        return WindowSummarizer(haystack, window=int(name.rsplit(":", 1)[1])), None
    if name in registry:
        if gateway is None:
            raise ConfigurationError("registry endpoints need --registry and a reachable gateway")
        return gateway, registry[name]
    raise ConfigurationError(f"unknown summarizer: {name!r} (not a mock:* name or registry endpoint)")


def _resolve_judge(name: str, registry: dict, gateway, few_shot: str = ""):
    if name == "mock:sentinel":
        return SentinelJudge()
    if name in registry:
        if gateway is None:
            raise ConfigurationError("registry judge needs --registry")
        return LLMJudge(gateway, registry[name], few_shot_examples=few_shot)
    raise ConfigurationError(f"unknown judge: {name!r}")


def _providers(registry: dict, gateway) -> dict:
    providers = {}
    if gateway is None:
        return providers
    for kind, capability in (("embed", "embed"), ("long_embed", "embed"), ("rerank", "rerank")):
        for endpoint in registry.values():
            if endpoint.capability == capability and endpoint.name.startswith(kind):
                adapter = RerankProvider if kind == "rerank" else EmbedProvider
                providers[kind] = adapter(gateway, endpoint)
                break
    return providers


# ---------------------------------------------------------------------------
# run


def _context_documents(haystack: Haystack, subtopic, retriever: str, config: RunConfig, providers: dict):
    """Returns (documents in context order, selection record dict)."""
    if retriever == FULL_CONTEXT:
        rng = _stable_rng(config.rng_seed, subtopic.id, "order", config.ordering)
        ordered = order_for_position_bias(haystack, subtopic, config.ordering, rng)
        record = {
            "kind": FULL_CONTEXT,
            "ordering": config.ordering,
            "document_ids": [d.id for d in ordered],
            "seed": config.rng_seed,
        }
        return ordered, record
    rng = _stable_rng(config.rng_seed, subtopic.id, retriever)
    scored = score_documents(haystack, subtopic, retriever, providers=providers, rng=rng)
    selection = assemble_context(scored, haystack.documents, config.context_budget, query=subtopic.query)
    docs = [haystack.document(doc_id) for doc_id in selection.selected_ids]
    record = {
        "kind": retriever,
        "seed": config.rng_seed,
        "selection": selection.to_dict(),
        "tie_break": "ascending-document-id",
        "keyword_counts": "type-level set intersection",
    }
    return docs, record


def _run_one_task(haystack, subtopic, retriever, summarizer_name, config, run_dir, registry, gateway, providers):
    task = _task_id(subtopic.id, retriever, summarizer_name)
    record_path = run_dir / "tasks" / f"{task}.json"
    if record_path.exists():
        return json.loads(record_path.read_text(encoding="utf-8")), False
    record = {
        "task": task,
        "subtopic_id": subtopic.id,
        "retriever": retriever,
        "summarizer": summarizer_name,
        "status": "ok",
        "raw_path": f"raw/{task}.txt",
        "n_bullets": len(subtopic.insight_ids),
        "usage": {},
        "context": {},
    }
    try:
        documents, context_record = _context_documents(haystack, subtopic, retriever, config, providers)
        record["context"] = context_record
        backend, endpoint = _resolve_summarizer(summarizer_name, haystack, registry, gateway)
        request = SummaryRequest(
            haystack_id=_haystack_hash(haystack)[:12],
            subtopic_id=subtopic.id,
            query=subtopic.query,
            context_document_ids=tuple(d.id for d in documents),
            n_bullets_required=len(subtopic.insight_ids),
            summarizer=summarizer_name,
        )
        raw_path = run_dir / "raw" / f"{task}.txt"

        def persist(raw_text: str) -> None:
            raw_path.write_text(raw_text, encoding="utf-8")

        summary, usage = run_summarization(
            request, documents, backend, endpoint, params={"temperature": 0}, persist_raw=persist
        )
        stray = out_of_range_citations(summary, len(haystack.documents))
        if stray:
            logger.warning("task %s cites out-of-range documents: %s", task, sorted(stray))
        record["usage"] = {
            "input_tokens": usage.input_tokens,
            "output_tokens": usage.output_tokens,
            "cost": usage.cost,
        }
    except HayrickError as exc:
        record["status"] = "failed"
        record["error"] = str(exc)
        logger.error("task %s failed: %s", task, exc)
    _write_json(record_path, record)
    return record, True


def execute_run(config: RunConfig) -> tuple[Path, list[dict], bool]:
    """Run every (subtopic x retriever x summarizer) task; resumable."""
    config.validate()
    haystack = load_haystack(config.haystack_path)
    violations = validate_haystack(haystack)
    if violations:
        raise ConfigurationError(f"haystack invalid: {violations[0]}")
    registry, gateway = _build_gateway(config.registry_path, config.cache_dir)
    providers = _providers(registry, gateway)

    run_dir = Path(config.output_dir) / config.run_id
    for sub in ("raw", "tasks", "judgments", "reports", "tables"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)

    subtopics = [
        sub for sub in haystack.subtopics if not config.subtopics or sub.id in config.subtopics
    ]
    if not subtopics:
        raise ConfigurationError("subtopic filter matched nothing")

    jobs = [
        (sub, retriever, summarizer)
        for sub in subtopics
        for retriever in config.retrievers
        for summarizer in config.summarizers
    ]

    def work(job):
        sub, retriever, summarizer = job
        return _run_one_task(haystack, sub, retriever, summarizer, config, run_dir, registry, gateway, providers)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]

    records = sorted((record for record, _ in results), key=lambda r: r["task"])
    manifest = {
        "run_id": config.run_id,
        "config": config.to_dict(),
        "haystack_hash": _haystack_hash(haystack),
        "tasks": {record["task"]: record for record in records},
        "totals": {
            "tasks": len(records),
            "failed": sum(1 for r in records if r["status"] != "ok"),
            "input_tokens": sum(r["usage"].get("input_tokens", 0) for r in records),
            "output_tokens": sum(r["usage"].get("output_tokens", 0) for r in records),
            "cost": sum(r["usage"].get("cost", 0.0) for r in records),
        },
    }
    _write_json(run_dir / "manifest.json", manifest)
    any_failed = manifest["totals"]["failed"] > 0
    return run_dir, records, any_failed


# ---------------------------------------------------------------------------
# evaluate


def evaluate_run(
    run_dir: Path,
    judge_name: str,
    haystack_path: str | None = None,
    registry_path: str | None = None,
    cache_dir: str | None = None,
    few_shot: str = "",
    workers: int = 1,
) -> tuple[list[dict], bool]:
    """Judge and score every completed task; write reports and tables."""
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigurationError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    tasks = [t for t in manifest["tasks"].values() if t["status"] == "ok"]
    if not tasks:
        raise ConfigurationError("nothing to evaluate: manifest has no completed tasks")

    haystack = load_haystack(haystack_path or manifest["config"]["haystack_path"])
    registry, gateway = _build_gateway(registry_path, cache_dir)
    judge = _resolve_judge(judge_name, registry, gateway, few_shot)
    (run_dir / "judgments").mkdir(exist_ok=True)
    (run_dir / "reports").mkdir(exist_ok=True)

    def judge_insight(insight, bullets):
        raws: list[dict] = []
        judgment = judge_coverage(
            insight,
            bullets,
            judge,
            raw_sink=lambda attempt, reply: raws.append(
                {"insight_id": insight.id, "attempt": attempt, "raw": reply}
            ),
        )
        return judgment, raws

    rows = []
    any_failed = False
    for task in sorted(tasks, key=lambda t: t["task"]):
        task_id = task["task"]
        raw = (run_dir / task["raw_path"]).read_text(encoding="utf-8")
        judgment_log = run_dir / "judgments" / f"{task_id}.jsonl"
        try:
            summary = parse_summary(raw)
            insights = haystack.subtopic_insights(task["subtopic_id"])
            gold_map = {i.id: i.gold_document_ids for i in insights}
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    judged = list(pool.map(lambda i: judge_insight(i, summary.bullets), insights))
            else:
                judged = [judge_insight(i, summary.bullets) for i in insights]
            judgments = [j for j, _ in judged]
            with open(judgment_log, "w", encoding="utf-8") as sink:
                for _, raws in judged:
                    for entry in raws:
                        sink.write(json.dumps(entry) + "\n")
            report = score_summary(judgments, summary.bullets, gold_map)
        except HayrickError as exc:
            logger.error("evaluation failed for %s: %s", task_id, exc)
            any_failed = True
            rows.append({"task": task_id, "status": "failed", "error": str(exc)})
            continue
        payload = {
            "task": task_id,
            "subtopic_id": task["subtopic_id"],
            "retriever": task["retriever"],
            "summarizer": task["summarizer"],
            "judge": judge_name,
            "status": "ok",
            "report": report_to_dict(report),
        }
        _write_json(run_dir / "reports" / f"{task_id}.json", payload)
        rows.append(payload)
    return rows, any_failed


# ---------------------------------------------------------------------------
# tables


def _load_reports(run_dir: Path) -> list[dict]:
    out = []
    for path in sorted((run_dir / "reports").glob("*.json")):
        out.append(json.loads(path.read_text(encoding="utf-8")))
    return out


def render_aggregate_tsv(cells) -> str:
    lines = ["summarizer\tretriever\tn\tcoverage\tcitation\tjoint\twords_per_bullet"]
    for cell in cells:
        lines.append(
            "\t".join(
                [
                    cell.summarizer,
                    cell.retriever,
                    str(cell.n),
                    render1(cell.coverage),
                    render1(cell.citation),
                    render1(cell.joint),
                    render1(cell.words_per_bullet),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_aggregate_text(cells) -> str:
    """Aligned table: one row per summarizer, one column per retriever under
    each metric group, plus mean words-per-bullet."""
    summarizers = sorted({c.summarizer for c in cells})
    retrievers = sorted({c.retriever for c in cells})
    by_key = {(c.summarizer, c.retriever): c for c in cells}
    metrics = [("Coverage", "coverage"), ("Citation", "citation"), ("Joint", "joint")]

    header1 = ["Summarizer"]
    header2 = [""]
    for title, _ in metrics:
        header1.extend([title] + [""] * (len(retrievers) - 1))
        header2.extend(retrievers)
    header1.append("#W_b")
    header2.append("")

    rows = [header1, header2]
    for summarizer in summarizers:
        row = [summarizer]
        for _, attr in metrics:
            for retriever in retrievers:
                cell = by_key.get((summarizer, retriever))
                row.append(render1(getattr(cell, attr)) if cell else "--")
        wpbs = [by_key[(summarizer, r)].words_per_bullet for r in retrievers if (summarizer, r) in by_key]
        row.append(render1(sum(wpbs, Fraction(0)) / len(wpbs)) if wpbs else "--")
        rows.append(row)

    widths = [max(len(row[col]) for row in rows) for col in range(len(rows[0]))]
    lines = []
    for row in rows:
        lines.append("  ".join(value.ljust(widths[col]) for col, value in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def write_tables(run_dir: Path) -> tuple[str, str]:
    """(Re)build the aggregate tables from the persisted per-summary reports."""
    reports = [r for r in _load_reports(run_dir) if r.get("status") == "ok"]
    if not reports:
        raise ConfigurationError(f"no score reports under {run_dir / 'reports'}")
    score_reports = [report_from_dict(r["report"]) for r in reports]
    grouping = [(r["summarizer"], r["retriever"]) for r in reports]
    cells = aggregate_run(score_reports, grouping)
    tsv = render_aggregate_tsv(cells)
    text = render_aggregate_text(cells)
    (run_dir / "tables").mkdir(exist_ok=True)
    (run_dir / "tables" / "aggregate.tsv").write_text(tsv, encoding="utf-8")
    (run_dir / "tables" / "aggregate.txt").write_text(text, encoding="utf-8")
    return tsv, text


# ---------------------------------------------------------------------------
# position bias


def render_position_bias_tsv(rows: list[dict]) -> str:
    lines = ["summarizer\ttop\tbottom\trandom\tsensitivity"]
    for row in rows:
        lines.append(
            "\t".join(
                [row["summarizer"], row["top"], row["bottom"], row["random"], render1(row["sensitivity"])]
            )
        )
    return "\n".join(lines) + "\n"


def execute_position_bias(base_config: RunConfig, judge_name: str, few_shot: str = "") -> tuple[Path, list[dict], bool]:
    """Sweep the three document orderings in the full-context setting and
    report per-summarizer Joint Scores plus position sensitivity."""
    base_config.validate()
    sweep_dir = Path(base_config.output_dir) / f"position-bias-{base_config.run_id}"
    joints: dict[str, dict[str, str]] = {}
    any_failed = False
    manifests = []
    for placement in PLACEMENTS:
        sub_config = RunConfig(**{**base_config.to_dict(), "retrievers": [FULL_CONTEXT],
                                  "ordering": placement, "output_dir": str(sweep_dir)})
        run_dir, _, failed = execute_run(sub_config)
        rows, eval_failed = evaluate_run(
            run_dir,
            judge_name,
            registry_path=base_config.registry_path,
            cache_dir=base_config.cache_dir,
            few_shot=few_shot,
        )
        any_failed = any_failed or failed or eval_failed
        manifests.append(run_dir / "manifest.json")
        reports = [r for r in rows if r.get("status") == "ok"]
        score_reports = [report_from_dict(r["report"]) for r in reports]
        grouping = [(r["summarizer"], placement) for r in reports]
        for cell in aggregate_run(score_reports, grouping):
            joints.setdefault(cell.summarizer, {})[placement] = render1(cell.joint)

    rows = []
    for summarizer in sorted(joints):
        values = joints[summarizer]
        if set(values) != set(PLACEMENTS):
            any_failed = True
            continue
        rows.append(
            {
                "summarizer": summarizer,
                "top": values["top"],
                "bottom": values["bottom"],
                "random": values["random"],
                "sensitivity": position_sensitivity(values["random"], values["top"], values["bottom"]),
            }
        )
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "position_bias.tsv").write_text(render_position_bias_tsv(rows), encoding="utf-8")
    logger.info("position-bias manifests: %s", ", ".join(str(m) for m in manifests))
    return sweep_dir, rows, any_failed


# ---------------------------------------------------------------------------
# commands


def cmd_synthesize(args) -> int:
    scenario = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    topic_raw = scenario["topic"]
    topic = Topic(
        id=topic_raw["id"],
        title=topic_raw["title"],
        domain=topic_raw["domain"],
        seed_documents=tuple(topic_raw.get("seed_documents", ())),
    )
    config = config_from_dict(scenario.get("config", {}))
    if args.seed is not None:
        config = config_from_dict({**scenario.get("config", {}), "rng_seed": args.seed})
    backend = scenario.get("backend", "mock")
    log = SynthesisLog()
    if backend == "mock":
        generator = MockTextGenerator()
        verifier = SentinelVerifier()
    else:
        registry = load_endpoints(backend["registry"])
        gateway = ModelGateway(HttpTransport(), cache_dir=args.cache_dir)
        stages = {
            stage: registry[name]
            for stage, name in backend.get("stages", {}).items()
        }
        if "default" not in stages:
            raise ConfigurationError("gateway backend needs stages.default")
        generator = GatewayTextGenerator(gateway, stages, params={"temperature": 0})
        verifier = LLMVerifier(generator, log=log)
    log_path = args.log or f"{args.out}.log.jsonl"
    try:
        haystack = build_haystack(topic, config, generator, verifier, log=log, workers=args.workers)
    except ConfigurationError:
        raise  # rejected before any generation; nothing to retain
    except HayrickError as exc:
        # Retain the partial state (log + failure record) for inspection.
        log.dump_jsonl(log_path)
        partial = {"error": str(exc), "stage": getattr(exc, "stage", None)}
        _write_json(Path(f"{args.out}.partial.json"), partial)
        logger.error("synthesis aborted; partial state at %s / %s.partial.json", log_path, args.out)
        raise
    save_haystack(haystack, args.out)
    log.dump_jsonl(log_path)
    print(f"wrote {args.out} ({len(haystack.documents)} documents, "
          f"{len(haystack.insights)} insights, {haystack.total_tokens()} tokens)")
    return EXIT_OK


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        haystack_path=args.haystack,
        retrievers=[r.strip() for r in args.retrievers.split(",") if r.strip()],
        summarizers=[s.strip() for s in args.summarizers.split(",") if s.strip()],
        judge=args.judge,
        subtopics=[s.strip() for s in args.subtopics.split(",") if s.strip()] if args.subtopics else [],
        context_budget=args.budget,
        ordering=args.ordering,
        rng_seed=args.seed,
        output_dir=args.out,
        registry_path=args.registry,
        cache_dir=args.cache_dir,
        workers=args.workers,
    )


def cmd_run(args) -> int:
    config = _config_from_args(args)
    run_dir, records, any_failed = execute_run(config)
    done = sum(1 for r in records if r["status"] == "ok")
    print(f"run {config.run_id}: {done}/{len(records)} tasks ok -> {run_dir}")
    return EXIT_PARTIAL if any_failed else EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    rows, any_failed = evaluate_run(
        run_dir,
        args.judge,
        haystack_path=args.haystack,
        registry_path=args.registry,
        cache_dir=args.cache_dir,
        few_shot=Path(args.few_shot).read_text(encoding="utf-8") if args.few_shot else "",
        workers=args.workers,
    )
    ok = sum(1 for r in rows if r.get("status") == "ok")
    if ok:
        _, text = write_tables(run_dir)
        print(text, end="")
    print(f"evaluated {ok}/{len(rows)} summaries -> {run_dir / 'reports'}")
    return EXIT_PARTIAL if any_failed else EXIT_OK


def cmd_position_bias(args) -> int:
    config = _config_from_args(args)
    sweep_dir, rows, any_failed = execute_position_bias(
        config,
        args.judge,
        few_shot=Path(args.few_shot).read_text(encoding="utf-8") if args.few_shot else "",
    )
    print((sweep_dir / "position_bias.tsv").read_text(encoding="utf-8"), end="")
    return EXIT_PARTIAL if any_failed else EXIT_OK


def cmd_human_score(args) -> int:
    series_list, skipped = load_snapshots(args.snapshots)
    if skipped:
        logger.warning("skipped %d malformed snapshot line(s)", skipped)
    if not series_list:
        raise ConfigurationError(f"no usable snapshots in {args.snapshots}")
    haystack = load_haystack(args.haystack)
    subtopic = haystack.subtopic(args.subtopic)
    registry, gateway = _build_gateway(args.registry, args.cache_dir)
    judge = _resolve_judge(args.judge, registry, gateway)
    lines = ["session\tminutes\tcoverage\tcitation_precision\tcitation_recall\tcitation_f1\tjoint"]
    scored_rows = 0
    for series in series_list:
        for row in score_snapshots(series, haystack, subtopic, judge):
            r = row.report
            lines.append(
                "\t".join(
                    [
                        series.session_id,
                        str(row.minutes),
                        render1(r.coverage_score),
                        render1(r.citation_precision),
                        render1(r.citation_recall),
                        render1(r.citation_score),
                        render1(r.joint_score),
                    ]
                )
            )
            scored_rows += 1
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK if scored_rows else EXIT_PARTIAL


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    _, text = write_tables(run_dir)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hayrick", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="build a haystack from a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON (topic, config, backend)")
    p.add_argument("--out", required=True, help="haystack output path")
    p.add_argument("--log", default=None, help="synthesis log path (default: <out>.log.jsonl)")
    p.add_argument("--seed", type=int, default=None, help="override config rng_seed")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--workers", type=int, default=1, help="concurrent document slots")
    p.set_defaults(func=cmd_synthesize)

    def add_run_flags(p):
        p.add_argument("--haystack", required=True)
        p.add_argument("--summarizers", required=True, help="comma list: mock:perfect,mock:lossy,mock:window:N or registry names")
        p.add_argument("--judge", default="mock:sentinel")
        p.add_argument("--subtopics", default="", help="comma list of subtopic ids (default all)")
        p.add_argument("--budget", type=int, default=15000, help="context budget in tokens")
        p.add_argument("--ordering", default="random", choices=PLACEMENTS, help="document order for full-context tasks")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs")
        p.add_argument("--registry", default=None, help="endpoint registry JSON")
        p.add_argument("--cache-dir", default=None)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("run", help="summarize every (subtopic x retriever x summarizer) task")
    p.add_argument("--retrievers", required=True, help=f"comma list incl. '{FULL_CONTEXT}'")
    add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="judge and score a completed run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--judge", default="mock:sentinel")
    p.add_argument("--haystack", default=None, help="override haystack path from the manifest")
    p.add_argument("--registry", default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--few-shot", default=None, help="file of few-shot examples for the judge prompt")
    p.add_argument("--workers", type=int, default=1, help="concurrent judging calls")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("position-bias", help="full-context ordering sweep (top/bottom/random)")
    p.add_argument("--few-shot", default=None)
    add_run_flags(p)
    p.set_defaults(func=cmd_position_bias, retrievers=FULL_CONTEXT)

    p = sub.add_parser("human-score", help="score session snapshots over time")
    p.add_argument("--snapshots", required=True, help="JSONL: one {session, minutes, payload} per line")
    p.add_argument("--haystack", required=True)
    p.add_argument("--subtopic", required=True)
    p.add_argument("--judge", default="mock:sentinel")
    p.add_argument("--registry", default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--out", default=None, help="also write the TSV here")
    p.set_defaults(func=cmd_human_score)

    p = sub.add_parser("report", help="re-render tables from persisted reports")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HayrickError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
