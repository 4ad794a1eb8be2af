"""Stage implementations: each reads its inputs from the previous stage's
files, fans out under the provider's in-flight limit, and writes
line-delimited JSON outputs atomically."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .. import prompts
from ..config import Config
from ..corpus import (
    DocumentMeta,
    FilterDecision,
    build_filter_prompt,
    load_catalog,
    parse_determination,
    reasoning_excerpt,
    retrieve_candidates,
)
from ..errors import PairminerError, ResponseFormatError, RetriesExhaustedError
from ..extract import (
    ExtractedItem,
    extract_items,
    load_patterns,
    llm_double_check,
    quality_filter,
)
from ..ioutil import read_jsonl, write_jsonl
from ..match import Matcher, normalize_identifier
from ..provider import ChatRequest, ProviderGateway
from ..render import (
    MarkdownPage,
    PageImage,
    failure_placeholder,
    render_pages,
    transcribe_page,
)
from ..respond import ModelSolution, collect_solution, judge_solution
from ..segment import Chunk, build_chunks, detect_boundaries

FILES = {
    "candidates": "stages/retrieve/candidates.jsonl",
    "decisions": "stages/filter_docs/decisions.jsonl",
    "accepted": "stages/filter_docs/accepted.jsonl",
    "quarantine": "stages/filter_docs/quarantine.jsonl",
    "pages": "stages/render/pages.jsonl",
    "markdown": "stages/transcribe/markdown.jsonl",
    "transcribe_audit": "stages/transcribe/audit.jsonl",
    "boundaries": "stages/segment/boundaries.jsonl",
    "chunks": "stages/segment/chunks.jsonl",
    "segment_audit": "stages/segment/audit.jsonl",
    "items": "stages/extract/items.jsonl",
    "extract_audit": "stages/extract/audit.jsonl",
    "outcomes": "stages/filter_items/outcomes.jsonl",
    "kept": "stages/filter_items/kept.jsonl",
    "match_candidates": "stages/match/candidates.jsonl",
    "verifications": "stages/match/verifications.jsonl",
    "pairs": "stages/match/pairs.jsonl",
    "unmatched": "stages/match/unmatched.jsonl",
    "model_solutions": "stages/collect/model_solutions.jsonl",
    "collect_audit": "stages/collect/audit.jsonl",
    "judged": "stages/judge/judged.jsonl",
    "judge_audit": "stages/judge/audit.jsonl",
    "dataset": "dataset.jsonl",
}


@dataclass
class StageOutcome:
    input_count: int
    output_count: int
    outputs: list[str]                       # FILES keys written by the stage
    drops: dict[str, int] = field(default_factory=dict)
    note: str | None = None


@dataclass
class StageContext:
    config: Config
    run_dir: Path
    gateway: ProviderGateway
    overrides: dict[str, Any] = field(default_factory=dict)
    doc_filter: str | None = None            # spot-check mode: single doc id

    def path(self, key: str) -> Path:
        return self.run_dir / FILES[key]

    def write(self, key: str, records: Iterable[dict]) -> int:
        return write_jsonl(self.path(key), records)

    def read(self, key: str) -> list[dict]:
        return list(read_jsonl(self.path(key)))

    def map(self, fn: Callable, items: list) -> list:
        """Fan out over a worker pool, preserving input order."""
        if self.config.concurrency <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            return list(pool.map(fn, items))

    def override(self, key: str, default: Any) -> Any:
        return self.overrides.get(key, default)


# --- retrieve ---------------------------------------------------------------

def stage_retrieve(ctx: StageContext) -> StageOutcome:
    catalog_path = ctx.override("catalog", ctx.config.catalog_path)
    keywords = list(ctx.override("keywords", ctx.config.keywords))
    catalog = load_catalog(catalog_path)
    candidates = retrieve_candidates(catalog, keywords)
    ctx.write("candidates", (m.to_record() for m in candidates))
    return StageOutcome(
        input_count=len(catalog),
        output_count=len(candidates),
        outputs=["candidates"],
        drops={"title_no_keyword": len(catalog) - len(candidates)},
    )


# --- filter_docs --------------------------------------------------------------

def stage_filter_docs(ctx: StageContext) -> StageOutcome:
    source = ctx.override("candidates_path", ctx.path("candidates"))
    candidates = [DocumentMeta.from_record(r) for r in read_jsonl(Path(source))]
    model = ctx.config.provider.models.filter

    def decide(meta: DocumentMeta) -> tuple[FilterDecision | None, str | None]:
        prompt = build_filter_prompt(meta)
        error = "unknown"
        for user_text in (prompt, prompt + prompts.FORMAT_REMINDER):
            response = ctx.gateway.complete(
                ChatRequest(model_name=model, user_text=user_text)
            )
            try:
                accepted = parse_determination(response.text)
            except ResponseFormatError as exc:
                error = str(exc)
                continue
            return (
                FilterDecision(
                    doc_id=meta.doc_id,
                    accepted=accepted,
                    raw_response=response.text,
                    reasoning_excerpt=reasoning_excerpt(response.text),
                ),
                None,
            )
        return None, error

    results = ctx.map(decide, candidates)

    decisions: list[FilterDecision] = []
    quarantined: list[dict] = []
    accepted_docs: list[DocumentMeta] = []
    for meta, (decision, error) in zip(candidates, results):
        if decision is None:
            quarantined.append({"doc_id": meta.doc_id, "reason": error})
        else:
            decisions.append(decision)
            if decision.accepted:
                accepted_docs.append(meta)

    ctx.write("decisions", (d.to_record() for d in decisions))
    ctx.write("accepted", (m.to_record() for m in accepted_docs))
    ctx.write("quarantine", iter(quarantined))
    rejected = len(decisions) - len(accepted_docs)
    return StageOutcome(
        input_count=len(candidates),
        output_count=len(accepted_docs),
        outputs=["decisions", "accepted", "quarantine"],
        drops={"rejected": rejected, "quarantined": len(quarantined)},
    )


# --- render --------------------------------------------------------------------

def _page_file(ctx: StageContext, doc_id: str, page_index: int) -> Path:
    return ctx.run_dir / "docs" / doc_id / "pages" / f"{page_index:04d}.png"


def _markdown_file(ctx: StageContext, doc_id: str, page_index: int) -> Path:
    return ctx.run_dir / "docs" / doc_id / "md" / f"{page_index:04d}.md"


def stage_render(ctx: StageContext) -> StageOutcome:
    docs = [DocumentMeta.from_record(r) for r in ctx.read("accepted")]
    if ctx.doc_filter:
        docs = [d for d in docs if d.doc_id == ctx.doc_filter]

    def render_one(meta: DocumentMeta) -> list[PageImage]:
        return render_pages(meta, ctx.config.render.commands, dpi=ctx.config.render.dpi)

    page_lists = ctx.map(render_one, docs)

    records: list[dict] = []
    for pages in page_lists:
        for page in pages:
            target = _page_file(ctx, page.doc_id, page.page_index)
            target.parent.mkdir(parents=True, exist_ok=True)
            from ..ioutil import atomic_write_bytes

            atomic_write_bytes(target, page.image_bytes)
            records.append(
                {
                    "doc_id": page.doc_id,
                    "page_index": page.page_index,
                    "path": str(target.relative_to(ctx.run_dir)),
                    "width": page.width,
                    "height": page.height,
                    "dpi": page.dpi,
                }
            )
    ctx.write("pages", iter(records))
    return StageOutcome(
        input_count=len(docs),
        output_count=len(records),
        outputs=["pages"],
    )


# --- transcribe -------------------------------------------------------------------

def stage_transcribe(ctx: StageContext) -> StageOutcome:
    page_records = ctx.read("pages")
    if ctx.doc_filter:
        page_records = [r for r in page_records if r["doc_id"] == ctx.doc_filter]
    model = ctx.config.provider.models.vision
    dpi = ctx.config.render.dpi

    def transcribe_one(record: dict) -> tuple[MarkdownPage, dict]:
        image = PageImage(
            doc_id=record["doc_id"],
            page_index=record["page_index"],
            image_bytes=(ctx.run_dir / record["path"]).read_bytes(),
            width=record["width"],
            height=record["height"],
            dpi=record.get("dpi", dpi),
        )
        try:
            page, attempts = transcribe_page(image, ctx.gateway, model)
            audit = {
                "doc_id": page.doc_id,
                "page_index": page.page_index,
                "status": "ok",
                "attempts": attempts,
            }
        except RetriesExhaustedError as exc:
            # Keep indices dense; the marker lives here, not in markdown.
            page = failure_placeholder(image)
            audit = {
                "doc_id": page.doc_id,
                "page_index": page.page_index,
                "status": "failed",
                "attempts": ctx.config.provider.retry.attempts,
                "error": str(exc),
            }
        return page, audit

    results = ctx.map(transcribe_one, page_records)

    records: list[dict] = []
    audits: list[dict] = []
    for page, audit in results:
        md_path = _markdown_file(ctx, page.doc_id, page.page_index)
        md_path.parent.mkdir(parents=True, exist_ok=True)
        from ..ioutil import atomic_write_text

        atomic_write_text(md_path, page.markdown)
        records.append(
            {
                "doc_id": page.doc_id,
                "page_index": page.page_index,
                "markdown": page.markdown,
                "is_empty": page.is_empty,
                "path": str(md_path.relative_to(ctx.run_dir)),
            }
        )
        audits.append(audit)
    ctx.write("markdown", iter(records))
    ctx.write("transcribe_audit", iter(audits))
    failed = sum(1 for a in audits if a["status"] == "failed")
    return StageOutcome(
        input_count=len(page_records),
        output_count=len(records),
        outputs=["markdown", "transcribe_audit"],
        drops={"transcription_failed": failed},
    )


# --- segment ----------------------------------------------------------------------

def stage_segment(ctx: StageContext) -> StageOutcome:
    md_records = ctx.read("markdown")
    if ctx.doc_filter:
        md_records = [r for r in md_records if r["doc_id"] == ctx.doc_filter]
    max_tokens = int(ctx.override("max_tokens", ctx.config.segment.max_tokens))
    model = ctx.config.provider.models.boundary

    by_doc: dict[str, list[MarkdownPage]] = {}
    doc_order: list[str] = []
    for record in md_records:
        page = MarkdownPage(
            doc_id=record["doc_id"],
            page_index=record["page_index"],
            markdown=record["markdown"],
            is_empty=record["is_empty"],
        )
        if page.doc_id not in by_doc:
            by_doc[page.doc_id] = []
            doc_order.append(page.doc_id)
        by_doc[page.doc_id].append(page)

    non_empty = [
        page for doc_id in doc_order for page in by_doc[doc_id] if not page.is_empty
    ]
    detections = ctx.map(
        lambda page: detect_boundaries(page, ctx.gateway, model), non_empty
    )
    markers_by_doc: dict[str, list] = {doc_id: [] for doc_id in doc_order}
    audits: list[dict] = []
    for page, (markers, note) in zip(non_empty, detections):
        markers_by_doc[page.doc_id].extend(markers)
        if note is not None:
            audits.append(
                {
                    "doc_id": page.doc_id,
                    "page_index": page.page_index,
                    "event": "boundary_free_after_reask",
                    "note": note,
                }
            )

    boundary_records: list[dict] = []
    chunk_records: list[dict] = []
    for doc_id in doc_order:
        pages = sorted(by_doc[doc_id], key=lambda p: p.page_index)
        markers = sorted(
            markers_by_doc[doc_id], key=lambda m: (m.page_index, m.line_index)
        )
        for marker in markers:
            boundary_records.append(
                {
                    "doc_id": marker.doc_id,
                    "page_index": marker.page_index,
                    "line_index": marker.line_index,
                    "kind": marker.kind,
                }
            )
        for chunk in build_chunks(pages, markers, max_tokens):
            chunk_records.append(chunk.to_record())

    ctx.write("boundaries", iter(boundary_records))
    ctx.write("chunks", iter(chunk_records))
    ctx.write("segment_audit", iter(audits))
    return StageOutcome(
        input_count=len(md_records),
        output_count=len(chunk_records),
        outputs=["boundaries", "chunks", "segment_audit"],
    )


# --- extract -----------------------------------------------------------------------

def stage_extract(ctx: StageContext) -> StageOutcome:
    chunk_records = ctx.read("chunks")
    if ctx.doc_filter:
        chunk_records = [r for r in chunk_records if r["doc_id"] == ctx.doc_filter]
    chunks = [Chunk.from_record(r) for r in chunk_records]
    model = ctx.config.provider.models.extract

    results = ctx.map(
        lambda chunk: extract_items(chunk, ctx.gateway, model), chunks
    )

    item_records: list[dict] = []
    audits: list[dict] = []
    dropped_objects = 0
    failed_chunks = 0
    for chunk, (items, notes, failed) in zip(chunks, results):
        for item in items:
            item_records.append(item.to_record())
        object_notes = [n for n in notes if n.startswith("object ")]
        dropped_objects += len(object_notes)
        failed_chunks += 1 if failed else 0
        if notes or failed:
            audits.append(
                {
                    "doc_id": chunk.doc_id,
                    "chunk_id": chunk.chunk_id,
                    "emitted": len(items),
                    "dropped_objects": len(object_notes),
                    "failed": failed,
                    "notes": notes,
                }
            )
    ctx.write("items", iter(item_records))
    ctx.write("extract_audit", iter(audits))
    return StageOutcome(
        input_count=len(chunks),
        output_count=len(item_records),
        outputs=["items", "extract_audit"],
        drops={"invalid_objects": dropped_objects, "failed_chunks": failed_chunks},
    )


# --- filter_items ----------------------------------------------------------------

def stage_filter_items(ctx: StageContext) -> StageOutcome:
    items = [ExtractedItem.from_record(r) for r in ctx.read("items")]
    patterns_path = ctx.override("patterns", ctx.config.patterns_path)
    patterns = load_patterns(patterns_path)

    outcomes = [quality_filter(item, patterns) for item in items]

    if ctx.config.extract.llm_double_check:
        model = ctx.config.provider.models.extract
        checked = []
        for item, outcome in zip(items, outcomes):
            if outcome.kept:
                verdict = llm_double_check(item, ctx.gateway, model)
                if verdict is False:
                    from ..extract import FilterOutcome

                    outcome = FilterOutcome(
                        item.item_id, False, "external_reference", item.body
                    )
            checked.append(outcome)
        outcomes = checked

    kept_items = [
        item for item, outcome in zip(items, outcomes) if outcome.kept
    ]
    ctx.write("outcomes", (o.to_record() for o in outcomes))
    ctx.write("kept", (i.to_record() for i in kept_items))
    drops: dict[str, int] = {"incomplete": 0, "external_reference": 0}
    for outcome in outcomes:
        if not outcome.kept:
            drops[outcome.reason] = drops.get(outcome.reason, 0) + 1
    return StageOutcome(
        input_count=len(items),
        output_count=len(kept_items),
        outputs=["outcomes", "kept"],
        drops=drops,
    )


# --- match ------------------------------------------------------------------------

def stage_match(ctx: StageContext) -> StageOutcome:
    kept = [ExtractedItem.from_record(r) for r in ctx.read("kept")]
    if ctx.doc_filter:
        kept = [i for i in kept if i.doc_id == ctx.doc_filter]
    match_cfg = ctx.config.match
    matcher = Matcher(
        gateway=ctx.gateway,
        verify_model=ctx.config.provider.models.verify,
        k_semantic=int(ctx.override("k_semantic", match_cfg.k_semantic)),
        candidate_limit=int(ctx.override("candidate_limit", match_cfg.candidate_limit)),
        enable_numerical=bool(
            ctx.override("enable_numerical", match_cfg.enable_numerical)
        ),
        enable_semantic=bool(
            ctx.override("enable_semantic", match_cfg.enable_semantic)
        ),
        embed_char_cap=ctx.config.provider.embed_char_cap,
    )

    by_doc: dict[str, dict[str, list[ExtractedItem]]] = {}
    doc_order: list[str] = []
    for item in kept:
        if item.doc_id not in by_doc:
            by_doc[item.doc_id] = {"problem": [], "solution": []}
            doc_order.append(item.doc_id)
        by_doc[item.doc_id][item.kind].append(item)

    def match_one(doc_id: str):
        groups = by_doc[doc_id]
        return matcher.match_document(groups["problem"], groups["solution"])

    results = ctx.map(match_one, doc_order)

    pair_records: list[dict] = []
    unmatched_records: list[dict] = []
    candidate_records: list[dict] = []
    verification_records: list[dict] = []
    total_problems = 0
    for doc_id, result in zip(doc_order, results):
        total_problems += len(by_doc[doc_id]["problem"])
        pair_records.extend(p.to_record() for p in result.pairs)
        unmatched_records.extend(
            {"problem_id": pid, "doc_id": doc_id} for pid in result.unmatched
        )
        candidate_records.extend(c.to_record() for c in result.candidates)
        verification_records.extend(result.verifications)

    ctx.write("pairs", iter(pair_records))
    ctx.write("unmatched", iter(unmatched_records))
    ctx.write("match_candidates", iter(candidate_records))
    ctx.write("verifications", iter(verification_records))
    return StageOutcome(
        input_count=total_problems,
        output_count=len(pair_records),
        outputs=["pairs", "unmatched", "match_candidates", "verifications"],
        drops={"unmatched": len(unmatched_records)},
    )


# --- collect ------------------------------------------------------------------------

def stage_collect(ctx: StageContext) -> StageOutcome:
    models = list(ctx.override("models", ctx.config.provider.models.respond))
    kept = [ExtractedItem.from_record(r) for r in ctx.read("kept")]
    problems = [i for i in kept if i.kind == "problem"]
    if not models:
        ctx.write("model_solutions", iter(()))
        ctx.write("collect_audit", iter(()))
        return StageOutcome(
            input_count=0,
            output_count=0,
            outputs=["model_solutions", "collect_audit"],
            note="no response models configured",
        )

    tasks = [(problem, model) for problem in problems for model in models]

    def collect_one(task: tuple[ExtractedItem, str]) -> ModelSolution:
        problem, model = task
        return collect_solution(problem, ctx.gateway, model)

    solutions = ctx.map(collect_one, tasks)
    audits = [
        {"problem_id": s.problem_id, "model": s.model_name, "failure": s.failure}
        for s in solutions
        if s.failure
    ]
    ctx.write("model_solutions", (s.to_record() for s in solutions))
    ctx.write("collect_audit", iter(audits))
    return StageOutcome(
        input_count=len(tasks),
        output_count=len(solutions),
        outputs=["model_solutions", "collect_audit"],
        drops={"collection_failed": len(audits)},
    )


# --- judge --------------------------------------------------------------------------

def stage_judge(ctx: StageContext) -> StageOutcome:
    solutions = [ModelSolution.from_record(r) for r in ctx.read("model_solutions")]
    kept = {r["item_id"]: ExtractedItem.from_record(r) for r in ctx.read("kept")}
    pair_by_problem = {r["problem_id"]: r for r in ctx.read("pairs")}
    judge_model = ctx.config.provider.models.judge

    def judge_one(solution: ModelSolution) -> tuple[ModelSolution, str | None]:
        pair = pair_by_problem.get(solution.problem_id)
        if pair is None or solution.failure:
            # Judging never runs for unmatched problems or failed collections.
            return solution, None
        return judge_solution(
            solution,
            kept[solution.problem_id],
            kept[pair["solution_id"]],
            ctx.gateway,
            judge_model,
        )

    results = ctx.map(judge_one, solutions)
    judged = [record for record, _note in results]
    audits = [
        {"problem_id": record.problem_id, "model": record.model_name, "note": note}
        for record, note in results
        if note
    ]
    ctx.write("judged", (s.to_record() for s in judged))
    ctx.write("judge_audit", iter(audits))
    judged_count = sum(1 for s in judged if s.judged_correct is not None)
    return StageOutcome(
        input_count=len(solutions),
        output_count=len(judged),
        outputs=["judged", "judge_audit"],
        note=f"{judged_count} records judged against ground truth",
    )


# --- emit ----------------------------------------------------------------------------

def stage_emit(ctx: StageContext) -> StageOutcome:
    pairs = ctx.read("pairs")
    kept = {r["item_id"]: ExtractedItem.from_record(r) for r in ctx.read("kept")}
    judged_path = ctx.path("judged")
    model_solutions: dict[str, list[dict]] = {}
    if judged_path.exists():
        for record in read_jsonl(judged_path):
            model_solutions.setdefault(record["problem_id"], []).append(record)

    rows: list[tuple[tuple, dict]] = []
    for pair in pairs:
        problem = kept[pair["problem_id"]]
        solution = kept[pair["solution_id"]]
        record = {
            "problem": problem.body,
            "solution": solution.body,
            "problem_number": problem.raw_identifier,
            "doc_id": problem.doc_id,
            "pathway": pair["pathway"],
        }
        attached = model_solutions.get(pair["problem_id"])
        if attached:
            record["model_solutions"] = [
                {
                    "model": s["model_name"],
                    "text": s["response_text"],
                    "judged_correct": s.get("judged_correct"),
                }
                for s in sorted(attached, key=lambda s: s["model_name"])
            ]
        key = normalize_identifier(problem.raw_identifier)
        sort_key = (
            (problem.doc_id, 0, key.parts, pair["problem_id"])
            if key
            else (problem.doc_id, 1, (), pair["problem_id"])
        )
        rows.append((sort_key, record))

    rows.sort(key=lambda entry: entry[0])
    count = ctx.write("dataset", (record for _key, record in rows))
    return StageOutcome(
        input_count=len(pairs),
        output_count=count,
        outputs=["dataset"],
    )


STAGE_FUNCS: dict[str, Callable[[StageContext], StageOutcome]] = {
    "retrieve": stage_retrieve,
    "filter_docs": stage_filter_docs,
    "render": stage_render,
    "transcribe": stage_transcribe,
    "segment": stage_segment,
    "extract": stage_extract,
    "filter_items": stage_filter_items,
    "match": stage_match,
    "collect": stage_collect,
    "judge": stage_judge,
    "emit": stage_emit,
}
