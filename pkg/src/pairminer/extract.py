"""Structured extraction of problems/solutions per chunk, plus the two-stage
quality screen (incompleteness, then external references)."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import prompts
from .errors import ResponseFormatError
from .parsing import delimited_verdict, last_fenced_json
from .provider import ChatRequest, ProviderGateway
from .segment import Chunk

KINDS = ("problem", "solution")


@dataclass(frozen=True)
class ExtractedItem:
    item_id: str
    kind: str                  # decided solely by which JSON key the response used
    raw_identifier: str        # as printed in the source; may be empty
    body: str
    doc_id: str
    chunk_id: int

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "kind": self.kind,
            "raw_identifier": self.raw_identifier,
            "body": self.body,
            "doc_id": self.doc_id,
            "chunk_id": self.chunk_id,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ExtractedItem":
        return cls(
            item_id=record["item_id"],
            kind=record["kind"],
            raw_identifier=record.get("raw_identifier", ""),
            body=record["body"],
            doc_id=record["doc_id"],
            chunk_id=record["chunk_id"],
        )


@dataclass(frozen=True)
class FilterOutcome:
    item_id: str
    kept: bool
    reason: str                # ok | incomplete | external_reference
    evidence: str              # verbatim span from the body when dropped

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "kept": self.kept,
            "reason": self.reason,
            "evidence": self.evidence,
        }


def parse_extraction_response(
    response: str, chunk: Chunk
) -> tuple[list[ExtractedItem], list[str]]:
    """Items from the last fenced JSON array, plus audit notes for objects
    that were dropped (neither or both key pairs, or an empty body).

    An empty array is valid: the chunk simply contains no items.
    """
    parsed = last_fenced_json(response)
    if not isinstance(parsed, list):
        raise ResponseFormatError(
            f"extraction payload is {type(parsed).__name__}, not an array"
        )
    items: list[ExtractedItem] = []
    notes: list[str] = []
    for position, obj in enumerate(parsed):
        if not isinstance(obj, dict):
            notes.append(f"object {position}: not a JSON object")
            continue
        has_problem = "problem" in obj
        has_solution = "solution" in obj
        if has_problem == has_solution:
            which = "both" if has_problem else "neither"
            notes.append(f"object {position}: {which} of problem/solution keys")
            continue
        kind = "problem" if has_problem else "solution"
        body = obj[kind]
        if not isinstance(body, str) or not body.strip():
            notes.append(f"object {position}: empty {kind} body")
            continue
        number = obj.get(f"{kind} number", "")
        raw_identifier = str(number).strip() if number is not None else ""
        items.append(
            ExtractedItem(
                item_id=f"{chunk.doc_id}/c{chunk.chunk_id:04d}/i{position:03d}",
                kind=kind,
                raw_identifier=raw_identifier,
                body=body,
                doc_id=chunk.doc_id,
                chunk_id=chunk.chunk_id,
            )
        )
    return items, notes


def extract_items(
    chunk: Chunk,
    gateway: ProviderGateway,
    model_name: str,
    max_output_tokens: int = 8192,
) -> tuple[list[ExtractedItem], list[str], bool]:
    """Run the extraction prompt for one chunk with one bounded re-ask.

    Returns (items, audit notes, failed); a chunk is marked extraction-failed
    only after the re-ask also produced an unparseable response.
    """
    prompt = prompts.fill(prompts.ITEM_EXTRACTION, chunk=chunk.text)
    notes: list[str] = []
    for attempt, user_text in enumerate([prompt, prompt + prompts.FORMAT_REMINDER]):
        response = gateway.complete(
            ChatRequest(
                model_name=model_name,
                user_text=user_text,
                max_output_tokens=max_output_tokens,
            )
        )
        try:
            items, drop_notes = parse_extraction_response(response.text, chunk)
        except ResponseFormatError as exc:
            notes.append(f"extraction parse failed (attempt {attempt + 1}): {exc}")
            continue
        return items, notes + drop_notes, False
    return [], notes, True


# --- quality filtering -----------------------------------------------------

@dataclass(frozen=True)
class PatternConfig:
    min_body_chars: int
    dangling_connectives: frozenset[str]
    families: tuple[tuple[str, tuple[re.Pattern, ...]], ...]
    suppress_equation_ref_if_tagged: bool

    @classmethod
    def from_dict(cls, raw: dict) -> "PatternConfig":
        families = tuple(
            (name, tuple(re.compile(p, re.IGNORECASE) for p in patterns))
            for name, patterns in raw.get("external_reference", {}).items()
        )
        return cls(
            min_body_chars=int(raw.get("min_body_chars", 15)),
            dangling_connectives=frozenset(
                c.lower() for c in raw.get("dangling_connectives", [])
            ),
            families=families,
            suppress_equation_ref_if_tagged=bool(
                raw.get("suppress_equation_ref_if_tagged", True)
            ),
        )


def load_patterns(path: Path | str | None = None) -> PatternConfig:
    """Load the screening pattern file; ``None`` loads the packaged default."""
    if path is None:
        raw = json.loads(
            resources.files("pairminer").joinpath("data/patterns.json").read_text()
        )
    else:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    return PatternConfig.from_dict(raw)


_TAIL = re.compile(r"(\S+)\s*$")
_NUMBER = re.compile(r"\d+(?:\.\d+)*")


def _equation_ref_is_typeset(body: str, evidence: str) -> bool:
    """True when the referenced equation number is tagged inside the body
    itself, i.e. the reference is internal rather than external."""
    number = _NUMBER.search(evidence)
    if number is None:
        return False
    tag = number.group(0)
    return f"\\tag{{{tag}}}" in body or f"\\label{{eq:{tag}}}" in body


def quality_filter(item: ExtractedItem, patterns: PatternConfig) -> FilterOutcome:
    """Rule-based screen: incompleteness first, then external references.

    Filtering is total — every item gets an outcome — and each dropped
    item's evidence is a verbatim span of its body.
    """
    body = item.body
    stripped = body.strip()

    if len(stripped) < patterns.min_body_chars:
        return FilterOutcome(item.item_id, False, "incomplete", stripped or body)
    tail_match = _TAIL.search(stripped)
    if tail_match:
        tail = tail_match.group(1)
        if tail.rstrip(".,:;").lower() in patterns.dangling_connectives \
                or tail.lower() in patterns.dangling_connectives:
            return FilterOutcome(item.item_id, False, "incomplete", tail)

    for family, compiled in patterns.families:
        for pattern in compiled:
            match = pattern.search(body)
            if match is None:
                continue
            evidence = match.group(0)
            if (
                family == "equation"
                and patterns.suppress_equation_ref_if_tagged
                and _equation_ref_is_typeset(body, evidence)
            ):
                continue
            return FilterOutcome(item.item_id, False, "external_reference", evidence)

    return FilterOutcome(item.item_id, True, "ok", "")


def llm_double_check(
    item: ExtractedItem,
    gateway: ProviderGateway,
    model_name: str,
) -> bool | None:
    """Optional second opinion on self-containedness (off by default).

    Returns None when the verdict could not be parsed after one re-ask.
    """
    prompt = prompts.fill(prompts.COMPLETENESS_CHECK, kind=item.kind, body=item.body)
    for user_text in (prompt, prompt + prompts.FORMAT_REMINDER):
        response = gateway.complete(
            ChatRequest(model_name=model_name, user_text=user_text)
        )
        try:
            return delimited_verdict(response.text, "[Begin]", "[End]", "true", "false")
        except ResponseFormatError:
            continue
    return None
