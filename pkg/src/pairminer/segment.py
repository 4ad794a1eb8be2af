"""Boundary detection per page and token-bounded chunk assembly per document."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from . import prompts
from .errors import (
    MaxTokensTooSmallError,
    NonArrayJsonError,
    ResponseFormatError,
)
from .parsing import last_fenced_json
from .provider import ChatRequest, ProviderGateway
from .render import MarkdownPage

BOUNDARY_KINDS = ("chapter", "section", "subsection", "problem", "unknown")


@dataclass(frozen=True)
class BoundaryMarker:
    doc_id: str
    page_index: int
    line_index: int
    kind: str = "unknown"


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_id: int
    text: str
    start: tuple[int, int]          # (page, line) inclusive
    end: tuple[int, int]            # (page, line) exclusive
    token_estimate: int
    oversized: bool = False
    continuation: bool = False      # hard-split tail of an oversized unit

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "chunk_id": self.chunk_id,
            "text": self.text,
            "start": list(self.start),
            "end": list(self.end),
            "token_estimate": self.token_estimate,
            "oversized": self.oversized,
            "continuation": self.continuation,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Chunk":
        return cls(
            doc_id=record["doc_id"],
            chunk_id=record["chunk_id"],
            text=record["text"],
            start=tuple(record["start"]),
            end=tuple(record["end"]),
            token_estimate=record["token_estimate"],
            oversized=record.get("oversized", False),
            continuation=record.get("continuation", False),
        )


def index_lines(page: MarkdownPage) -> str:
    """Prefix each physical line with its 0-based index ("N| ...")."""
    lines = page.markdown.split("\n")
    return "\n".join(f"{i}| {line}" for i, line in enumerate(lines))


_PREFIX = re.compile(r"^\d+\| ", re.MULTILINE)


def strip_line_index(indexed: str) -> str:
    return _PREFIX.sub("", indexed)


_WORDS = re.compile(r"\w+")
_SYMBOL_RUNS = re.compile(r"[^\w\s]+")


def estimate_tokens(text: str) -> int:
    """Deterministic estimate: word count plus symbol-run count.

    Joining two texts with whitespace never merges tokens, so estimates add
    up exactly under line concatenation.
    """
    return len(_WORDS.findall(text)) + len(_SYMBOL_RUNS.findall(text))


def parse_boundary_response(response: str, line_count: int) -> list[int]:
    """Line numbers from the last fenced JSON array in the response.

    Keeps integers in [0, line_count), deduplicates and sorts; an empty
    array is a valid boundary-free page.
    """
    parsed = last_fenced_json(response)
    if not isinstance(parsed, list):
        raise NonArrayJsonError(f"fenced JSON is {type(parsed).__name__}, not an array")
    hits = {
        v for v in parsed
        if isinstance(v, int) and not isinstance(v, bool) and 0 <= v < line_count
    }
    return sorted(hits)


_PROBLEM_LINE = re.compile(
    r"^\s*(?:\*\*)?(?:problem|exercise|example)\b|^\s*\*\*\d", re.IGNORECASE
)


def classify_boundary_kind(line_text: str) -> str:
    """Best-effort kind from the boundary line itself; informational only."""
    if line_text.startswith("### "):
        return "subsection"
    if line_text.startswith("## "):
        return "section"
    if line_text.startswith("# "):
        return "chapter"
    if _PROBLEM_LINE.match(line_text):
        return "problem"
    return "unknown"


def detect_boundaries(
    page: MarkdownPage,
    gateway: ProviderGateway,
    model_name: str,
    max_output_tokens: int = 2048,
) -> tuple[list[BoundaryMarker], str | None]:
    """Boundary lines for one non-empty page via the detection prompt.

    An unparseable response triggers one bounded re-ask; if that also fails
    the page is treated as boundary-free and the second failure is returned
    as an audit note.
    """
    assert not page.is_empty, "boundary detection requires a non-empty page"
    indexed = index_lines(page)
    lines = page.markdown.split("\n")
    prompt = prompts.fill(prompts.BOUNDARY_DETECTION, page_text_with_line_index=indexed)
    note: str | None = None
    line_numbers: list[int] = []
    for attempt, user_text in enumerate([prompt, prompt + prompts.FORMAT_REMINDER]):
        request = ChatRequest(
            model_name=model_name,
            user_text=user_text,
            max_output_tokens=max_output_tokens,
        )
        response = gateway.complete(request)
        try:
            line_numbers = parse_boundary_response(response.text, len(lines))
            note = None
            break
        except ResponseFormatError as exc:
            note = f"boundary parse failed (attempt {attempt + 1}): {exc}"
    markers = [
        BoundaryMarker(
            doc_id=page.doc_id,
            page_index=page.page_index,
            line_index=n,
            kind=classify_boundary_kind(lines[n]),
        )
        for n in line_numbers
    ]
    return markers, note


def build_chunks(
    pages: list[MarkdownPage],
    boundaries: list[BoundaryMarker],
    max_tokens: int,
    estimator: Callable[[str], int] = estimate_tokens,
) -> list[Chunk]:
    """Greedy boundary-aligned chunk assembly under a token budget.

    Lines accumulate unit by unit (a unit spans one boundary to the next);
    when the next unit would push the running chunk over ``max_tokens`` the
    chunk closes at that boundary.  A unit that alone exceeds the budget is
    hard-split at line granularity; every resulting piece is flagged
    oversized, with the tail pieces marked as continuations.  Empty pages
    contribute nothing.
    """
    if max_tokens < 64:
        raise MaxTokensTooSmallError(f"max_tokens {max_tokens} < 64")

    doc_id = pages[0].doc_id if pages else ""
    boundary_set = {(b.page_index, b.line_index) for b in boundaries}

    # (page, line, text) stream over non-empty pages
    stream: list[tuple[int, int, str]] = []
    for page in pages:
        if page.is_empty:
            continue
        for line_index, text in enumerate(page.markdown.split("\n")):
            stream.append((page.page_index, line_index, text))
    if not stream:
        return []

    # split the stream into boundary-delimited units
    units: list[list[tuple[int, int, str]]] = []
    for position in stream:
        starts_unit = (position[0], position[1]) in boundary_set
        if not units or (starts_unit and units[-1]):
            units.append([position])
        else:
            units[-1].append(position)

    chunks: list[Chunk] = []

    def emit(positions: list[tuple[int, int, str]], oversized: bool,
             continuation: bool) -> None:
        text = "\n".join(p[2] for p in positions)
        first, last = positions[0], positions[-1]
        chunks.append(
            Chunk(
                doc_id=doc_id,
                chunk_id=len(chunks),
                text=text,
                start=(first[0], first[1]),
                end=(last[0], last[1] + 1),
                token_estimate=estimator(text),
                oversized=oversized,
                continuation=continuation,
            )
        )

    def unit_text(unit: list[tuple[int, int, str]]) -> str:
        return "\n".join(p[2] for p in unit)

    current: list[tuple[int, int, str]] = []

    def flush() -> None:
        nonlocal current
        if current:
            emit(current, oversized=False, continuation=False)
            current = []

    for unit in units:
        text = unit_text(unit)
        if estimator(text) > max_tokens:
            flush()
            _hard_split(unit, max_tokens, estimator, emit)
            continue
        if not current:
            current = list(unit)
            continue
        combined = "\n".join(p[2] for p in current) + "\n" + text
        if estimator(combined) > max_tokens:
            flush()
            current = list(unit)
        else:
            current.extend(unit)
    flush()
    return chunks


def _hard_split(
    unit: list[tuple[int, int, str]],
    max_tokens: int,
    estimator: Callable[[str], int],
    emit,
) -> None:
    piece: list[tuple[int, int, str]] = []
    first_piece = True

    def close() -> None:
        nonlocal piece, first_piece
        if piece:
            emit(piece, oversized=True, continuation=not first_piece)
            first_piece = False
            piece = []

    for position in unit:
        if piece:
            candidate = "\n".join(p[2] for p in piece) + "\n" + position[2]
            if estimator(candidate) > max_tokens:
                close()
        piece.append(position)
    close()
