"""Candidate retrieval by title keywords and LLM-based document filtering."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .errors import CatalogError, EmptyKeywordsError
from .ioutil import read_jsonl
from .parsing import delimited_verdict

FORMATS = ("pdf", "epub", "pptx", "djvu", "other")


@dataclass(frozen=True)
class DocumentMeta:
    doc_id: str
    title: str
    author: str
    format: str
    path: str

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "author": self.author,
            "format": self.format,
            "path": self.path,
        }

    @classmethod
    def from_record(cls, record: dict) -> "DocumentMeta":
        return cls(
            doc_id=record["doc_id"],
            title=record["title"],
            author=record.get("author", ""),
            format=record.get("format", "other"),
            path=record["path"],
        )


@dataclass(frozen=True)
class FilterDecision:
    doc_id: str
    accepted: bool
    raw_response: str
    reasoning_excerpt: str

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "accepted": self.accepted,
            "raw_response": self.raw_response,
            "reasoning_excerpt": self.reasoning_excerpt,
        }


def load_catalog(path: Path | str, base_dir: Path | None = None) -> list[DocumentMeta]:
    """Read a line-delimited JSON catalog; relative doc paths resolve against
    the catalog's own directory."""
    path = Path(path)
    base = base_dir or path.parent
    docs: list[DocumentMeta] = []
    seen: set[str] = set()
    for i, record in enumerate(read_jsonl(path)):
        try:
            meta = DocumentMeta.from_record(record)
        except KeyError as exc:
            raise CatalogError(f"{path}:{i + 1}: missing field {exc}") from exc
        if not meta.title:
            raise CatalogError(f"{path}:{i + 1}: empty title for {meta.doc_id!r}")
        if meta.doc_id in seen:
            raise CatalogError(f"{path}:{i + 1}: duplicate doc_id {meta.doc_id!r}")
        seen.add(meta.doc_id)
        doc_path = Path(meta.path)
        if not doc_path.is_absolute():
            doc_path = base / doc_path
            meta = DocumentMeta(
                doc_id=meta.doc_id,
                title=meta.title,
                author=meta.author,
                format=meta.format,
                path=str(doc_path),
            )
        if not doc_path.exists():
            raise CatalogError(f"{path}:{i + 1}: document path {doc_path} not found")
        docs.append(meta)
    return docs


_WORD = re.compile(r"[a-z0-9]+")


def _title_matches(title: str, keywords: list[str]) -> bool:
    # Whole-word with plural tolerance: "problems" hits keyword "problem",
    # "problematic" does not.
    words = set(_WORD.findall(title.lower()))
    for kw in keywords:
        kw = kw.lower()
        if kw in words or kw + "s" in words or kw + "es" in words:
            return True
    return False


def retrieve_candidates(
    catalog: list[DocumentMeta], keywords: list[str]
) -> list[DocumentMeta]:
    """Catalog entries whose title contains a keyword, in catalog order."""
    keywords = [k for k in keywords if k.strip()]
    if not keywords:
        raise EmptyKeywordsError("at least one retrieval keyword is required")
    out: list[DocumentMeta] = []
    seen: set[str] = set()
    for meta in catalog:
        if meta.doc_id in seen:
            continue
        if _title_matches(meta.title, keywords):
            out.append(meta)
            seen.add(meta.doc_id)
    return out


def build_filter_prompt(meta: DocumentMeta) -> str:
    return prompts.fill(prompts.DOCUMENT_FILTER, title=meta.title, author=meta.author)


_DET_BEGIN = "[Determine Begin]"
_DET_END = "[Determine End]"


def parse_determination(response: str) -> bool:
    """Extract the Yes/No verdict from the delimited determination block.

    The verdict is never inferred from free text; both error cases mark the
    document for one bounded re-ask, then quarantine.
    """
    return delimited_verdict(response, _DET_BEGIN, _DET_END, "yes", "no")


def reasoning_excerpt(response: str, limit: int = 280) -> str:
    head = response.split(_DET_BEGIN, 1)[0].strip()
    return head[:limit]
