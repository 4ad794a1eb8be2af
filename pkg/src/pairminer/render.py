"""Document-to-page-image rendering and page-to-markdown transcription."""

from __future__ import annotations

import re
import shlex
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .corpus import DocumentMeta
from .errors import (
    RendererFailedError,
    RetriesExhaustedError,
    UnsupportedFormatError,
    ZeroPagesError,
)
from .provider import ChatRequest, ProviderGateway

PASSTHROUGH = "passthrough"


@dataclass(frozen=True)
class PageImage:
    doc_id: str
    page_index: int
    image_bytes: bytes
    width: int
    height: int
    dpi: int


@dataclass(frozen=True)
class MarkdownPage:
    doc_id: str
    page_index: int
    markdown: str
    is_empty: bool


def png_dimensions(data: bytes) -> tuple[int, int]:
    """Width/height from a PNG header; (0, 0) for anything else."""
    if len(data) >= 24 and data[:8] == b"\x89PNG\r\n\x1a\n":
        width, height = struct.unpack(">II", data[16:24])
        return int(width), int(height)
    return 0, 0


def _numeric_sort_key(path: Path) -> tuple[int, str]:
    match = re.search(r"(\d+)", path.stem)
    return (int(match.group(1)) if match else 1 << 30, path.name)


def _collect_page_files(directory: Path) -> list[Path]:
    files = [
        p
        for p in directory.iterdir()
        if p.is_file() and not p.name.startswith(".")
    ]
    # Pages may come back in arbitrary filename order; sort by the numeric
    # component so indices stay aligned with physical page order.
    return sorted(files, key=_numeric_sort_key)


def render_pages(
    doc: DocumentMeta,
    commands: dict[str, str],
    dpi: int = 200,
) -> list[PageImage]:
    """One PageImage per physical page, ordered and densely indexed.

    ``commands`` maps a document format to an external rasterizer command
    template with ``{input}``, ``{outdir}`` and ``{dpi}`` placeholders, or to
    the special value ``passthrough`` which treats ``doc.path`` as a directory
    of pre-rendered page files.
    """
    template = commands.get(doc.format)
    if template is None:
        raise UnsupportedFormatError(
            f"no renderer registered for format {doc.format!r} (doc {doc.doc_id})"
        )

    if template == PASSTHROUGH:
        directory = Path(doc.path)
        if not directory.is_dir():
            raise RendererFailedError(
                f"passthrough renderer expects a directory, got {doc.path}"
            )
        files = _collect_page_files(directory)
    else:
        with tempfile.TemporaryDirectory(prefix="pairminer-render-") as tmp:
            command = prompts.fill(
                template, input=str(doc.path), outdir=tmp, dpi=str(dpi)
            )
            proc = subprocess.run(
                shlex.split(command), capture_output=True, text=True
            )
            if proc.returncode != 0:
                raise RendererFailedError(
                    f"renderer exited {proc.returncode} for {doc.doc_id}",
                    stderr=proc.stderr,
                )
            files = _collect_page_files(Path(tmp))
            return _pages_from_files(doc, files, dpi)

    return _pages_from_files(doc, files, dpi)


def _pages_from_files(doc: DocumentMeta, files: list[Path], dpi: int) -> list[PageImage]:
    if not files:
        raise ZeroPagesError(f"rendering produced no pages for {doc.doc_id}")
    pages = []
    for index, path in enumerate(files):
        data = path.read_bytes()
        width, height = png_dimensions(data)
        pages.append(
            PageImage(
                doc_id=doc.doc_id,
                page_index=index,
                image_bytes=data,
                width=width,
                height=height,
                dpi=dpi,
            )
        )
    return pages


def is_empty_response(text: str) -> bool:
    return text.strip().strip("`").strip().lower() == "empty"


def transcribe_page(
    image: PageImage,
    gateway: ProviderGateway,
    model_name: str,
    max_output_tokens: int = 4096,
) -> tuple[MarkdownPage, int]:
    """Transcribe one page; returns the page and the transport attempt count.

    The literal response ``empty`` maps to an empty page; anything else is
    stored byte-identical.  Failures propagate so the caller can record a
    placeholder and keep page indices dense.
    """
    request = ChatRequest(
        model_name=model_name,
        user_text=prompts.PAGE_TRANSCRIPTION,
        images=(image.image_bytes,),
        temperature=0.0,
        max_output_tokens=max_output_tokens,
    )
    response = gateway.complete(request)
    if is_empty_response(response.text):
        page = MarkdownPage(image.doc_id, image.page_index, "", True)
    else:
        page = MarkdownPage(image.doc_id, image.page_index, response.text, False)
    return page, response.attempts


def failure_placeholder(image: PageImage) -> MarkdownPage:
    """Empty page standing in for a transcription that failed after retries.

    The failure marker itself lives in the audit sidecar, never in markdown
    content, so downstream stages cannot extract from error text.
    """
    return MarkdownPage(image.doc_id, image.page_index, "", True)


__all__ = [
    "MarkdownPage",
    "PageImage",
    "PASSTHROUGH",
    "failure_placeholder",
    "is_empty_response",
    "png_dimensions",
    "render_pages",
    "transcribe_page",
    "RetriesExhaustedError",
]
