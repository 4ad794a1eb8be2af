"""Shared helpers for pulling structured payloads out of model responses."""

from __future__ import annotations

import json
import re
from typing import Any

from .errors import MissingMarkersError, NoJsonBlockError, UnrecognizedVerdictError

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def last_fenced_json(response: str) -> Any:
    """Parse the last fenced code block that contains valid JSON.

    Responses may echo earlier examples or reason in fenced blocks; the final
    parseable block is authoritative.
    """
    for block in reversed(_FENCE.findall(response)):
        try:
            return json.loads(block)
        except json.JSONDecodeError:
            continue
    raise NoJsonBlockError("no parseable fenced JSON block in response")


def delimited_verdict(
    response: str,
    begin: str,
    end: str,
    truthy: str,
    falsy: str,
) -> bool:
    """Boolean verdict between the first ``begin`` marker and the next ``end``."""
    start = response.find(begin)
    if start < 0:
        raise MissingMarkersError(f"no {begin!r} marker in response")
    stop = response.find(end, start + len(begin))
    if stop < 0:
        raise MissingMarkersError(f"no {end!r} marker after {begin!r}")
    verdict = response[start + len(begin):stop].strip().lower()
    if verdict == truthy:
        return True
    if verdict == falsy:
        return False
    raise UnrecognizedVerdictError(
        f"verdict {verdict!r} is neither {truthy!r} nor {falsy!r}"
    )
