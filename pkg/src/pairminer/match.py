"""Dual-pathway problem-solution matching.

Candidates come from two routes: shared numerical identifiers (effective when
solutions sit far from their problems but keep consistent numbering) and
embedding similarity (covers inconsistent or missing numbering).  Up to four
candidates per problem are verified in rank order, numerical before semantic,
stopping at the first accepted verdict.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .errors import PairminerError, ResponseFormatError
from .extract import ExtractedItem
from .parsing import delimited_verdict
from .provider import ChatRequest, ProviderGateway

PATHWAYS = ("numerical", "semantic")


@dataclass(frozen=True)
class IdentifierKey:
    """Normalized matching key: the ordered digit runs of a printed number.

    "1.1", "1-1" and "**1008**" style labels normalize to their digit
    sequences, so typographic variants of one number compare equal.
    """

    parts: tuple[int, ...]
    raw: str

    def render(self) -> str:
        return ".".join(str(p) for p in self.parts)


@dataclass(frozen=True)
class CandidateSolution:
    problem_id: str
    solution_id: str
    score: float               # in [-1, 1]; numerical candidates carry 1.0
    pathway: str
    rank: int = 0              # densely re-ranked from 1 after assembly

    def to_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "solution_id": self.solution_id,
            "score": self.score,
            "pathway": self.pathway,
            "rank": self.rank,
        }


@dataclass(frozen=True)
class VerifiedPair:
    problem_id: str
    solution_id: str
    verdict_response: str
    pathway: str
    candidate_rank: int
    doc_id: str

    def to_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "solution_id": self.solution_id,
            "verdict_response": self.verdict_response,
            "pathway": self.pathway,
            "candidate_rank": self.candidate_rank,
            "doc_id": self.doc_id,
        }


_DIGITS = re.compile(r"\d+")


def normalize_identifier(raw: str) -> IdentifierKey | None:
    """Strip markup and prefixes down to the ordered digit runs.

    Returns None when the label carries no digits at all (those items stay
    eligible for the semantic pathway only).
    """
    parts = tuple(int(run) for run in _DIGITS.findall(raw))
    if not parts:
        return None
    return IdentifierKey(parts=parts, raw=raw)


def build_solution_index(
    solutions: list[ExtractedItem],
) -> dict[tuple[int, ...], list[ExtractedItem]]:
    """Per-document index of solutions by normalized identifier, preserving
    document order within each key."""
    index: dict[tuple[int, ...], list[ExtractedItem]] = {}
    for solution in solutions:
        key = normalize_identifier(solution.raw_identifier)
        if key is not None:
            index.setdefault(key.parts, []).append(solution)
    return index


def numerical_candidates(
    problem: ExtractedItem,
    solutions_by_key: dict[tuple[int, ...], list[ExtractedItem]],
) -> list[CandidateSolution]:
    """Same-document solutions sharing the problem's identifier key."""
    key = normalize_identifier(problem.raw_identifier)
    if key is None:
        return []
    return [
        CandidateSolution(
            problem_id=problem.item_id,
            solution_id=solution.item_id,
            score=1.0,
            pathway="numerical",
        )
        for solution in solutions_by_key.get(key.parts, [])
    ]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


def semantic_candidates(
    problem: ExtractedItem,
    solutions: list[ExtractedItem],
    embeddings: dict[str, np.ndarray],
    k: int,
) -> list[CandidateSolution]:
    """Top-k same-document solutions by cosine similarity, descending.

    Ties break toward the earlier solution position, so results are stable
    across runs.
    """
    if k < 1:
        raise PairminerError(f"k must be >= 1, got {k}")
    if not solutions:
        return []
    problem_vec = embeddings[problem.item_id]
    scored = [
        (cosine(problem_vec, embeddings[solution.item_id]), position, solution)
        for position, solution in enumerate(solutions)
    ]
    scored.sort(key=lambda entry: (-entry[0], entry[1]))
    return [
        CandidateSolution(
            problem_id=problem.item_id,
            solution_id=solution.item_id,
            score=score,
            pathway="semantic",
        )
        for score, _position, solution in scored[:k]
    ]


def assemble_candidates(
    numerical: list[CandidateSolution],
    semantic: list[CandidateSolution],
    limit: int = 4,
) -> list[CandidateSolution]:
    """Merge the two routes into one ranked list of at most ``limit``.

    Numerical candidates come first and win deduplication by solution_id;
    the remainder fills with semantic candidates by score.  Ranks are
    re-assigned densely from 1.
    """
    merged: list[CandidateSolution] = []
    seen: set[str] = set()
    for candidate in list(numerical) + list(semantic):
        if candidate.solution_id in seen:
            continue
        seen.add(candidate.solution_id)
        merged.append(candidate)
        if len(merged) == limit:
            break
    return [
        CandidateSolution(
            problem_id=c.problem_id,
            solution_id=c.solution_id,
            score=c.score,
            pathway=c.pathway,
            rank=rank,
        )
        for rank, c in enumerate(merged, start=1)
    ]


def parse_verification(response: str) -> bool:
    """True/False verdict from the delimited block; free text never counts."""
    return delimited_verdict(response, "[Begin]", "[End]", "true", "false")


@dataclass
class MatchResult:
    pairs: list[VerifiedPair] = field(default_factory=list)
    unmatched: list[str] = field(default_factory=list)           # problem_ids
    candidates: list[CandidateSolution] = field(default_factory=list)
    verifications: list[dict] = field(default_factory=list)      # audit rows
    notes: list[str] = field(default_factory=list)


class Matcher:
    """Per-document matching: candidate assembly plus sequential verification."""

    def __init__(
        self,
        gateway: ProviderGateway,
        verify_model: str,
        k_semantic: int = 4,
        candidate_limit: int = 4,
        enable_numerical: bool = True,
        enable_semantic: bool = True,
        embed_char_cap: int = 4000,
    ):
        self.gateway = gateway
        self.verify_model = verify_model
        self.k_semantic = k_semantic
        self.candidate_limit = candidate_limit
        self.enable_numerical = enable_numerical
        self.enable_semantic = enable_semantic
        self.embed_char_cap = embed_char_cap

    def embed_items(self, items: list[ExtractedItem]) -> dict[str, np.ndarray]:
        # Bodies are truncated before embedding to bound provider payloads.
        return {
            item.item_id: np.asarray(
                self.gateway.embed(item.body[: self.embed_char_cap]).values
            )
            for item in items
        }

    def candidates_for(
        self,
        problem: ExtractedItem,
        solutions: list[ExtractedItem],
        solutions_by_key: dict[tuple[int, ...], list[ExtractedItem]],
        embeddings: dict[str, np.ndarray],
    ) -> list[CandidateSolution]:
        numerical = (
            numerical_candidates(problem, solutions_by_key)
            if self.enable_numerical
            else []
        )
        semantic = (
            semantic_candidates(problem, solutions, embeddings, self.k_semantic)
            if self.enable_semantic and solutions
            else []
        )
        return assemble_candidates(numerical, semantic, self.candidate_limit)

    def verify(self, problem: ExtractedItem, solution: ExtractedItem) -> tuple[bool, str, str | None]:
        """One verification call with a bounded re-ask.

        Returns (accepted, raw response, audit note).  Parse and provider
        failures degrade to rejection so matching always terminates.
        """
        prompt = prompts.fill(
            prompts.PAIR_VERIFICATION, problem=problem.body, solution=solution.body
        )
        note: str | None = None
        for attempt, user_text in enumerate([prompt, prompt + prompts.FORMAT_REMINDER]):
            try:
                response = self.gateway.complete(
                    ChatRequest(model_name=self.verify_model, user_text=user_text)
                )
            except PairminerError as exc:
                return False, "", f"verification call failed: {exc}"
            try:
                return parse_verification(response.text), response.text, None
            except ResponseFormatError as exc:
                note = f"verdict parse failed (attempt {attempt + 1}): {exc}"
        return False, "", note

    def match_document(
        self,
        problems: list[ExtractedItem],
        solutions: list[ExtractedItem],
    ) -> MatchResult:
        """Match one document's problems against its solutions.

        Verification proceeds in strictly increasing rank order and stops at
        the first accepted candidate.  An accepted solution stays available
        to other problems.  Problems with no accepted candidate are emitted
        unmatched.
        """
        result = MatchResult()
        solutions_by_key = build_solution_index(solutions)
        embeddings: dict[str, np.ndarray] = {}
        if self.enable_semantic and solutions:
            embeddings = self.embed_items(problems + solutions)
        bodies = {item.item_id: item for item in solutions}

        for problem in problems:
            candidates = self.candidates_for(
                problem, solutions, solutions_by_key, embeddings
            )
            result.candidates.extend(candidates)
            matched = False
            for candidate in candidates:
                solution = bodies[candidate.solution_id]
                accepted, raw, note = self.verify(problem, solution)
                result.verifications.append(
                    {
                        "problem_id": problem.item_id,
                        "solution_id": candidate.solution_id,
                        "rank": candidate.rank,
                        "pathway": candidate.pathway,
                        "accepted": accepted,
                        "note": note,
                    }
                )
                if note is not None:
                    result.notes.append(
                        f"{problem.item_id} rank {candidate.rank}: {note}"
                    )
                if accepted:
                    result.pairs.append(
                        VerifiedPair(
                            problem_id=problem.item_id,
                            solution_id=candidate.solution_id,
                            verdict_response=raw,
                            pathway=candidate.pathway,
                            candidate_rank=candidate.rank,
                            doc_id=problem.doc_id,
                        )
                    )
                    matched = True
                    break
            if not matched:
                result.unmatched.append(problem.item_id)
        return result
