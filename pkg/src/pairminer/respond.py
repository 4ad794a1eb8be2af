"""Collect reasoning-model solutions for mined problems and judge them
against the verified ground truth."""

from __future__ import annotations

from dataclasses import dataclass

from . import prompts
from .errors import PairminerError, ResponseFormatError
from .extract import ExtractedItem
from .parsing import delimited_verdict
from .provider import ChatRequest, ProviderGateway


@dataclass(frozen=True)
class ModelSolution:
    problem_id: str
    model_name: str
    response_text: str
    judged_correct: bool | None = None    # set only when ground truth exists
    judge_response: str | None = None
    failure: str | None = None            # marker when the provider call failed

    def to_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "model_name": self.model_name,
            "response_text": self.response_text,
            "judged_correct": self.judged_correct,
            "judge_response": self.judge_response,
            "failure": self.failure,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ModelSolution":
        return cls(
            problem_id=record["problem_id"],
            model_name=record["model_name"],
            response_text=record.get("response_text", ""),
            judged_correct=record.get("judged_correct"),
            judge_response=record.get("judge_response"),
            failure=record.get("failure"),
        )


def collect_solution(
    problem: ExtractedItem,
    gateway: ProviderGateway,
    model_name: str,
    max_output_tokens: int = 8192,
) -> ModelSolution:
    """Ask one reasoning model to solve one problem; failures become a
    marker record so the pipeline keeps going."""
    prompt = prompts.fill(prompts.SOLVE_PREAMBLE, problem=problem.body)
    try:
        response = gateway.complete(
            ChatRequest(
                model_name=model_name,
                user_text=prompt,
                max_output_tokens=max_output_tokens,
            )
        )
    except PairminerError as exc:
        return ModelSolution(
            problem_id=problem.item_id,
            model_name=model_name,
            response_text="",
            failure=str(exc),
        )
    return ModelSolution(
        problem_id=problem.item_id,
        model_name=model_name,
        response_text=response.text,
    )


def judge_solution(
    model_solution: ModelSolution,
    problem: ExtractedItem,
    reference: ExtractedItem,
    gateway: ProviderGateway,
    judge_model: str,
) -> tuple[ModelSolution, str | None]:
    """Check whether the model's final answer agrees with the reference.

    One bounded re-ask on an unparseable verdict; after that judged_correct
    stays unset and the returned note goes to the stage audit log.
    """
    prompt = prompts.fill(
        prompts.SOLUTION_JUDGE,
        problem=problem.body,
        reference=reference.body,
        candidate=model_solution.response_text,
    )
    note = None
    for attempt, user_text in enumerate([prompt, prompt + prompts.FORMAT_REMINDER]):
        try:
            response = gateway.complete(
                ChatRequest(model_name=judge_model, user_text=user_text)
            )
        except PairminerError as exc:
            note = f"judge call failed: {exc}"
            break
        try:
            verdict = delimited_verdict(response.text, "[Begin]", "[End]", "true", "false")
        except ResponseFormatError as exc:
            note = f"judge verdict parse failed (attempt {attempt + 1}): {exc}"
            continue
        return (
            ModelSolution(
                problem_id=model_solution.problem_id,
                model_name=model_solution.model_name,
                response_text=model_solution.response_text,
                judged_correct=verdict,
                judge_response=response.text,
                failure=model_solution.failure,
            ),
            None,
        )
    return model_solution, note
