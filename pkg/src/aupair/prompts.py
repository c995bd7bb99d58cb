"""Prompt construction and code extraction.

Two prompt families: the guess-generation prompt used during dataset
curation, and the k-shot repair prompt used everywhere else (pair
generation, matrix computation, inference).  Three repair styles are
supported; ``instruction_and_score`` is the default and renders every score
as an integer percent, prompting for a target fix score of 100.

Rendering is a pure function of its inputs.  The rendered prompt text is an
external contract: generation cache keys are derived from it, so changes
here are version bumps.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from .model import Attempt, CandidatePair, Problem

PROMPT_VERSION = "1"

STYLE_NAIVE = "naive"
STYLE_INSTRUCTION = "instruction"
STYLE_INSTRUCTION_AND_SCORE = "instruction_and_score"
STYLES = (STYLE_NAIVE, STYLE_INSTRUCTION, STYLE_INSTRUCTION_AND_SCORE)
DEFAULT_STYLE = STYLE_INSTRUCTION_AND_SCORE

GUESS_INSTRUCTION = (
    "Complete the function definition below. Print the final answer in the function. "
    "Do not write main. Do not write anything outside the solve() function."
)
SIGNATURE_STUB = "def solve(s: str):\n  ..."

REPAIR_HEADER = (
    "You are an experienced software developer.\n"
    "\n"
    "Look at the question (Q) and solutions below (A).\n"
)
OBJECTIVE_LINE = "The main objective is to improve the solve() function to answer the question."
EXAMPLE_SEPARATOR = "======================================="

FEEDBACK_PROMPT_VERSION = "1"


class NoCodeFoundError(ValueError):
    """The model response contained no extractable program."""


def render_score_percent(fraction: float) -> int:
    """Render a [0, 1] score as an integer percent, rounding half up."""
    return int(math.floor(100.0 * fraction + 0.5))


def _fenced(code: str) -> str:
    return f"```python\n{code.rstrip()}\n```"


def build_guess_prompt(problem: "Problem") -> str:
    """Initial-solution prompt: description, the fixed instruction, the stub."""
    if not problem.description:
        raise ValueError(f"problem {problem.id} has an empty description")
    return f"{problem.description}\n\n{GUESS_INSTRUCTION}\n\n{SIGNATURE_STUB}\n"


@dataclass(frozen=True)
class RepairPromptSpec:
    """Everything needed to render one k-shot repair prompt.

    ``problems`` must map every in-context pair's problem id to its Problem
    so the example questions can be rendered.
    """

    in_context_pairs: tuple["CandidatePair", ...]
    problems: Mapping[str, "Problem"]
    target_problem: "Problem"
    target_guess: "Attempt"
    style: str = DEFAULT_STYLE
    target_fix_score_rendered: int = 100

    def __post_init__(self) -> None:
        if not self.in_context_pairs:
            raise ValueError("repair prompt needs at least one in-context pair")
        if self.style not in STYLES:
            raise ValueError(f"unknown prompt style {self.style!r}")
        missing = [p.problem_id for p in self.in_context_pairs if p.problem_id not in self.problems]
        if missing:
            raise ValueError(f"no Problem provided for in-context pair(s): {missing}")


def _example_section(index: int, question: str, pair: "CandidatePair", with_scores: bool) -> str:
    parts = [f"Example {index}:", "", f"(Q): {question}", "", "Bad solution code A(bad):", ""]
    parts.append(_fenced(pair.guess.code))
    if with_scores:
        parts += ["", f"The score of this code is score(A(bad)) = {render_score_percent(pair.guess.score)}."]
    parts += ["", "Good solution code A(good):", "", _fenced(pair.fix.code)]
    if with_scores:
        parts += ["", f"The score of this code is score(A(good)) = {render_score_percent(pair.fix.score)}."]
    return "\n".join(parts)


def _target_section(
    problem: "Problem",
    guess: "Attempt",
    style: str,
    target_fix_score_rendered: int,
) -> str:
    parts: list[str] = []
    if style != STYLE_NAIVE:
        parts += [OBJECTIVE_LINE, ""]
    parts += [f"(Q): {problem.description}", "", "Bad solution code A(bad):", "", _fenced(guess.code)]
    if style == STYLE_INSTRUCTION_AND_SCORE:
        parts += ["", f"The score of this solution is score(A(bad)) = {render_score_percent(guess.score)}"]
    parts += ["", "Good solution code A(good):"]
    if style == STYLE_INSTRUCTION_AND_SCORE:
        parts += ["", f"The score of this solution is score(A(good)) = {target_fix_score_rendered}"]
    return "\n".join(parts)


def build_repair_prompt(spec: RepairPromptSpec) -> str:
    """Render the k-shot repair prompt: instruction, examples, then the target."""
    with_scores = spec.style == STYLE_INSTRUCTION_AND_SCORE
    sections: list[str] = []
    if spec.style != STYLE_NAIVE:
        sections.append(REPAIR_HEADER + "\n" + OBJECTIVE_LINE)
    for index, pair in enumerate(spec.in_context_pairs, start=1):
        question = spec.problems[pair.problem_id].description
        sections.append(_example_section(index, question, pair, with_scores))
    sections.append(EXAMPLE_SEPARATOR)
    sections.append(
        _target_section(spec.target_problem, spec.target_guess, spec.style, spec.target_fix_score_rendered)
    )
    return "\n\n".join(sections) + "\n"


def build_zero_shot_repair_prompt(
    problem: "Problem",
    guess: "Attempt",
    style: str = DEFAULT_STYLE,
    target_fix_score_rendered: int = 100,
) -> str:
    """Repair prompt with no in-context example: instruction, problem, guess.

    This is the fixed prompt of the best-of-N baseline, and what the pair
    generation loop falls back to while the candidate store is still empty.
    """
    if style not in STYLES:
        raise ValueError(f"unknown prompt style {style!r}")
    sections: list[str] = []
    if style != STYLE_NAIVE:
        sections.append(REPAIR_HEADER + "\n" + OBJECTIVE_LINE)
    sections.append(_target_section(problem, guess, style, target_fix_score_rendered))
    return "\n\n".join(sections) + "\n"


def build_feedback_prompt(problem: "Problem", guess: "Attempt") -> str:
    """Verbal-feedback prompt for the self-repair baseline.

    The wording is owned by this artifact and versioned via
    FEEDBACK_PROMPT_VERSION so results stay comparable across runs.
    """
    return (
        "You are an experienced software developer.\n\n"
        f"(Q): {problem.description}\n\n"
        "Current solution code:\n\n"
        f"{_fenced(guess.code)}\n\n"
        "This solution does not pass all unit tests. Explain concisely why the code fails. "
        "Do not write any code.\n"
    )


def build_feedback_repair_prompt(
    problem: "Problem",
    guess: "Attempt",
    feedback: str,
    style: str = DEFAULT_STYLE,
) -> str:
    """Repair prompt conditioned on one piece of verbal feedback."""
    base = build_zero_shot_repair_prompt(problem, guess, style)
    return f"{base}\nFeedback on the bad solution:\n\n{feedback.strip()}\n"


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_code(response: str) -> str:
    """Pull the candidate program out of a model response.

    Returns the contents of the last fenced code block; with no complete
    fence, falls back to the longest suffix starting at a line that begins
    the entry-point definition.
    """
    blocks = _FENCE_RE.findall(response)
    if blocks:
        return blocks[-1].rstrip("\n")
    lines = response.split("\n")
    for index, line in enumerate(lines):
        if line.startswith("def solve"):
            return "\n".join(lines[index:]).rstrip("\n")
    raise NoCodeFoundError("no code found in response")
