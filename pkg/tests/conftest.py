"""Shared fixtures: tiny problems, scripted gateways, a fast evaluator."""

from __future__ import annotations

import pytest

from aupair.evaluator import Evaluator, RunLimits
from aupair.gateway import Budget, Gateway, ScriptedBackend
from aupair.model import Attempt, CandidatePair, Problem, TestCase


def make_problem(
    pid: str,
    n_tests: int = 2,
    difficulty: str | None = None,
    categories: tuple[str, ...] = (),
    description: str | None = None,
) -> Problem:
    """Echo-style problem: test t expects its own input printed back."""
    tests = tuple(TestCase(input=f"{pid}-t{i}", expected_output=f"{pid}-t{i}") for i in range(n_tests))
    return Problem(
        id=pid,
        description=description or f"Print the input back for problem {pid}.",
        tests=tests,
        difficulty=difficulty,
        categories=categories,
        source="synthetic",
    )


ECHO_CODE = "def solve(s):\n    print(s)\n"
BROKEN_CODE = 'def solve(s):\n    print("nope")\n'


def fenced(code: str) -> str:
    return f"```python\n{code}```"


def make_attempt(aid: str, score: float, code: str = BROKEN_CODE, parent: str | None = None) -> Attempt:
    return Attempt(id=aid, code=code, score=score, parent_attempt=parent)


def make_pair(pid: str, guess_score: float = 0.0, fix_score: float = 0.5, call: int = 1) -> CandidatePair:
    return CandidatePair(
        problem_id=pid,
        guess=make_attempt(f"{pid}/g0", guess_score),
        fix=make_attempt(f"{pid}/c{call}", fix_score, code=ECHO_CODE, parent=f"{pid}/g0"),
        created_at_call=call,
    )


@pytest.fixture
def evaluator() -> Evaluator:
    return Evaluator(limits=RunLimits(wall_timeout=10.0))


@pytest.fixture
def scripted_gateway():
    """Factory: gateway over a handler function, with a given budget."""

    def build(handler, limit: int = 10_000, run_log_path=None) -> Gateway:
        return Gateway(ScriptedBackend(handler), Budget(limit=limit), run_log_path=run_log_path)

    return build
