"""Inference-time repair strategies and the two corpus metrics.

Strategies spend a per-problem budget of N generation calls and record every
scored attempt in call order:

* golden-pair sweep: call i uses the rank-i selected pair as the 1-shot
  in-context example;
* best-of-N: N independent samples of one fixed zero-shot repair prompt at
  temperature 1.0;
* self-repair: f verbal-feedback calls, then r repairs conditioned on each
  feedback (f * (1 + r) calls, only the f * r repairs yield attempts).

Metrics take, per problem, the best attempt within budget: test pass rate
averages the best fraction of unit tests passed, strict accuracy averages
the indicator that some attempt passes every test.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .evaluator import Evaluator
from .gateway import (
    PURPOSE_FEEDBACK,
    PURPOSE_REPAIR,
    Gateway,
    GenerationRequest,
    format_tag,
)
from .model import Attempt, CandidatePair, Problem
from .pairgen import CuratedDataset
from .prompts import (
    NoCodeFoundError,
    RepairPromptSpec,
    build_feedback_prompt,
    build_feedback_repair_prompt,
    build_repair_prompt,
    build_zero_shot_repair_prompt,
    extract_code,
)
from .storage import read_artifact_jsonl, write_artifact_jsonl

STRATEGY_AUPAIR = "aupair"
STRATEGY_BEST_OF_N = "best_of_n"
STRATEGY_SELF_REPAIR = "self_repair"
STRATEGY_RANDOM_PAIRS = "random_pairs"
STRATEGIES = (STRATEGY_AUPAIR, STRATEGY_BEST_OF_N, STRATEGY_SELF_REPAIR, STRATEGY_RANDOM_PAIRS)


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    budget_per_problem: int
    per_problem: Mapping[str, tuple[Attempt, ...]]

    def __post_init__(self) -> None:
        if self.budget_per_problem < 0:
            raise ValueError("budget_per_problem must be non-negative")
        for problem_id, attempts in self.per_problem.items():
            if len(attempts) > self.budget_per_problem:
                raise ValueError(
                    f"problem {problem_id} has {len(attempts)} attempts, "
                    f"budget is {self.budget_per_problem}"
                )

    def save(self, path: str | Path, provenance: dict | None = None, include_code: bool = True) -> None:
        """Persist one record per attempt; code text is kept by default so the
        diversity analysis can run from disk."""

        def records():
            for problem_id, attempts in self.per_problem.items():
                for index, attempt in enumerate(attempts):
                    record = {
                        "problem_id": problem_id,
                        "call_index": index,
                        "score": attempt.score,
                        "code_digest": hashlib.sha256(attempt.code.encode("utf-8")).hexdigest(),
                    }
                    if include_code:
                        record["code"] = attempt.code
                    yield record

        write_artifact_jsonl(
            path,
            "strategy-result",
            records(),
            provenance=provenance,
            extra_header={"strategy": self.strategy, "budget_per_problem": self.budget_per_problem},
        )

    @classmethod
    def load(cls, path: str | Path) -> "StrategyResult":
        header, records = read_artifact_jsonl(path, "strategy-result")
        per_problem: dict[str, list[tuple[int, Attempt]]] = {}
        for record in records:
            attempt = Attempt(
                id=f"{record['problem_id']}/r{record['call_index']}",
                code=record.get("code", ""),
                score=record["score"],
            )
            per_problem.setdefault(record["problem_id"], []).append((record["call_index"], attempt))
        ordered = {
            pid: tuple(attempt for _, attempt in sorted(entries))
            for pid, entries in per_problem.items()
        }
        return cls(
            strategy=header["strategy"],
            budget_per_problem=header["budget_per_problem"],
            per_problem=ordered,
        )


def _attempt_from_response(
    problem: Problem,
    response_text: str,
    attempt_id: str,
    evaluator: Evaluator,
    parent: str | None,
) -> Attempt:
    try:
        code = extract_code(response_text)
    except NoCodeFoundError:
        return Attempt(id=attempt_id, code="", score=0.0, parent_attempt=parent)
    outcome = evaluator.score(code, problem)
    return Attempt(
        id=attempt_id,
        code=code,
        score=outcome.score,
        per_test=outcome.verdicts,
        parent_attempt=parent,
    )


def run_aupair_inference(
    test: CuratedDataset,
    ranked_pairs: Sequence[CandidatePair],
    n: int,
    gateway: Gateway,
    evaluator: Evaluator,
    source_problems: Mapping[str, Problem],
    temperature: float = 1.0,
    max_tokens: int = 2048,
    prompt_style: str | None = None,
    strategy_label: str = STRATEGY_AUPAIR,
) -> StrategyResult:
    """Sweep the first N selected pairs as 1-shot examples for every problem.

    N silently truncates to the number of available pairs, matching the
    matched-budget convention used when a run yields fewer pairs than the
    nominal budget.
    """
    n_eff = min(n, len(ranked_pairs))
    style_kwargs = {} if prompt_style is None else {"style": prompt_style}
    per_problem: dict[str, tuple[Attempt, ...]] = {}
    for problem in test.problems:
        guess = test.guesses[problem.id]
        attempts: list[Attempt] = []
        for rank in range(n_eff):
            pair = ranked_pairs[rank]
            prompt = build_repair_prompt(
                RepairPromptSpec(
                    in_context_pairs=(pair,),
                    problems=source_problems,
                    target_problem=problem,
                    target_guess=guess,
                    **style_kwargs,
                )
            )
            record = gateway.generate(
                GenerationRequest(
                    prompt=prompt,
                    temperature=temperature,
                    max_tokens=max_tokens,
                    tag=format_tag(PURPOSE_REPAIR, problem.id, [pair.id]),
                )
            )
            attempts.append(
                _attempt_from_response(
                    problem, record.response_text, f"{problem.id}/r{rank}", evaluator, guess.id
                )
            )
        per_problem[problem.id] = tuple(attempts)
    return StrategyResult(strategy=strategy_label, budget_per_problem=n_eff, per_problem=per_problem)


def run_best_of_n(
    test: CuratedDataset,
    n: int,
    gateway: Gateway,
    evaluator: Evaluator,
    temperature: float = 1.0,
    max_tokens: int = 2048,
    prompt_style: str | None = None,
) -> StrategyResult:
    """N independent repairs per problem from one fixed zero-shot prompt."""
    if n < 1:
        raise ValueError("best-of-n needs n >= 1")
    style_kwargs = {} if prompt_style is None else {"style": prompt_style}
    per_problem: dict[str, tuple[Attempt, ...]] = {}
    for problem in test.problems:
        guess = test.guesses[problem.id]
        prompt = build_zero_shot_repair_prompt(problem, guess, **style_kwargs)
        attempts: list[Attempt] = []
        for sample in range(n):
            record = gateway.generate(
                GenerationRequest(
                    prompt=prompt,
                    temperature=temperature,
                    max_tokens=max_tokens,
                    tag=format_tag(PURPOSE_REPAIR, problem.id),
                )
            )
            attempts.append(
                _attempt_from_response(
                    problem, record.response_text, f"{problem.id}/r{sample}", evaluator, guess.id
                )
            )
        per_problem[problem.id] = tuple(attempts)
    return StrategyResult(strategy=STRATEGY_BEST_OF_N, budget_per_problem=n, per_problem=per_problem)


def run_self_repair(
    test: CuratedDataset,
    n: int,
    gateway: Gateway,
    evaluator: Evaluator,
    f: int = 4,
    r: int = 7,
    temperature: float = 1.0,
    max_tokens: int = 2048,
    prompt_style: str | None = None,
) -> StrategyResult:
    """Feedback-then-repair baseline: f feedbacks, r repairs per feedback.

    Feedback calls consume budget but produce no attempts; only the f * r
    repairs are scored.  Budget left over from the floor allocation stays
    unused.
    """
    if f < 1 or r < 1:
        raise ValueError("self-repair needs f >= 1 and r >= 1")
    if f * (1 + r) > n:
        raise ValueError(f"self-repair with f={f}, r={r} needs {f * (1 + r)} calls, budget is {n}")
    style_kwargs = {} if prompt_style is None else {"style": prompt_style}
    per_problem: dict[str, tuple[Attempt, ...]] = {}
    for problem in test.problems:
        guess = test.guesses[problem.id]
        attempts: list[Attempt] = []
        for feedback_index in range(f):
            feedback_record = gateway.generate(
                GenerationRequest(
                    prompt=build_feedback_prompt(problem, guess),
                    temperature=temperature,
                    max_tokens=max_tokens,
                    tag=format_tag(PURPOSE_FEEDBACK, problem.id),
                )
            )
            repair_prompt = build_feedback_repair_prompt(
                problem, guess, feedback_record.response_text, **style_kwargs
            )
            for repair_index in range(r):
                record = gateway.generate(
                    GenerationRequest(
                        prompt=repair_prompt,
                        temperature=temperature,
                        max_tokens=max_tokens,
                        tag=format_tag(PURPOSE_REPAIR, problem.id),
                    )
                )
                attempts.append(
                    _attempt_from_response(
                        problem,
                        record.response_text,
                        f"{problem.id}/f{feedback_index}r{repair_index}",
                        evaluator,
                        guess.id,
                    )
                )
        per_problem[problem.id] = tuple(attempts)
    return StrategyResult(strategy=STRATEGY_SELF_REPAIR, budget_per_problem=n, per_problem=per_problem)


# --- Metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class BucketMetrics:
    n_problems: int
    test_pass_rate: float
    strict_accuracy: float


@dataclass(frozen=True)
class MetricsReport:
    test_pass_rate: float
    strict_accuracy: float
    n_problems: int
    per_difficulty: Mapping[str, BucketMetrics] = field(default_factory=dict)
    per_category: Mapping[str, BucketMetrics] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.strict_accuracy <= self.test_pass_rate + 1e-12:
            raise ValueError(
                f"strict accuracy {self.strict_accuracy} exceeds test pass rate {self.test_pass_rate}"
            )

    def to_record(self) -> dict:
        def bucket_map(buckets: Mapping[str, BucketMetrics]) -> dict:
            return {
                label: {
                    "n_problems": b.n_problems,
                    "test_pass_rate": b.test_pass_rate,
                    "strict_accuracy": b.strict_accuracy,
                }
                for label, b in buckets.items()
            }

        return {
            "test_pass_rate": self.test_pass_rate,
            "strict_accuracy": self.strict_accuracy,
            "n_problems": self.n_problems,
            "per_difficulty": bucket_map(self.per_difficulty),
            "per_category": bucket_map(self.per_category),
        }


def _best_scores(
    attempts: Sequence[Attempt], guess: Attempt | None, first_n: int | None
) -> tuple[float, float]:
    considered = list(attempts if first_n is None else attempts[:first_n])
    if guess is not None:
        considered.append(guess)
    if not considered:
        return 0.0, 0.0
    best = max(a.score for a in considered)
    strict = 1.0 if any(a.score == 1.0 for a in considered) else 0.0
    return best, strict


def compute_metrics(
    result: StrategyResult,
    test: CuratedDataset,
    include_initial_guess: bool = False,
    first_n: int | None = None,
) -> MetricsReport:
    """Average the per-problem best attempt over the whole test dataset.

    Problems without attempts contribute 0 unless the initial guess is
    included.  ``first_n`` restricts each problem to its first n attempts,
    which is how one run yields a whole budget-scaling curve.
    """
    unknown = set(result.per_problem) - {p.id for p in test.problems}
    if unknown:
        raise ValueError(f"result covers problems outside the test dataset: {sorted(unknown)}")

    per_problem_best: dict[str, tuple[float, float]] = {}
    for problem in test.problems:
        guess = test.guesses[problem.id] if include_initial_guess else None
        per_problem_best[problem.id] = _best_scores(
            result.per_problem.get(problem.id, ()), guess, first_n
        )

    def aggregate(problems: Sequence[Problem]) -> tuple[float, float]:
        if not problems:
            return 0.0, 0.0
        pass_rates = [per_problem_best[p.id][0] for p in problems]
        stricts = [per_problem_best[p.id][1] for p in problems]
        return sum(pass_rates) / len(problems), sum(stricts) / len(problems)

    overall_pass, overall_strict = aggregate(test.problems)

    by_difficulty: dict[str, list[Problem]] = {}
    by_category: dict[str, list[Problem]] = {}
    for problem in test.problems:
        by_difficulty.setdefault(problem.difficulty or "unlabeled", []).append(problem)
        for category in problem.categories or ("unlabeled",):
            by_category.setdefault(category, []).append(problem)

    def buckets(groups: dict[str, list[Problem]]) -> dict[str, BucketMetrics]:
        out = {}
        for label in sorted(groups):
            rate, strict = aggregate(groups[label])
            out[label] = BucketMetrics(
                n_problems=len(groups[label]), test_pass_rate=rate, strict_accuracy=strict
            )
        return out

    return MetricsReport(
        test_pass_rate=overall_pass,
        strict_accuracy=overall_strict,
        n_problems=len(test.problems),
        per_difficulty=buckets(by_difficulty),
        per_category=buckets(by_category),
    )


def metrics_sweep(
    result: StrategyResult,
    test: CuratedDataset,
    budgets: Iterable[int],
    include_initial_guess: bool = False,
) -> list[tuple[int, MetricsReport]]:
    """Metrics at several budgets, reusing one run's attempts (prefix property)."""
    return [
        (n, compute_metrics(result, test, include_initial_guess=include_initial_guess, first_n=n))
        for n in budgets
    ]
