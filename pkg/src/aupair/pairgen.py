"""Dataset curation and the candidate-pair sampling loop.

Curation generates one initial guess per problem, scores it, and drops
problems the guess already solves.  The pair generation loop then repeatedly
samples a problem instance from the live training set, asks for a repair
with up to k randomly drawn in-context pairs, and keeps every strictly
improving (guess, fix) pair.  An improving but imperfect fix re-enters the
training set as a new guess instance for its problem; a perfect fix retires
every instance of that problem.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .evaluator import Evaluator
from .gateway import PURPOSE_GUESS, PURPOSE_PHASE1, Gateway, GenerationRequest, format_tag
from .model import (
    Attempt,
    CandidatePair,
    Problem,
    attempt_from_record,
    attempt_to_record,
    pair_from_record,
    pair_to_record,
    problem_from_record,
    problem_to_record,
)
from .prompts import (
    NoCodeFoundError,
    RepairPromptSpec,
    build_guess_prompt,
    build_repair_prompt,
    build_zero_shot_repair_prompt,
    extract_code,
)
from .storage import read_artifact_jsonl, write_artifact_jsonl

logger = logging.getLogger(__name__)

DEFAULT_K = 32


class BudgetTooSmallError(RuntimeError):
    """The configured budget cannot cover the phase's planned calls."""


@dataclass(frozen=True)
class CurationReport:
    total: int
    solved_and_dropped: int
    retained: int
    mean_initial_score: float
    generation_failures: int = 0

    def __post_init__(self) -> None:
        if self.total != self.solved_and_dropped + self.retained:
            raise ValueError("curation counts do not add up")

    def to_record(self) -> dict:
        return {
            "total": self.total,
            "solved_and_dropped": self.solved_and_dropped,
            "retained": self.retained,
            "mean_initial_score": self.mean_initial_score,
            "generation_failures": self.generation_failures,
        }


@dataclass
class CuratedDataset:
    """Problems paired with their current initial guesses."""

    problems: list[Problem]
    guesses: dict[str, Attempt]

    def __post_init__(self) -> None:
        missing = [p.id for p in self.problems if p.id not in self.guesses]
        if missing:
            raise ValueError(f"curated problems without a guess: {missing}")

    def __len__(self) -> int:
        return len(self.problems)

    def problems_by_id(self) -> dict[str, Problem]:
        return {p.id: p for p in self.problems}

    def subset(self, problems: Sequence[Problem]) -> "CuratedDataset":
        return CuratedDataset(
            problems=list(problems), guesses={p.id: self.guesses[p.id] for p in problems}
        )

    def save(self, path: str | Path, provenance: dict | None = None) -> None:
        write_artifact_jsonl(
            path,
            "curated-dataset",
            (
                {"problem": problem_to_record(p), "guess": attempt_to_record(self.guesses[p.id])}
                for p in self.problems
            ),
            provenance=provenance,
        )

    @classmethod
    def load(cls, path: str | Path) -> "CuratedDataset":
        _, records = read_artifact_jsonl(path, "curated-dataset")
        problems: list[Problem] = []
        guesses: dict[str, Attempt] = {}
        for record in records:
            problem = problem_from_record(record["problem"])
            problems.append(problem)
            guesses[problem.id] = attempt_from_record(record["guess"])
        return cls(problems=problems, guesses=guesses)


class PairStore:
    """Append-only store of candidate pairs with a per-problem index.

    Exact duplicates (same problem, same guess code, same fix code) are
    dropped at insertion; they add no selection value downstream.
    """

    def __init__(self, pairs: Iterable[CandidatePair] = ()):
        self.pairs: list[CandidatePair] = []
        self._by_problem: dict[str, list[CandidatePair]] = {}
        self._dedup: set[tuple[str, str, str]] = set()
        for pair in pairs:
            self.add(pair)

    def add(self, pair: CandidatePair) -> bool:
        key = (pair.problem_id, pair.guess.code, pair.fix.code)
        if key in self._dedup:
            return False
        self._dedup.add(key)
        self.pairs.append(pair)
        self._by_problem.setdefault(pair.problem_id, []).append(pair)
        return True

    def for_problem(self, problem_id: str) -> list[CandidatePair]:
        return list(self._by_problem.get(problem_id, []))

    def by_id(self) -> dict[str, CandidatePair]:
        return {pair.id: pair for pair in self.pairs}

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def save(self, path: str | Path, provenance: dict | None = None) -> None:
        write_artifact_jsonl(
            path, "pair-store", (pair_to_record(p) for p in self.pairs), provenance=provenance
        )

    @classmethod
    def load(cls, path: str | Path) -> "PairStore":
        _, records = read_artifact_jsonl(path, "pair-store")
        return cls(pair_from_record(r) for r in records)


def curate_guesses(
    problems: Sequence[Problem],
    gateway: Gateway,
    evaluator: Evaluator,
    temperature: float = 1.0,
    max_tokens: int = 2048,
) -> tuple[CuratedDataset, CurationReport]:
    """Generate and score one initial guess per problem; drop solved problems.

    A response with no extractable code is kept as an empty guess with score
    0 so the problem stays repairable.  The reported mean covers every guess
    generated, including the dropped perfect ones.
    """
    if gateway.budget.remaining < len(problems):
        raise BudgetTooSmallError(
            f"curation needs {len(problems)} calls, budget has {gateway.budget.remaining}"
        )
    retained: list[Problem] = []
    guesses: dict[str, Attempt] = {}
    scores: list[float] = []
    dropped = 0
    failures = 0
    for problem in problems:
        request = GenerationRequest(
            prompt=build_guess_prompt(problem),
            temperature=temperature,
            max_tokens=max_tokens,
            tag=format_tag(PURPOSE_GUESS, problem.id),
        )
        record = gateway.generate(request)
        try:
            code = extract_code(record.response_text)
        except NoCodeFoundError:
            failures += 1
            attempt = Attempt(id=f"{problem.id}/g0", code="", score=0.0)
            retained.append(problem)
            guesses[problem.id] = attempt
            scores.append(0.0)
            continue
        outcome = evaluator.score(code, problem)
        scores.append(outcome.score)
        attempt = Attempt(
            id=f"{problem.id}/g0", code=code, score=outcome.score, per_test=outcome.verdicts
        )
        if attempt.solved:
            dropped += 1
            logger.info("problem %s solved by its initial guess; dropped", problem.id)
        else:
            retained.append(problem)
            guesses[problem.id] = attempt

    report = CurationReport(
        total=len(problems),
        solved_and_dropped=dropped,
        retained=len(retained),
        mean_initial_score=sum(scores) / len(scores) if scores else 0.0,
        generation_failures=failures,
    )
    return CuratedDataset(problems=retained, guesses=guesses), report


EVENT_NO_GAIN = "no_gain"
EVENT_IMPROVED = "improved"
EVENT_SOLVED = "solved"


@dataclass(frozen=True)
class PairGenEvent:
    """One loop iteration of pair generation, for audits."""

    call_index: int
    problem_id: str
    kind: str
    fix_score: float | None = None


def generate_pairs(
    train: CuratedDataset,
    gateway: Gateway,
    evaluator: Evaluator,
    n_calls: int,
    k: int = DEFAULT_K,
    seed: int = 0,
    temperature: float = 1.0,
    max_tokens: int = 2048,
    prompt_style: str | None = None,
    batch_size: int = 1,
    journal: list[PairGenEvent] | None = None,
) -> PairStore:
    """Run up to ``n_calls`` repair-sampling iterations over the training set.

    Sampling is uniform over the current problem *instances*, so problems
    whose fixes keep re-entering the pool are proportionally likelier to be
    drawn again.  The loop ends early when the budget runs out or the
    training set empties.

    ``batch_size`` > 1 generates that many iterations concurrently against a
    snapshot of the pair store and applies mutations in iteration order; the
    default is the fully sequential loop, which is what every acceptance
    check uses.
    """
    for problem in train.problems:
        guess = train.guesses[problem.id]
        if guess.score >= 1.0:
            raise ValueError(f"problem {problem.id} enters pair generation already solved")

    problems_by_id = train.problems_by_id()
    instances: list[tuple[Problem, Attempt]] = [
        (p, train.guesses[p.id]) for p in train.problems
    ]
    rng = random.Random(seed)
    store = PairStore()
    style_kwargs = {} if prompt_style is None else {"style": prompt_style}

    calls_done = 0
    while calls_done < n_calls:
        if not instances:
            break
        batch = min(batch_size, n_calls - calls_done, gateway.budget.remaining)
        if batch <= 0:
            break

        drawn: list[tuple[Problem, Attempt, list[CandidatePair]]] = []
        requests: list[GenerationRequest] = []
        for _ in range(batch):
            problem, guess = instances[rng.randrange(len(instances))]
            k_eff = min(k, len(store.pairs))
            context = [store.pairs[i] for i in rng.sample(range(len(store.pairs)), k_eff)]
            if context:
                prompt = build_repair_prompt(
                    RepairPromptSpec(
                        in_context_pairs=tuple(context),
                        problems=problems_by_id,
                        target_problem=problem,
                        target_guess=guess,
                        **style_kwargs,
                    )
                )
            else:
                prompt = build_zero_shot_repair_prompt(problem, guess, **style_kwargs)
            drawn.append((problem, guess, context))
            requests.append(
                GenerationRequest(
                    prompt=prompt,
                    temperature=temperature,
                    max_tokens=max_tokens,
                    tag=format_tag(PURPOSE_PHASE1, problem.id, [c.id for c in context]),
                )
            )

        if batch == 1:
            records = [gateway.generate(requests[0])]
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=batch) as pool:
                records = list(pool.map(gateway.generate, requests))
        calls_done += batch

        for (problem, guess, _context), record in zip(drawn, records):
            # a stale instance: its problem was retired earlier in this batch
            if not any(p.id == problem.id for p, _ in instances):
                continue
            try:
                code = extract_code(record.response_text)
            except NoCodeFoundError:
                code = None
            if code is None:
                _journal(journal, record.call_index, problem.id, EVENT_NO_GAIN, None)
                continue
            outcome = evaluator.score(code, problem)
            if outcome.score <= guess.score:
                _journal(journal, record.call_index, problem.id, EVENT_NO_GAIN, outcome.score)
                continue
            fix = Attempt(
                id=f"{problem.id}/c{record.call_index}",
                code=code,
                score=outcome.score,
                per_test=outcome.verdicts,
                parent_attempt=guess.id,
            )
            store.add(
                CandidatePair(
                    problem_id=problem.id,
                    guess=guess,
                    fix=fix,
                    created_at_call=record.call_index,
                )
            )
            if fix.solved:
                instances = [inst for inst in instances if inst[0].id != problem.id]
                _journal(journal, record.call_index, problem.id, EVENT_SOLVED, outcome.score)
            else:
                instances.append((problem, fix))
                _journal(journal, record.call_index, problem.id, EVENT_IMPROVED, outcome.score)

    return store


def _journal(
    journal: list[PairGenEvent] | None, call_index: int, problem_id: str, kind: str, score: float | None
) -> None:
    if journal is not None:
        journal.append(PairGenEvent(call_index, problem_id, kind, score))
