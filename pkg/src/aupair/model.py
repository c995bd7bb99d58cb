"""Domain model: problems, attempts, candidate pairs, dataset files, splits."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .evaluator import VERDICT_PASS, VERDICTS, normalize_output
from .storage import atomic_write_text, canonical_json

SCORE_TOLERANCE = 1e-9


class DatasetError(ValueError):
    """A dataset file or record failed validation."""


@dataclass(frozen=True)
class TestCase:
    """One unit test: the input string fed to solve() and the reference stdout.

    Both fields are stored byte-exact; normalization happens only when
    outputs are compared.
    """

    __test__ = False  # keep pytest from collecting the domain type

    input: str
    expected_output: str


@dataclass(frozen=True)
class Problem:
    id: str
    description: str
    tests: tuple[TestCase, ...]
    difficulty: str | None = None
    categories: tuple[str, ...] = ()
    source: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("problem id must be non-empty")
        if not self.tests:
            raise DatasetError(f"problem {self.id} has no tests")
        if all(normalize_output(t.expected_output) == "" for t in self.tests):
            raise DatasetError(f"problem {self.id} has no test with non-empty expected output")


@dataclass(frozen=True)
class Attempt:
    """A candidate program with its measured unit-test score.

    ``parent_attempt`` references the attempt this one repaired, forming the
    lineage chain back to a phase-0 guess (which has no parent).
    """

    id: str
    code: str
    score: float
    per_test: tuple[str, ...] | None = None
    parent_attempt: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"attempt {self.id}: score {self.score} outside [0, 1]")
        if self.per_test is not None:
            if any(v not in VERDICTS for v in self.per_test):
                raise ValueError(f"attempt {self.id}: unknown verdict in per_test")
            expected = self.per_test.count(VERDICT_PASS) / len(self.per_test)
            if abs(self.score - expected) > SCORE_TOLERANCE:
                raise ValueError(
                    f"attempt {self.id}: score {self.score} does not match per_test mean {expected}"
                )

    @property
    def solved(self) -> bool:
        return self.score == 1.0


@dataclass(frozen=True)
class CandidatePair:
    """An improving (guess, fix) example for one problem.

    Construction enforces the strict improvement contract; both attempts must
    have been scored against the same problem's tests.
    """

    problem_id: str
    guess: Attempt
    fix: Attempt
    created_at_call: int

    def __post_init__(self) -> None:
        if not self.fix.score > self.guess.score:
            raise ValueError(
                f"pair for {self.problem_id}: fix score {self.fix.score} must exceed "
                f"guess score {self.guess.score}"
            )

    @property
    def id(self) -> str:
        return f"{self.problem_id}/c{self.created_at_call}"


@dataclass(frozen=True)
class SplitDataset:
    train: tuple[Problem, ...]
    val: tuple[Problem, ...]
    test: tuple[Problem, ...]

    def __post_init__(self) -> None:
        ids = [p.id for part in (self.train, self.val, self.test) for p in part]
        if len(ids) != len(set(ids)):
            raise DatasetError("split parts overlap")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


# --- JSONL record mapping ---------------------------------------------------


def problem_to_record(problem: Problem) -> dict:
    return {
        "id": problem.id,
        "description": problem.description,
        "difficulty": problem.difficulty,
        "categories": list(problem.categories),
        "source": problem.source,
        "tests": [{"input": t.input, "expected_output": t.expected_output} for t in problem.tests],
    }


def problem_from_record(record: dict) -> Problem:
    if not isinstance(record, dict):
        raise DatasetError("problem record must be a JSON object")
    try:
        tests = tuple(
            TestCase(input=t["input"], expected_output=t["expected_output"])
            for t in record["tests"]
        )
        return Problem(
            id=record["id"],
            description=record["description"],
            tests=tests,
            difficulty=record.get("difficulty"),
            categories=tuple(record.get("categories") or ()),
            source=record.get("source", ""),
        )
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed problem record: {exc}") from exc


def attempt_to_record(attempt: Attempt) -> dict:
    return {
        "id": attempt.id,
        "code": attempt.code,
        "score": attempt.score,
        "per_test": list(attempt.per_test) if attempt.per_test is not None else None,
        "parent_attempt": attempt.parent_attempt,
    }


def attempt_from_record(record: dict) -> Attempt:
    return Attempt(
        id=record["id"],
        code=record["code"],
        score=record["score"],
        per_test=tuple(record["per_test"]) if record.get("per_test") is not None else None,
        parent_attempt=record.get("parent_attempt"),
    )


def pair_to_record(pair: CandidatePair) -> dict:
    return {
        "problem_id": pair.problem_id,
        "guess": attempt_to_record(pair.guess),
        "fix": attempt_to_record(pair.fix),
        "created_at_call": pair.created_at_call,
    }


def pair_from_record(record: dict) -> CandidatePair:
    return CandidatePair(
        problem_id=record["problem_id"],
        guess=attempt_from_record(record["guess"]),
        fix=attempt_from_record(record["fix"]),
        created_at_call=record["created_at_call"],
    )


# --- Dataset file I/O --------------------------------------------------------


def load_dataset(
    path: str | Path,
    format: str = "jsonl",
    difficulty_vocab: Sequence[str] | None = None,
) -> list[Problem]:
    """Load and validate a problem dataset, one JSON record per line.

    Errors name the offending line; duplicate ids and empty test lists are
    rejected.  When a difficulty vocabulary is configured, labels outside it
    are rejected too.
    """
    if format != "jsonl":
        raise DatasetError(f"unsupported dataset format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")

    problems: list[Problem] = []
    seen: set[str] = set()
    vocab = set(difficulty_vocab) if difficulty_vocab is not None else None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                problem = problem_from_record(record)
            except (json.JSONDecodeError, DatasetError) as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
            if problem.id in seen:
                raise DatasetError(f"{path}: line {lineno}: duplicate problem id {problem.id!r}")
            if vocab is not None and problem.difficulty is not None and problem.difficulty not in vocab:
                raise DatasetError(
                    f"{path}: line {lineno}: difficulty {problem.difficulty!r} not in vocabulary"
                )
            seen.add(problem.id)
            problems.append(problem)
    return problems


def save_dataset(problems: Iterable[Problem], path: str | Path) -> None:
    lines = [canonical_json(problem_to_record(p)) for p in problems]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# --- Stratified splitting ----------------------------------------------------


def apportion(total: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``total * ratios``; ties favor earlier entries."""
    quotas = [total * r for r in ratios]
    counts = [int(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    for index in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i)):
        if sum(counts) >= total:
            break
        counts[index] += 1
    return counts


def stratified_split(
    problems: Sequence[Problem],
    ratios: tuple[float, float, float],
    seed: int,
) -> SplitDataset:
    """Deterministically split problems into train/val/test, stratum by stratum.

    Strata are the difficulty labels; unlabeled problems form their own
    stratum.  Within each stratum sizes follow largest-remainder
    apportionment of the ratios (ties toward train), so per-stratum
    proportions hold within one problem.
    """
    if not problems:
        raise DatasetError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise DatasetError("ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1, got {sum(ratios)}")

    strata: dict[str | None, list[Problem]] = {}
    for problem in problems:
        strata.setdefault(problem.difficulty, []).append(problem)

    rng = random.Random(seed)
    parts: tuple[list[Problem], list[Problem], list[Problem]] = ([], [], [])
    for label in sorted(strata, key=lambda k: (k is not None, k or "")):
        members = list(strata[label])
        rng.shuffle(members)
        n_train, n_val, _ = apportion(len(members), ratios)
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train : n_train + n_val])
        parts[2].extend(members[n_train + n_val :])
    return SplitDataset(train=tuple(parts[0]), val=tuple(parts[1]), test=tuple(parts[2]))


def split_to_manifest(split: SplitDataset, ratios: Sequence[float], seed: int) -> dict:
    return {
        "seed": seed,
        "ratios": list(ratios),
        "train": [p.id for p in split.train],
        "val": [p.id for p in split.val],
        "test": [p.id for p in split.test],
    }


def split_from_manifest(manifest: Mapping, problems: Sequence[Problem]) -> SplitDataset:
    by_id = {p.id: p for p in problems}
    try:
        return SplitDataset(
            train=tuple(by_id[i] for i in manifest["train"]),
            val=tuple(by_id[i] for i in manifest["val"]),
            test=tuple(by_id[i] for i in manifest["test"]),
        )
    except KeyError as exc:
        raise DatasetError(f"split manifest references unknown problem id {exc}") from exc
