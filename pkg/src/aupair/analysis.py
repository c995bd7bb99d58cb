"""Post-hoc analyses: syntax-tree novelty, repair lineage, per-label breakdowns.

The diversity score counts, per problem, the distinct syntax subtrees that
appear in the generated fixes but not in the guess, takes the union over the
budget's attempts, and normalizes by the budget, the dataset size, and the
largest per-problem novelty set observed in the report.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass
from typing import Sequence

from .inference import StrategyResult
from .model import Attempt, CandidatePair, Problem
from .pairgen import CuratedDataset, PairStore

_IDENTIFIER_FIELDS = {"id", "arg", "name", "attr", "asname", "module"}


@dataclass(frozen=True)
class SubtreeSet:
    """Digests of every subtree of a program's syntax tree.

    Unparseable code yields the empty set with ``parsed`` false; the flag
    keeps parse failures distinguishable from genuinely empty programs.
    """

    digests: frozenset[str]
    parsed: bool

    def novel_versus(self, baseline: "SubtreeSet") -> frozenset[str]:
        return self.digests - baseline.digests


def _canonical(node: object, normalize_identifiers: bool) -> str:
    if isinstance(node, ast.AST):
        parts = [type(node).__name__]
        for name, value in ast.iter_fields(node):
            if normalize_identifiers and name in _IDENTIFIER_FIELDS and isinstance(value, str):
                value = "_"
            parts.append(f"{name}={_canonical(value, normalize_identifiers)}")
        return "(" + " ".join(parts) + ")"
    if isinstance(node, list):
        return "[" + " ".join(_canonical(item, normalize_identifiers) for item in node) + "]"
    return repr(node)


def subtree_set(code: str, normalize_identifiers: bool = False) -> SubtreeSet:
    """Digest the full subtree rooted at every node of the parsed program.

    The canonical form keeps node kinds, literal values, and identifier text;
    ``normalize_identifiers`` blanks the identifiers for sensitivity checks.
    """
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError):
        return SubtreeSet(digests=frozenset(), parsed=False)
    digests = {
        hashlib.sha256(_canonical(node, normalize_identifiers).encode("utf-8")).hexdigest()[:24]
        for node in ast.walk(tree)
    }
    return SubtreeSet(digests=frozenset(digests), parsed=True)


@dataclass(frozen=True)
class DiversityReport:
    delta: float
    per_problem_diff_counts: tuple[int, ...]
    s_max: int
    n: int
    flags: tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "delta": self.delta,
            "per_problem_diff_counts": list(self.per_problem_diff_counts),
            "s_max": self.s_max,
            "n": self.n,
            "flags": list(self.flags),
        }


def diversity_score(
    result: StrategyResult,
    test: CuratedDataset,
    n: int,
    normalize_identifiers: bool = False,
) -> DiversityReport:
    """Normalized count of unique subtrees the fixes introduce over the guesses.

    Per problem: the union over its attempts of (fix subtrees minus guess
    subtrees).  The score divides the summed set sizes by
    ``n * |problems| * s_max`` where s_max is the largest such set in this
    report.
    """
    if n < 0:
        raise ValueError("budget n must be non-negative")
    counts: list[int] = []
    anything_parsed = False
    for problem in test.problems:
        attempts = result.per_problem.get(problem.id, ())
        if len(attempts) > n:
            raise ValueError(f"problem {problem.id} has more than n={n} attempts")
        guess_set = subtree_set(test.guesses[problem.id].code, normalize_identifiers)
        novel: set[str] = set()
        for attempt in attempts:
            fix_set = subtree_set(attempt.code, normalize_identifiers)
            anything_parsed = anything_parsed or fix_set.parsed
            novel |= fix_set.novel_versus(guess_set)
        counts.append(len(novel))

    s_max = max(counts, default=0)
    flags: list[str] = []
    if not anything_parsed and any(result.per_problem.values()):
        flags.append("all_unparsed")
    if s_max == 0 or n == 0 or not test.problems:
        delta = 0.0
        if s_max == 0 and "all_unparsed" not in flags:
            flags.append("no_novel_subtrees")
    else:
        delta = sum(counts) / (n * len(test.problems) * s_max)
    return DiversityReport(
        delta=delta,
        per_problem_diff_counts=tuple(counts),
        s_max=s_max,
        n=n,
        flags=tuple(flags),
    )


class LineageCycleError(RuntimeError):
    """A parent chain loops back on itself; the pair store is corrupt."""


def lineage_histogram(pairs: PairStore | Sequence[CandidatePair]) -> dict[int, int]:
    """Histogram of repair depth: steps from each pair's fix back to a phase-0 guess."""
    pair_list = list(pairs)
    attempts: dict[str, Attempt] = {}
    for pair in pair_list:
        attempts[pair.guess.id] = pair.guess
        attempts[pair.fix.id] = pair.fix

    cache: dict[str, int] = {}

    def depth_of(attempt_id: str) -> int:
        path: list[str] = []
        on_path: set[str] = set()
        current: str | None = attempt_id
        while current is not None and current not in cache:
            if current in on_path:
                raise LineageCycleError(f"lineage cycle through attempt {current}")
            attempt = attempts.get(current)
            if attempt is None:
                raise LineageCycleError(f"lineage chain references unknown attempt {current}")
            path.append(current)
            on_path.add(current)
            current = attempt.parent_attempt
        base = cache[current] if current is not None else -1
        for offset, node in enumerate(reversed(path)):
            cache[node] = base + 1 + offset
        return cache[attempt_id]

    histogram: dict[int, int] = {}
    for pair in pair_list:
        depth = depth_of(pair.fix.id)
        histogram[depth] = histogram.get(depth, 0) + 1
    return dict(sorted(histogram.items()))


AXIS_DIFFICULTY = "difficulty"
AXIS_CATEGORY = "category"


def breakdown(
    result: StrategyResult,
    test: CuratedDataset,
    axis: str,
    first_n: int | None = None,
) -> list[dict]:
    """Per-bucket metrics with the absolute improvement over the initial guesses.

    Problems without a label land in an "unlabeled" bucket; a problem with
    several category tags counts once per tag.
    """
    if axis not in (AXIS_DIFFICULTY, AXIS_CATEGORY):
        raise ValueError(f"unknown breakdown axis {axis!r}")

    groups: dict[str, list[Problem]] = {}
    for problem in test.problems:
        if axis == AXIS_DIFFICULTY:
            labels: tuple[str, ...] = (problem.difficulty or "unlabeled",)
        else:
            labels = problem.categories or ("unlabeled",)
        for label in labels:
            groups.setdefault(label, []).append(problem)

    rows: list[dict] = []
    for label in sorted(groups):
        problems = groups[label]
        best_rates: list[float] = []
        best_stricts: list[float] = []
        guess_rates: list[float] = []
        guess_stricts: list[float] = []
        for problem in problems:
            attempts = result.per_problem.get(problem.id, ())
            considered = attempts if first_n is None else attempts[:first_n]
            best_rates.append(max((a.score for a in considered), default=0.0))
            best_stricts.append(1.0 if any(a.score == 1.0 for a in considered) else 0.0)
            guess = test.guesses[problem.id]
            guess_rates.append(guess.score)
            guess_stricts.append(1.0 if guess.score == 1.0 else 0.0)
        count = len(problems)
        row = {
            "bucket": label,
            "n_problems": count,
            "test_pass_rate": sum(best_rates) / count,
            "strict_accuracy": sum(best_stricts) / count,
            "initial_test_pass_rate": sum(guess_rates) / count,
            "initial_strict_accuracy": sum(guess_stricts) / count,
        }
        row["improvement_test_pass_rate"] = row["test_pass_rate"] - row["initial_test_pass_rate"]
        row["improvement_strict_accuracy"] = row["strict_accuracy"] - row["initial_strict_accuracy"]
        rows.append(row)
    return rows
