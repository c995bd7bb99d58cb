"""Fix-quality matrix computation and clipped greedy selection of golden pairs.

The matrix holds, for every (candidate pair, validation problem) cell, the
unit-test score of the fix generated when that pair is the 1-shot in-context
example.  Selection then loops: take the row with the highest mean, record
that mean as the pair's marginal gain, subtract the row from every row, clip
entrywise to [0, 1], and stop once the best remaining mean drops below the
tolerance.  Clipping is what makes later gains honest: a negative cell would
mean a problem some earlier pair already handles better, and without the
clip it would cancel real improvements elsewhere in the row.

The selection loop is pure: it performs no generation calls.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .evaluator import Evaluator
from .gateway import PURPOSE_REPAIR, Gateway, GenerationRequest, format_tag
from .model import CandidatePair, Problem
from .pairgen import BudgetTooSmallError, CuratedDataset, PairStore
from .prompts import NoCodeFoundError, RepairPromptSpec, build_repair_prompt, extract_code
from .storage import atomic_write_bytes, canonical_json, read_artifact_jsonl, write_artifact_jsonl

DEFAULT_TOLERANCE = 1e-3


@dataclass(frozen=True)
class FixQualityMatrix:
    """Dense pair-by-problem score matrix with identifier lists and provenance."""

    values: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    provenance: dict

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError(
                f"shape {self.values.shape} does not match ids "
                f"({len(self.row_ids)} x {len(self.col_ids)})"
            )
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("matrix entries must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def save(self, path: str | Path) -> None:
        """JSON header line, then the row-major float64 payload."""
        header = canonical_json(
            {
                "rows": len(self.row_ids),
                "cols": len(self.col_ids),
                "row_ids": list(self.row_ids),
                "col_ids": list(self.col_ids),
                "provenance": self.provenance,
            }
        )
        payload = np.ascontiguousarray(self.values, dtype="<f8").tobytes(order="C")
        atomic_write_bytes(path, header.encode("utf-8") + b"\n" + payload)

    @classmethod
    def load(cls, path: str | Path) -> "FixQualityMatrix":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            payload = fh.read()
        rows, cols = header["rows"], header["cols"]
        values = np.frombuffer(payload, dtype="<f8", count=rows * cols).reshape(rows, cols).copy()
        return cls(
            values=values,
            row_ids=tuple(header["row_ids"]),
            col_ids=tuple(header["col_ids"]),
            provenance=header.get("provenance", {}),
        )


def compute_fix_quality_matrix(
    pairs: PairStore | Sequence[CandidatePair],
    val: CuratedDataset,
    gateway: Gateway,
    evaluator: Evaluator,
    source_problems: Mapping[str, Problem],
    temperature: float = 1.0,
    max_tokens: int = 2048,
    prompt_style: str | None = None,
    max_workers: int = 1,
    provenance: dict | None = None,
) -> FixQualityMatrix:
    """Score every (pair, validation problem) combination with one call each.

    The budget must cover all |pairs| x |val| calls up front.  A response
    with no extractable code scores 0 for its cell.  Cells are independent,
    so ``max_workers`` > 1 fans them out over a thread pool.
    """
    pair_list = list(pairs)
    n_cells = len(pair_list) * len(val.problems)
    if gateway.budget.remaining < n_cells:
        raise BudgetTooSmallError(
            f"matrix needs {n_cells} calls, budget has {gateway.budget.remaining}"
        )
    for problem in val.problems:
        if problem.id not in val.guesses:
            raise ValueError(f"validation problem {problem.id} carries no initial guess")

    values = np.zeros((len(pair_list), len(val.problems)), dtype=np.float64)
    style_kwargs = {} if prompt_style is None else {"style": prompt_style}

    def fill_cell(cell: tuple[int, int]) -> None:
        i, j = cell
        pair, problem = pair_list[i], val.problems[j]
        prompt = build_repair_prompt(
            RepairPromptSpec(
                in_context_pairs=(pair,),
                problems=source_problems,
                target_problem=problem,
                target_guess=val.guesses[problem.id],
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
        try:
            code = extract_code(record.response_text)
        except NoCodeFoundError:
            return
        values[i, j] = evaluator.score(code, problem).score

    cells = [(i, j) for i in range(len(pair_list)) for j in range(len(val.problems))]
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(fill_cell, cells))
    else:
        for cell in cells:
            fill_cell(cell)

    return FixQualityMatrix(
        values=values,
        row_ids=tuple(pair.id for pair in pair_list),
        col_ids=tuple(problem.id for problem in val.problems),
        provenance=provenance or {},
    )


@dataclass(frozen=True)
class SelectedPair:
    rank: int
    pair_id: str
    marginal_gain: float


@dataclass(frozen=True)
class AuPairList:
    """Ordered golden-pair selection with the gains observed at selection time."""

    entries: tuple[SelectedPair, ...]
    tolerance_used: float

    def __post_init__(self) -> None:
        ids = [e.pair_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("selected pair ids must be distinct")
        gains = [e.marginal_gain for e in self.entries]
        if any(later > earlier for earlier, later in zip(gains, gains[1:])):
            raise ValueError("marginal gains must be non-increasing")
        if any(g < self.tolerance_used for g in gains):
            raise ValueError("every marginal gain must reach the tolerance")

    def __len__(self) -> int:
        return len(self.entries)

    def pair_ids(self) -> list[str]:
        return [e.pair_id for e in self.entries]

    def resolve(self, store: PairStore) -> list[CandidatePair]:
        by_id = store.by_id()
        return [by_id[e.pair_id] for e in self.entries]

    def save(self, path: str | Path, provenance: dict | None = None) -> None:
        write_artifact_jsonl(
            path,
            "aupair-list",
            (
                {"rank": e.rank, "pair_id": e.pair_id, "marginal_gain": e.marginal_gain}
                for e in self.entries
            ),
            provenance=provenance,
            extra_header={"tolerance": self.tolerance_used},
        )

    @classmethod
    def load(cls, path: str | Path) -> "AuPairList":
        header, records = read_artifact_jsonl(path, "aupair-list")
        entries = tuple(
            SelectedPair(rank=r["rank"], pair_id=r["pair_id"], marginal_gain=r["marginal_gain"])
            for r in records
        )
        return cls(entries=entries, tolerance_used=header["tolerance"])


def extract_aupairs(
    matrix: FixQualityMatrix,
    tolerance: float = DEFAULT_TOLERANCE,
    clip: bool = True,
) -> AuPairList:
    """Greedy selection over the matrix; see the module docstring for the loop.

    Ties in the argmax go to the lowest row index.  ``clip=False`` is a test
    hook that demonstrates why the clip is required; production callers never
    disable it.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    entries: list[SelectedPair] = []
    if 0 in matrix.shape:
        return AuPairList(entries=(), tolerance_used=tolerance)

    work = matrix.values.astype(np.float64, copy=True)
    while True:
        means = work.mean(axis=1)
        best = int(np.argmax(means))
        gain = float(means[best])
        if gain < tolerance:
            break
        entries.append(SelectedPair(rank=len(entries), pair_id=matrix.row_ids[best], marginal_gain=gain))
        selected_row = work[best].copy()
        work -= selected_row
        if clip:
            np.clip(work, 0.0, 1.0, out=work)
    return AuPairList(entries=tuple(entries), tolerance_used=tolerance)


def random_pair_baseline(
    pairs: PairStore | Sequence[CandidatePair],
    n: int,
    seed: int,
    dedup: bool = True,
) -> list[CandidatePair]:
    """Uniform sample of n pairs without replacement, optionally one per problem.

    With ``dedup`` the first drawn pair wins for each source problem, which
    makes the baseline stronger: no budget is wasted re-testing one problem's
    repair style.
    """
    pool = list(pairs)
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = random.Random(seed)
    order = list(range(len(pool)))
    rng.shuffle(order)
    if not dedup:
        if n > len(pool):
            raise ValueError(f"requested {n} pairs from a pool of {len(pool)}")
        return [pool[i] for i in order[:n]]

    distinct_problems = {pair.problem_id for pair in pool}
    if n > len(distinct_problems):
        raise ValueError(
            f"requested {n} pairs but only {len(distinct_problems)} distinct problems after dedup"
        )
    selected: list[CandidatePair] = []
    seen: set[str] = set()
    for index in order:
        pair = pool[index]
        if pair.problem_id in seen:
            continue
        seen.add(pair.problem_id)
        selected.append(pair)
        if len(selected) == n:
            break
    return selected
