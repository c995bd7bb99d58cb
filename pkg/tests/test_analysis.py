"""Syntax-novelty diversity, lineage depth, and per-label breakdowns."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aupair.analysis import (
    LineageCycleError,
    breakdown,
    diversity_score,
    lineage_histogram,
    subtree_set,
)
from aupair.inference import StrategyResult
from aupair.model import Attempt, CandidatePair
from aupair.pairgen import CuratedDataset, PairStore

from conftest import make_problem


def curated(problems, guess_code="x = 1\n", guess_score=0.0):
    guesses = {
        p.id: Attempt(id=f"{p.id}/g0", code=guess_code, score=guess_score) for p in problems
    }
    return CuratedDataset(problems=list(problems), guesses=guesses)


def result_with_codes(per_problem_codes, budget):
    per_problem = {
        pid: tuple(Attempt(id=f"{pid}/r{i}", code=code, score=0.0) for i, code in enumerate(codes))
        for pid, codes in per_problem_codes.items()
    }
    return StrategyResult(strategy="aupair", budget_per_problem=budget, per_problem=per_problem)


class TestSubtreeSet:
    def test_deterministic(self):
        code = "def solve(s): print(s)"
        assert subtree_set(code) == subtree_set(code)

    def test_identity_diff_empty(self):
        code = "def solve(s):\n    print(s)\n"
        assert subtree_set(code).novel_versus(subtree_set(code)) == frozenset()

    def test_addition_introduces_subtrees(self):
        # hand enumeration: print(1+2) adds BinOp, Add, Constant 2, and the
        # changed Call / Expr / Module ancestors; Name, Load, Constant 1 are shared
        guess = subtree_set("print(1)")
        fix = subtree_set("print(1+2)")
        novel = fix.novel_versus(guess)
        assert len(novel) == 6

    def test_unparseable_flagged_empty(self):
        broken = subtree_set("def solve(:")
        assert broken.digests == frozenset()
        assert not broken.parsed

    def test_identifier_normalization_mode(self):
        plain_a, plain_b = subtree_set("alpha = 1"), subtree_set("beta = 1")
        assert plain_a != plain_b
        norm_a = subtree_set("alpha = 1", normalize_identifiers=True)
        norm_b = subtree_set("beta = 1", normalize_identifiers=True)
        assert norm_a == norm_b

    @settings(max_examples=40, deadline=None)
    @given(
        constants=st.lists(st.integers(min_value=0, max_value=9), min_size=1, max_size=4),
        fresh=st.integers(min_value=1000, max_value=9999),
    )
    def test_inserting_fresh_statement_never_decreases_novelty(self, constants, fresh):
        guess_code = "x = 1\ny = 2\n"
        fix_code = "".join(f"v{i} = {c}\n" for i, c in enumerate(constants))
        extended = fix_code + f"fresh_{fresh} = {fresh}\n"
        guess = subtree_set(guess_code)
        base = len(subtree_set(fix_code).novel_versus(guess))
        grown = len(subtree_set(extended).novel_versus(guess))
        assert grown >= base


class TestDiversityScore:
    def test_identical_fixes_with_one_novel_subtree(self):
        # the duplicated statement changes only the module root: exactly one
        # novel subtree; two attempts, one problem, s_max 1 -> 1 / (2*1*1)
        problems = [make_problem("p")]
        test = curated(problems, guess_code="x = 1\n")
        fix = "x = 1\nx = 1\n"
        result = result_with_codes({"p": [fix, fix]}, budget=2)
        report = diversity_score(result, test, n=2)
        assert report.per_problem_diff_counts == (1,)
        assert report.s_max == 1
        assert report.delta == 0.5

    def test_fixes_identical_to_guess_scores_zero(self):
        problems = [make_problem("p")]
        test = curated(problems, guess_code="x = 1\n")
        result = result_with_codes({"p": ["x = 1\n", "x = 1\n"]}, budget=2)
        assert diversity_score(result, test, n=2).delta == 0.0

    def test_doubling_budget_halves_delta(self):
        problems = [make_problem("p")]
        test = curated(problems, guess_code="x = 1\n")
        fix = "x = 1\nx = 1\n"
        result = result_with_codes({"p": [fix, fix]}, budget=4)
        at_two = diversity_score(result, test, n=2).delta
        at_four = diversity_score(result, test, n=4).delta
        assert at_four == at_two / 2

    def test_all_unparsed_flagged(self):
        problems = [make_problem("p")]
        test = curated(problems)
        result = result_with_codes({"p": ["(((", "def f(:"]}, budget=2)
        report = diversity_score(result, test, n=2)
        assert report.delta == 0.0
        assert "all_unparsed" in report.flags

    def test_too_many_attempts_rejected(self):
        problems = [make_problem("p")]
        test = curated(problems)
        result = result_with_codes({"p": ["x = 1", "x = 2"]}, budget=2)
        with pytest.raises(ValueError, match="more than n"):
            diversity_score(result, test, n=1)

    def test_delta_in_unit_interval_on_random_results(self):
        import random

        rng = random.Random(7)
        snippets = ["x = 1", "print(2)", "def solve(s):\n    return s", "for i in range(3): pass", "(broken"]
        for _ in range(60):
            problems = [make_problem(f"p{i}") for i in range(rng.randint(1, 4))]
            test = curated(problems, guess_code=rng.choice(snippets))
            n = rng.randint(1, 4)
            codes = {
                p.id: [rng.choice(snippets) for _ in range(rng.randint(0, n))] for p in problems
            }
            report = diversity_score(result_with_codes(codes, budget=n), test, n=n)
            assert 0.0 <= report.delta <= 1.0


def chain_pairs():
    g0 = Attempt(id="p/g0", code="a", score=0.0)
    f1 = Attempt(id="p/c1", code="b", score=0.5, parent_attempt="p/g0")
    f2 = Attempt(id="p/c2", code="c", score=0.75, parent_attempt="p/c1")
    return [
        CandidatePair(problem_id="p", guess=g0, fix=f1, created_at_call=1),
        CandidatePair(problem_id="p", guess=f1, fix=f2, created_at_call=2),
    ]


class TestLineage:
    def test_two_step_chain(self):
        assert lineage_histogram(PairStore(chain_pairs())) == {1: 1, 2: 1}

    def test_flat_store_all_depth_one(self):
        pairs = []
        for i in range(3):
            g = Attempt(id=f"q{i}/g0", code="g", score=0.0)
            f = Attempt(id=f"q{i}/c1", code="f", score=1.0, parent_attempt=f"q{i}/g0")
            pairs.append(CandidatePair(problem_id=f"q{i}", guess=g, fix=f, created_at_call=1))
        assert lineage_histogram(pairs) == {1: 3}

    def test_empty_store(self):
        assert lineage_histogram(PairStore()) == {}

    def test_cycle_detected(self):
        a = Attempt(id="p/x", code="a", score=0.2, parent_attempt="p/y")
        b = Attempt(id="p/y", code="b", score=0.5, parent_attempt="p/x")
        pair = CandidatePair(problem_id="p", guess=a, fix=b, created_at_call=1)
        with pytest.raises(LineageCycleError):
            lineage_histogram([pair])


class TestBreakdown:
    def test_difficulty_buckets_match_hand_averages(self):
        problems = [
            make_problem("a1", difficulty="A"),
            make_problem("a2", difficulty="A"),
            make_problem("b1", difficulty="B"),
        ]
        test = curated(problems)
        result = result_with_codes({"a1": [], "a2": [], "b1": []}, budget=2)
        result = StrategyResult(
            strategy="aupair",
            budget_per_problem=2,
            per_problem={
                "a1": (Attempt(id="a1/r0", code="", score=1.0),),
                "a2": (Attempt(id="a2/r0", code="", score=0.5),),
                "b1": (Attempt(id="b1/r0", code="", score=0.25),),
            },
        )
        rows = {row["bucket"]: row for row in breakdown(result, test, axis="difficulty")}
        assert rows["A"]["test_pass_rate"] == 0.75
        assert rows["A"]["n_problems"] == 2
        assert rows["B"]["test_pass_rate"] == 0.25
        assert rows["A"]["improvement_test_pass_rate"] == 0.75  # guesses score 0

    def test_multi_category_counted_once_per_tag(self):
        problems = [make_problem("m", categories=("strings", "two pointers"))]
        test = curated(problems)
        result = result_with_codes({"m": []}, budget=1)
        rows = breakdown(result, test, axis="category")
        assert sorted(row["bucket"] for row in rows) == ["strings", "two pointers"]
        assert all(row["n_problems"] == 1 for row in rows)

    def test_unlabeled_fallback(self):
        problems = [make_problem("u1"), make_problem("u2")]
        test = curated(problems)
        result = result_with_codes({"u1": [], "u2": []}, budget=1)
        rows = breakdown(result, test, axis="difficulty")
        assert [row["bucket"] for row in rows] == ["unlabeled"]
        assert rows[0]["n_problems"] == 2

    def test_unknown_axis_rejected(self):
        test = curated([make_problem("p")])
        with pytest.raises(ValueError, match="axis"):
            breakdown(result_with_codes({"p": []}, budget=1), test, axis="model")
