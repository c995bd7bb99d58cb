"""Inference strategies and the two corpus metrics."""

import random

import pytest

from aupair.gateway import Budget, Gateway, ScriptedBackend, parse_tag
from aupair.inference import (
    STRATEGY_BEST_OF_N,
    STRATEGY_SELF_REPAIR,
    MetricsReport,
    StrategyResult,
    compute_metrics,
    metrics_sweep,
    run_aupair_inference,
    run_best_of_n,
    run_self_repair,
)
from aupair.model import Attempt
from aupair.pairgen import CuratedDataset

from conftest import BROKEN_CODE, ECHO_CODE, fenced, make_pair, make_problem


def curated(problems, guess_score=0.0):
    guesses = {
        p.id: Attempt(id=f"{p.id}/g0", code=BROKEN_CODE, score=guess_score) for p in problems
    }
    return CuratedDataset(problems=list(problems), guesses=guesses)


def attempts_result(per_problem_scores, strategy="aupair", budget=None):
    per_problem = {
        pid: tuple(
            Attempt(id=f"{pid}/r{i}", code="", score=score) for i, score in enumerate(scores)
        )
        for pid, scores in per_problem_scores.items()
    }
    width = max((len(s) for s in per_problem_scores.values()), default=0)
    return StrategyResult(
        strategy=strategy, budget_per_problem=budget or width, per_problem=per_problem
    )


class TestComputeMetrics:
    def test_two_problem_fixture(self):
        # P1 passes {2/4, 3/4}; P2 passes {2/2, 0/2}
        test = curated([make_problem("p1"), make_problem("p2")])
        result = attempts_result({"p1": [0.5, 0.75], "p2": [1.0, 0.0]})
        report = compute_metrics(result, test)
        assert report.test_pass_rate == 0.875
        assert report.strict_accuracy == 0.5
        assert report.n_problems == 2

    def test_all_perfect(self):
        test = curated([make_problem("p1"), make_problem("p2")])
        report = compute_metrics(attempts_result({"p1": [1.0], "p2": [1.0]}), test)
        assert report.test_pass_rate == 1.0
        assert report.strict_accuracy == 1.0

    def test_all_failing(self):
        test = curated([make_problem("p1"), make_problem("p2")])
        report = compute_metrics(attempts_result({"p1": [0.0], "p2": [0.0]}), test)
        assert report.test_pass_rate == 0.0
        assert report.strict_accuracy == 0.0

    def test_problem_without_attempts_contributes_zero(self):
        test = curated([make_problem("p1"), make_problem("p2")])
        report = compute_metrics(attempts_result({"p1": [1.0]}, budget=1), test)
        assert report.test_pass_rate == 0.5
        assert report.strict_accuracy == 0.5

    def test_include_initial_guess(self):
        test = curated([make_problem("p1")], guess_score=0.5)
        result = attempts_result({"p1": [0.25]})
        assert compute_metrics(result, test).test_pass_rate == 0.25
        assert compute_metrics(result, test, include_initial_guess=True).test_pass_rate == 0.5

    def test_strict_never_exceeds_pass_rate_on_random_results(self):
        rng = random.Random(99)
        for _ in range(300):
            problems = [make_problem(f"p{i}") for i in range(rng.randint(1, 6))]
            test = curated(problems)
            scores = {
                p.id: [rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]) for _ in range(rng.randint(0, 4))]
                for p in problems
            }
            report = compute_metrics(attempts_result(scores, budget=4), test)
            assert report.strict_accuracy <= report.test_pass_rate

    def test_monotone_in_first_n(self):
        test = curated([make_problem("p1"), make_problem("p2")])
        result = attempts_result({"p1": [0.25, 0.5, 1.0], "p2": [0.0, 0.75, 0.5]})
        sweep = metrics_sweep(result, test, budgets=[1, 2, 3])
        rates = [report.test_pass_rate for _, report in sweep]
        stricts = [report.strict_accuracy for _, report in sweep]
        assert rates == sorted(rates)
        assert stricts == sorted(stricts)

    def test_unknown_problem_rejected(self):
        test = curated([make_problem("p1")])
        with pytest.raises(ValueError, match="outside the test dataset"):
            compute_metrics(attempts_result({"ghost": [1.0]}), test)

    def test_bucket_breakdowns(self):
        problems = [
            make_problem("a1", difficulty="A", categories=("strings",)),
            make_problem("a2", difficulty="A", categories=("strings", "math")),
            make_problem("b1", difficulty="B"),
        ]
        test = curated(problems)
        report = compute_metrics(
            attempts_result({"a1": [1.0], "a2": [0.5], "b1": [0.0]}), test
        )
        assert report.per_difficulty["A"].test_pass_rate == 0.75
        assert report.per_difficulty["A"].n_problems == 2
        assert report.per_difficulty["B"].test_pass_rate == 0.0
        assert report.per_category["strings"].n_problems == 2
        assert report.per_category["math"].test_pass_rate == 0.5
        assert report.per_category["unlabeled"].n_problems == 1

    def test_report_invariant_enforced(self):
        with pytest.raises(ValueError, match="exceeds"):
            MetricsReport(test_pass_rate=0.2, strict_accuracy=0.4, n_problems=1)

    def test_difficulty_buckets_aggregate_to_corpus_metrics(self):
        # single-label axis: count-weighted bucket means recover the overall mean
        rng = random.Random(5)
        problems = [
            make_problem(f"p{i}", difficulty=rng.choice(["A", "B", "C"])) for i in range(12)
        ]
        test = curated(problems)
        scores = {p.id: [rng.choice([0.0, 0.25, 0.5, 1.0])] for p in problems}
        report = compute_metrics(attempts_result(scores, budget=1), test)
        weighted = sum(b.test_pass_rate * b.n_problems for b in report.per_difficulty.values())
        assert weighted / report.n_problems == pytest.approx(report.test_pass_rate)
        weighted_strict = sum(
            b.strict_accuracy * b.n_problems for b in report.per_difficulty.values()
        )
        assert weighted_strict / report.n_problems == pytest.approx(report.strict_accuracy)


def cluster_oracle(cluster_of):
    """Repair succeeds iff the in-context pair's source shares the target's cluster."""

    def handler(info, request):
        sources = info.pair_problem_ids
        if sources and cluster_of.get(sources[0]) == cluster_of.get(info.problem_id):
            return fenced(ECHO_CODE)
        return "cannot help"

    return handler


class TestAupairInference:
    def test_two_cluster_oracle_solves_both_at_n2(self, evaluator):
        cluster_of = {"t1": "x", "t2": "y", "s1": "x", "s2": "y"}
        test = curated([make_problem("t1"), make_problem("t2")])
        ranked = [make_pair("s1"), make_pair("s2")]
        gateway = Gateway(ScriptedBackend(cluster_oracle(cluster_of)), Budget(4))
        source_problems = {pid: make_problem(pid) for pid in ("s1", "s2")}
        result = run_aupair_inference(test, ranked, 2, gateway, evaluator, source_problems)
        report = compute_metrics(result, test)
        assert report.test_pass_rate == 1.0
        assert report.strict_accuracy == 1.0
        assert gateway.budget.used == 4

    def test_n_zero_gives_empty_attempts(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: "x"), Budget(1))
        result = run_aupair_inference(test, [make_pair("s1")], 0, gateway, evaluator, {"s1": make_problem("s1")})
        assert result.per_problem["t1"] == ()
        assert compute_metrics(result, test).test_pass_rate == 0.0
        assert gateway.budget.used == 0

    def test_n_truncates_to_available_pairs(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: "no code here"), Budget(10))
        result = run_aupair_inference(
            test, [make_pair("s1")], 5, gateway, evaluator, {"s1": make_problem("s1")}
        )
        assert len(result.per_problem["t1"]) == 1
        assert gateway.budget.used == 1

    def test_unhelpful_pair_scores_zero(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: "prose"), Budget(1))
        result = run_aupair_inference(
            test, [make_pair("s1")], 1, gateway, evaluator, {"s1": make_problem("s1")}
        )
        assert [a.score for a in result.per_problem["t1"]] == [0.0]


class TestBestOfN:
    def test_constant_oracle_identical_attempts(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: fenced(BROKEN_CODE)), Budget(3))
        result = run_best_of_n(test, 3, gateway, evaluator)
        codes = {a.code for a in result.per_problem["t1"]}
        assert len(codes) == 1
        assert result.strategy == STRATEGY_BEST_OF_N

    def test_call_indexed_oracle_perfect_at_third(self, evaluator):
        test = curated([make_problem("t1")])
        counter = {"n": 0}

        def handler(info, request):
            counter["n"] += 1
            return fenced(ECHO_CODE) if counter["n"] == 3 else fenced(BROKEN_CODE)

        gateway = Gateway(ScriptedBackend(handler), Budget(4))
        result = run_best_of_n(test, 4, gateway, evaluator)
        assert max(a.score for a in result.per_problem["t1"]) == 1.0
        assert compute_metrics(result, test).strict_accuracy == 1.0

    def test_n_one_is_single_repair_call(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: fenced(ECHO_CODE)), Budget(5))
        result = run_best_of_n(test, 1, gateway, evaluator)
        assert gateway.budget.used == 1
        assert len(result.per_problem["t1"]) == 1

    def test_n_must_be_positive(self, evaluator):
        with pytest.raises(ValueError):
            run_best_of_n(curated([make_problem("t1")]), 0, None, evaluator)


class TestSelfRepair:
    def test_default_budget_split(self, evaluator):
        # N=32 with f=4, r=7: exactly 32 calls per problem, 4 feedback + 28 repairs
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: fenced(BROKEN_CODE)), Budget(40))
        result = run_self_repair(test, 32, gateway, evaluator, f=4, r=7)
        assert gateway.budget.used == 32
        purposes = [parse_tag(r.request.tag).purpose for r in gateway.records]
        assert purposes.count("feedback") == 4
        assert purposes.count("repair") == 28
        assert len(result.per_problem["t1"]) == 28

    def test_minimal_split(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: fenced(BROKEN_CODE)), Budget(4))
        result = run_self_repair(test, 2, gateway, evaluator, f=1, r=1)
        assert gateway.budget.used == 2
        assert len(result.per_problem["t1"]) == 1

    def test_floor_allocation_leaves_budget_unused(self, evaluator):
        test = curated([make_problem("t1")])
        gateway = Gateway(ScriptedBackend(lambda i, r: fenced(BROKEN_CODE)), Budget(20))
        run_self_repair(test, 10, gateway, evaluator, f=3, r=2)
        assert gateway.budget.used == 9

    def test_invalid_combination_rejected(self, evaluator):
        with pytest.raises(ValueError, match="needs"):
            run_self_repair(curated([make_problem("t1")]), 4, None, evaluator, f=4, r=7)

    def test_feedback_text_conditions_repairs(self, evaluator):
        test = curated([make_problem("t1")])

        def handler(info, request):
            if info.purpose == "feedback":
                return "the loop bound is off by one"
            assert "the loop bound is off by one" in request.prompt
            return fenced(ECHO_CODE)

        gateway = Gateway(ScriptedBackend(handler), Budget(4))
        result = run_self_repair(test, 2, gateway, evaluator, f=1, r=1)
        assert result.per_problem["t1"][0].score == 1.0


class TestStrategyResult:
    def test_budget_cap_validated(self):
        with pytest.raises(ValueError, match="budget"):
            attempts_result({"p1": [0.5, 0.5]}, budget=1)

    def test_round_trip(self, tmp_path):
        result = attempts_result({"p1": [0.5, 1.0], "p2": [0.0]}, budget=2)
        path = tmp_path / "result.jsonl"
        result.save(path, provenance={"config_digest": "z"})
        loaded = StrategyResult.load(path)
        assert loaded.strategy == result.strategy
        assert loaded.budget_per_problem == 2
        assert {pid: [a.score for a in attempts] for pid, attempts in loaded.per_problem.items()} == {
            "p1": [0.5, 1.0],
            "p2": [0.0],
        }

    def test_code_persisted_for_analysis(self, tmp_path):
        result = StrategyResult(
            strategy="aupair",
            budget_per_problem=1,
            per_problem={"p1": (Attempt(id="p1/r0", code="def solve(s): pass", score=0.0),)},
        )
        path = tmp_path / "r.jsonl"
        result.save(path)
        assert StrategyResult.load(path).per_problem["p1"][0].code == "def solve(s): pass"

    def test_budget_audit_per_problem(self, evaluator):
        """Gateway call count per problem matches the strategy's budget formula."""
        problems = [make_problem("t1"), make_problem("t2")]
        test = curated(problems)
        gateway = Gateway(ScriptedBackend(lambda i, r: fenced(BROKEN_CODE)), Budget(100))
        run_best_of_n(test, 4, gateway, evaluator)
        by_problem = {}
        for record in gateway.records:
            info = parse_tag(record.request.tag)
            by_problem[info.problem_id] = by_problem.get(info.problem_id, 0) + 1
        assert by_problem == {"t1": 4, "t2": 4}
