"""Prompt rendering and code extraction."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aupair.prompts import (
    EXAMPLE_SEPARATOR,
    GUESS_INSTRUCTION,
    OBJECTIVE_LINE,
    STYLE_INSTRUCTION,
    STYLE_NAIVE,
    NoCodeFoundError,
    RepairPromptSpec,
    build_guess_prompt,
    build_repair_prompt,
    build_zero_shot_repair_prompt,
    extract_code,
    render_score_percent,
)

from conftest import make_attempt, make_pair, make_problem


class TestGuessPrompt:
    def test_description_then_instruction_verbatim(self):
        problem = make_problem("p", description="Add two numbers.")
        prompt = build_guess_prompt(problem)
        assert prompt.startswith("Add two numbers.\n\n")
        assert GUESS_INSTRUCTION in prompt
        assert "def solve(s: str):" in prompt

    def test_byte_stable(self):
        problem = make_problem("p", description="Same thing.")
        assert build_guess_prompt(problem) == build_guess_prompt(problem)

    def test_description_containing_separator(self):
        problem = make_problem("p", description=f"tricky {EXAMPLE_SEPARATOR} inline")
        prompt = build_guess_prompt(problem)
        assert prompt.count(GUESS_INSTRUCTION) == 1

    def test_empty_description_rejected(self):
        problem = make_problem("p", description="x")
        object.__setattr__(problem, "description", "")
        with pytest.raises(ValueError):
            build_guess_prompt(problem)


def one_pair_spec(style=None):
    problem = make_problem("t", description="Target problem.")
    pair = make_pair("e", guess_score=0.25, fix_score=0.75)
    kwargs = {} if style is None else {"style": style}
    return RepairPromptSpec(
        in_context_pairs=(pair,),
        problems={"e": make_problem("e", description="Example problem.")},
        target_problem=problem,
        target_guess=make_attempt("t/g0", 0.5),
        **kwargs,
    )


class TestRepairPrompt:
    def test_scores_rendered_as_integer_percents(self):
        prompt = build_repair_prompt(one_pair_spec())
        assert "The score of this code is score(A(bad)) = 25." in prompt
        assert "The score of this code is score(A(good)) = 75." in prompt
        assert "The score of this solution is score(A(bad)) = 50" in prompt
        assert prompt.rstrip().endswith("The score of this solution is score(A(good)) = 100")

    def test_naive_style_has_no_instruction_or_scores(self):
        prompt = build_repair_prompt(one_pair_spec(STYLE_NAIVE))
        assert "experienced software developer" not in prompt
        assert OBJECTIVE_LINE not in prompt
        assert "score(" not in prompt
        assert "Example problem." in prompt
        assert "Target problem." in prompt

    def test_instruction_style_has_header_but_no_scores(self):
        prompt = build_repair_prompt(one_pair_spec(STYLE_INSTRUCTION))
        assert "experienced software developer" in prompt
        assert OBJECTIVE_LINE in prompt
        assert "score(" not in prompt

    def test_two_pairs_appear_in_order_once_each(self):
        pair_a = make_pair("a", 0.0, 0.5)
        pair_b = make_pair("b", 0.25, 1.0)
        spec = RepairPromptSpec(
            in_context_pairs=(pair_a, pair_b),
            problems={
                "a": make_problem("a", description="Question A?"),
                "b": make_problem("b", description="Question B?"),
            },
            target_problem=make_problem("t", description="Question T?"),
            target_guess=make_attempt("t/g0", 0.0),
        )
        prompt = build_repair_prompt(spec)
        assert prompt.count("Question A?") == 1
        assert prompt.count("Question B?") == 1
        assert prompt.index("Question A?") < prompt.index("Question B?")
        assert "Example 1:" in prompt and "Example 2:" in prompt

    def test_separator_precedes_target(self):
        prompt = build_repair_prompt(one_pair_spec())
        assert prompt.index(EXAMPLE_SEPARATOR) < prompt.index("Target problem.")
        assert prompt.index("Example problem.") < prompt.index(EXAMPLE_SEPARATOR)

    def test_empty_in_context_pairs_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            RepairPromptSpec(
                in_context_pairs=(),
                problems={},
                target_problem=make_problem("t"),
                target_guess=make_attempt("t/g0", 0.0),
            )

    def test_missing_example_problem_rejected(self):
        with pytest.raises(ValueError, match="no Problem provided"):
            RepairPromptSpec(
                in_context_pairs=(make_pair("e"),),
                problems={},
                target_problem=make_problem("t"),
                target_guess=make_attempt("t/g0", 0.0),
            )

    def test_byte_stable(self):
        assert build_repair_prompt(one_pair_spec()) == build_repair_prompt(one_pair_spec())

    @given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    def test_rendered_percent_matches_half_up_rounding(self, fraction):
        percent = render_score_percent(fraction)
        assert 0 <= percent <= 100
        assert abs(percent - 100 * fraction) <= 0.5

    def test_half_up_rounding(self):
        assert render_score_percent(0.005) == 1
        assert render_score_percent(0.015) == 2
        assert render_score_percent(0.25) == 25
        assert render_score_percent(1.0) == 100


class TestZeroShotPrompt:
    def test_contains_instruction_problem_and_guess(self):
        prompt = build_zero_shot_repair_prompt(
            make_problem("t", description="Fix me."), make_attempt("t/g0", 0.25, code="def solve(s): pass")
        )
        assert "experienced software developer" in prompt
        assert "Fix me." in prompt
        assert "def solve(s): pass" in prompt
        assert EXAMPLE_SEPARATOR not in prompt
        assert "Example 1:" not in prompt


class TestExtractCode:
    def test_single_fence(self):
        assert extract_code("text\n```python\ncode here\n```\nmore") == "code here"

    def test_last_fence_wins(self):
        response = "```python\nfirst\n```\nprose\n```python\nsecond\n```\n"
        assert extract_code(response) == "second"

    def test_pure_prose_errors(self):
        with pytest.raises(NoCodeFoundError):
            extract_code("I am unable to help with that.")

    def test_suffix_fallback_on_bare_definition(self):
        response = "Here is my solution:\ndef solve(s):\n    print(s)\n    # done"
        assert extract_code(response) == "def solve(s):\n    print(s)\n    # done"

    def test_fence_round_trip(self):
        block = "def solve(s):\n    x = 1\n    print(x)"
        assert extract_code(f"```python\n{block}\n```") == block

    @given(st.text(alphabet=st.characters(blacklist_characters="`"), min_size=1, max_size=80))
    def test_fence_round_trip_property(self, block):
        body = block.rstrip("\n")
        extracted = extract_code(f"```python\n{body}\n```")
        assert extracted == body.rstrip("\n")
