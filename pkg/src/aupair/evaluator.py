"""Unit-test scoring of candidate programs.

Each test case is executed in its own runner subprocess (the ``aupair-runner``
contract: ``argv = [code_file, input_file]``, exit 0 = completed, 1 = guest
exception, 2 = contract violation).  The orchestrator enforces the wall
timeout by killing the process group, caps output size, and compares
normalized stdout against the expected output.
"""

from __future__ import annotations

import importlib.util
import logging
import os
import shutil
import signal
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .model import Problem

logger = logging.getLogger(__name__)

VERDICT_PASS = "pass"
VERDICT_WRONG_OUTPUT = "wrong_output"
VERDICT_RUNTIME_ERROR = "runtime_error"
VERDICT_TIMEOUT = "timeout"
VERDICT_PROTOCOL_ERROR = "protocol_error"

VERDICTS = (
    VERDICT_PASS,
    VERDICT_WRONG_OUTPUT,
    VERDICT_RUNTIME_ERROR,
    VERDICT_TIMEOUT,
    VERDICT_PROTOCOL_ERROR,
)


class RunnerMissingError(RuntimeError):
    """The runner executable could not be found; an environment problem, not a verdict."""


def normalize_output(raw: str) -> str:
    """Canonicalize program output for comparison.

    CRLF becomes LF, trailing whitespace is stripped from each line, and
    trailing blank lines are dropped.  Leading whitespace is preserved: it
    may be semantic, while trailing whitespace is the common incidental
    difference between judges.
    """
    lines = [line.rstrip() for line in raw.replace("\r\n", "\n").split("\n")]
    return "\n".join(lines).rstrip("\n")


def outputs_match(actual: str, expected: str, numeric_tolerance: float | None = None) -> bool:
    """Normalized exact match, with an optional per-dataset numeric comparator.

    When a tolerance is configured, the outputs may also match token by
    token with numeric tokens compared within the tolerance; everything else
    stays exact.  Off by default.
    """
    actual_norm, expected_norm = normalize_output(actual), normalize_output(expected)
    if actual_norm == expected_norm:
        return True
    if numeric_tolerance is None:
        return False
    actual_tokens, expected_tokens = actual_norm.split(), expected_norm.split()
    if len(actual_tokens) != len(expected_tokens):
        return False
    for got, want in zip(actual_tokens, expected_tokens):
        if got == want:
            continue
        try:
            if abs(float(got) - float(want)) <= numeric_tolerance:
                continue
        except ValueError:
            pass
        return False
    return True


@dataclass(frozen=True)
class RunLimits:
    """Per-test execution limits; breaching one fails that test only."""

    wall_timeout: float = 10.0
    max_output_bytes: int = 1 << 20

    def __post_init__(self) -> None:
        if self.wall_timeout <= 0:
            raise ValueError("wall_timeout must be positive")
        if self.max_output_bytes <= 0:
            raise ValueError("max_output_bytes must be positive")


@dataclass(frozen=True)
class EvalOutcome:
    """Ordered per-test verdicts and the resulting pass fraction."""

    verdicts: tuple[str, ...]
    score: float

    def __post_init__(self) -> None:
        if not self.verdicts:
            raise ValueError("outcome needs at least one verdict")
        for verdict in self.verdicts:
            if verdict not in VERDICTS:
                raise ValueError(f"unknown verdict {verdict!r}")
        expected = self.verdicts.count(VERDICT_PASS) / len(self.verdicts)
        if self.score != expected:
            raise ValueError(f"score {self.score} does not match verdicts (want {expected})")

    @classmethod
    def from_verdicts(cls, verdicts: Sequence[str]) -> "EvalOutcome":
        verdicts = tuple(verdicts)
        return cls(verdicts=verdicts, score=verdicts.count(VERDICT_PASS) / len(verdicts))


def resolve_runner_command(explicit: Sequence[str] | None = None) -> list[str]:
    """Locate the runner executable, preferring an explicit override.

    Falls back to ``python -m aupair_runner`` when the runner package is
    importable, then to an ``aupair-runner`` script on PATH.
    """
    if explicit:
        return list(explicit)
    if importlib.util.find_spec("aupair_runner") is not None:
        return [sys.executable, "-m", "aupair_runner"]
    script = shutil.which("aupair-runner")
    if script:
        return [script]
    raise RunnerMissingError(
        "no candidate runner found: install the aupair-runner package or configure runner_cmd"
    )


def _run_one_test(
    runner_cmd: list[str],
    code_file: Path,
    input_text: str,
    expected_output: str,
    limits: RunLimits,
    workdir: Path,
    numeric_tolerance: float | None = None,
) -> str:
    workdir.mkdir()
    input_file = workdir / "input.txt"
    input_file.write_text(input_text, encoding="utf-8")
    out_path = workdir / "stdout.bin"
    err_path = workdir / "stderr.bin"

    with open(out_path, "wb") as out_fh, open(err_path, "wb") as err_fh:
        proc = subprocess.Popen(
            [*runner_cmd, str(code_file), str(input_file)],
            stdout=out_fh,
            stderr=err_fh,
            cwd=workdir,
            start_new_session=True,
        )
        try:
            returncode = proc.wait(timeout=limits.wall_timeout)
        except subprocess.TimeoutExpired:
            _kill_process_group(proc)
            return VERDICT_TIMEOUT

    if returncode == 1:
        _log_guest_stderr(err_path)
        return VERDICT_RUNTIME_ERROR
    if returncode != 0:
        _log_guest_stderr(err_path)
        return VERDICT_PROTOCOL_ERROR

    if out_path.stat().st_size > limits.max_output_bytes:
        return VERDICT_WRONG_OUTPUT
    stdout = out_path.read_bytes().decode("utf-8", errors="replace")
    if outputs_match(stdout, expected_output, numeric_tolerance):
        return VERDICT_PASS
    return VERDICT_WRONG_OUTPUT


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()
    proc.wait()


def _log_guest_stderr(err_path: Path) -> None:
    if logger.isEnabledFor(logging.DEBUG):
        text = err_path.read_bytes()[:4096].decode("utf-8", errors="replace").strip()
        if text:
            logger.debug("guest stderr: %s", text)


def score_code(
    code: str,
    problem: "Problem",
    limits: RunLimits = RunLimits(),
    runner_cmd: Sequence[str] | None = None,
    max_workers: int = 1,
    numeric_tolerance: float | None = None,
) -> EvalOutcome:
    """Run every test of the problem against the code and compute the pass fraction.

    One runner invocation per test; a crash or timeout affects only its own
    test.  Verdict order matches the problem's test order regardless of
    worker count.
    """
    if not problem.tests:
        raise ValueError(f"problem {problem.id} has no tests")
    cmd = resolve_runner_command(runner_cmd)

    with tempfile.TemporaryDirectory(prefix="aupair-eval-") as tmp:
        root = Path(tmp)
        code_file = root / "candidate.py"
        code_file.write_text(code, encoding="utf-8")

        def run(index_test: tuple[int, object]) -> str:
            index, test = index_test
            return _run_one_test(
                cmd,
                code_file,
                test.input,
                test.expected_output,
                limits,
                root / f"t{index}",
                numeric_tolerance,
            )

        tasks = list(enumerate(problem.tests))
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                verdicts = list(pool.map(run, tasks))
        else:
            verdicts = [run(task) for task in tasks]

    return EvalOutcome.from_verdicts(verdicts)


@dataclass(frozen=True)
class Evaluator:
    """Bundles run limits and runner resolution for repeated scoring calls."""

    limits: RunLimits = RunLimits()
    runner_cmd: tuple[str, ...] = field(default_factory=tuple)
    max_workers: int = 1
    numeric_tolerance: float | None = None

    def score(self, code: str, problem: "Problem") -> EvalOutcome:
        return score_code(
            code,
            problem,
            limits=self.limits,
            runner_cmd=self.runner_cmd or None,
            max_workers=self.max_workers,
            numeric_tolerance=self.numeric_tolerance,
        )
