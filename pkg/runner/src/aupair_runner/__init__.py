"""Process-per-test runner for candidate solutions.

Executes one candidate source file against one input file:

    aupair-runner <code_file> <input_file>

The candidate must define a callable ``solve`` taking a single string
argument; it receives the full contents of the input file.  Whatever the
candidate prints is relayed to stdout byte for byte, and nothing else is
ever written there.  Diagnostics (tracebacks, usage errors) go to stderr.

Exit codes:
    0  completed (the candidate may still be wrong; the caller judges output)
    1  exception raised inside solve()
    2  contract violation: unreadable/unparseable source, top-level code
       raising at import, missing or duplicate solve definition, or a solve
       that cannot accept one positional argument

Timeouts are the caller's job: the orchestrating process is expected to
kill this one when a wall-clock limit expires.
"""

from __future__ import annotations

import ast
import contextlib
import inspect
import io
import sys
import traceback
from dataclasses import dataclass

STATUS_OK = "ok"
STATUS_GUEST_EXCEPTION = "guest_exception"
STATUS_CONTRACT_VIOLATION = "contract_violation"

EXIT_CODES = {
    STATUS_OK: 0,
    STATUS_GUEST_EXCEPTION: 1,
    STATUS_CONTRACT_VIOLATION: 2,
}


@dataclass(frozen=True)
class RunResult:
    """Outcome of one candidate invocation."""

    exit_status: str
    stdout: bytes
    stderr: bytes

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.exit_status]


class _CaptureStreams:
    """Redirect sys.stdout/sys.stderr into byte buffers.

    The replacement streams are TextIOWrappers over BytesIO so that guests
    using ``sys.stdout.buffer`` keep working.
    """

    def __init__(self) -> None:
        self._out_raw = io.BytesIO()
        self._err_raw = io.BytesIO()
        self._out = io.TextIOWrapper(self._out_raw, encoding="utf-8", newline="", write_through=True)
        self._err = io.TextIOWrapper(self._err_raw, encoding="utf-8", newline="", write_through=True)

    def __enter__(self) -> "_CaptureStreams":
        self._saved = (sys.stdout, sys.stderr)
        sys.stdout, sys.stderr = self._out, self._err
        return self

    def __exit__(self, *exc_info: object) -> None:
        sys.stdout, sys.stderr = self._saved

    def _drain(self, wrapper: io.TextIOWrapper, raw: io.BytesIO) -> bytes:
        with contextlib.suppress(ValueError):
            wrapper.flush()
        with contextlib.suppress(ValueError):
            return raw.getvalue()
        return b""

    def stdout_bytes(self) -> bytes:
        return self._drain(self._out, self._out_raw)

    def stderr_bytes(self) -> bytes:
        return self._drain(self._err, self._err_raw)

    def write_stderr(self, text: str) -> None:
        with contextlib.suppress(ValueError):
            self._err.write(text)


def _count_solve_defs(tree: ast.Module) -> int:
    return sum(
        1
        for node in tree.body
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == "solve"
    )


def run_candidate(code_file: str, input_file: str) -> RunResult:
    """Load a candidate source file and call its solve() on the input text."""
    try:
        with open(code_file, "r", encoding="utf-8") as fh:
            source = fh.read()
        with open(input_file, "r", encoding="utf-8") as fh:
            input_text = fh.read()
    except OSError as exc:
        return RunResult(STATUS_CONTRACT_VIOLATION, b"", f"cannot read file: {exc}\n".encode())

    try:
        tree = ast.parse(source, filename=code_file)
    except SyntaxError:
        return RunResult(STATUS_CONTRACT_VIOLATION, b"", traceback.format_exc().encode())

    if _count_solve_defs(tree) > 1:
        return RunResult(STATUS_CONTRACT_VIOLATION, b"", b"duplicate top-level solve definition\n")

    namespace: dict[str, object] = {"__name__": "__candidate__", "__file__": code_file}
    with _CaptureStreams() as cap:
        try:
            exec(compile(tree, code_file, "exec"), namespace)  # noqa: S102 - running the candidate is the point
        except BaseException:
            cap.write_stderr(traceback.format_exc())
            return RunResult(STATUS_CONTRACT_VIOLATION, cap.stdout_bytes(), cap.stderr_bytes())

        solve = namespace.get("solve")
        if not callable(solve):
            cap.write_stderr("no callable named solve was defined\n")
            return RunResult(STATUS_CONTRACT_VIOLATION, cap.stdout_bytes(), cap.stderr_bytes())
        try:
            inspect.signature(solve).bind(input_text)
        except TypeError:
            cap.write_stderr("solve() must accept exactly one positional argument\n")
            return RunResult(STATUS_CONTRACT_VIOLATION, cap.stdout_bytes(), cap.stderr_bytes())
        except ValueError:
            pass  # no retrievable signature (builtins); let the call decide

        try:
            solve(input_text)  # return value intentionally ignored; only prints count
        except BaseException:
            cap.write_stderr(traceback.format_exc())
            return RunResult(STATUS_GUEST_EXCEPTION, cap.stdout_bytes(), cap.stderr_bytes())

    return RunResult(STATUS_OK, cap.stdout_bytes(), cap.stderr_bytes())


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 2:
        sys.stderr.write("usage: aupair-runner <code_file> <input_file>\n")
        return EXIT_CODES[STATUS_CONTRACT_VIOLATION]
    result = run_candidate(args[0], args[1])
    sys.stdout.buffer.write(result.stdout)
    sys.stdout.buffer.flush()
    sys.stderr.buffer.write(result.stderr)
    sys.stderr.buffer.flush()
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover - exercised via subprocess
    raise SystemExit(main())
