"""Driver for an external search-based unit-test generator.

The generator is described by a command template with ``{workspace}``,
``{class_name}`` and ``{time_budget}`` placeholders.  The driver writes the
source function into a scratch workspace as ``<ClassName>.java``, runs the
command, then scans emitted ``*Test*.java`` files for assertion statements.
A deterministic mock generator ships for CI (``utrl.augment.mock_generator``).
"""

from __future__ import annotations

import logging
import re
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .convert import ConversionError, expected_value_text
from .extract import SourceFunction

log = logging.getLogger(__name__)

_ASSERT_RE = re.compile(r"\b(assertEquals|assertTrue|assertFalse)\s*\(")

MOCK_GENERATOR_TEMPLATE = [
    sys.executable,
    "-m",
    "utrl.augment.mock_generator",
    "{workspace}",
    "{class_name}",
]


@dataclass
class GeneratedSuite:
    function: SourceFunction
    tests: list[str]
    diagnostics: str = ""


@dataclass
class GenerationFailure:
    function: SourceFunction
    reason: str


def _class_name_for(fn: SourceFunction, index: int) -> str:
    m = re.search(r"(\w+)\s*\(", fn.signature)
    base = m.group(1) if m else "Fn"
    return base[:1].upper() + base[1:] + f"Fixture{index}"


def _balanced_call(text: str, start: int) -> str | None:
    """Capture ``assertXxx(...)`` from ``start`` through its closing paren."""
    depth = 0
    in_string = None
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if ch == "\\":
                continue
            if ch == in_string:
                in_string = None
        elif ch in "\"'":
            in_string = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def parse_emitted_assertions(workspace: Path) -> list[str]:
    assertions: list[str] = []
    for path in sorted(workspace.rglob("*Test*.java")):
        text = path.read_text(encoding="utf-8", errors="replace")
        for match in _ASSERT_RE.finditer(text):
            call = _balanced_call(text, match.start())
            if call:
                assertions.append(" ".join(call.split()))
    return assertions


def compile_source_function(fn: SourceFunction, compile_command: list[str] | None) -> bool:
    """Optional source-language compile gate; skipped when unconfigured."""
    if not compile_command:
        return True
    with tempfile.TemporaryDirectory(prefix="utrl-srccheck-") as scratch:
        class_name = _class_name_for(fn, 0)
        source = Path(scratch) / f"{class_name}.java"
        source.write_text(f"public class {class_name} {{\n{fn.code}\n}}\n", encoding="utf-8")
        argv = [arg.format(workspace=scratch, class_name=class_name) for arg in compile_command]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=60)
        except (OSError, subprocess.TimeoutExpired):
            return False
        return proc.returncode == 0


def generate_tests(
    fn: SourceFunction,
    generator_command: list[str] | None = None,
    time_budget_s: int = 60,
    index: int = 0,
    keep_workspace: bool = False,
) -> GeneratedSuite | GenerationFailure:
    """Run the generator for one source function in a scratch workspace."""
    command = generator_command or MOCK_GENERATOR_TEMPLATE
    workspace = Path(tempfile.mkdtemp(prefix="utrl-testgen-"))
    class_name = _class_name_for(fn, index)
    try:
        source = workspace / f"{class_name}.java"
        source.write_text(f"public class {class_name} {{\n{fn.code}\n}}\n", encoding="utf-8")
        argv = [
            arg.format(
                workspace=str(workspace), class_name=class_name, time_budget=time_budget_s
            )
            for arg in command
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=time_budget_s * 2)
        except subprocess.TimeoutExpired:
            return GenerationFailure(fn, "generator timed out")
        except OSError as exc:
            return GenerationFailure(fn, f"generator could not run: {exc}")
        if proc.returncode != 0:
            return GenerationFailure(fn, f"generator exited {proc.returncode}: {proc.stderr[:200]}")
        tests = parse_emitted_assertions(workspace)
        if not tests:
            return GenerationFailure(fn, "generator emitted no assertions")
        return GeneratedSuite(function=fn, tests=tests, diagnostics=proc.stderr.strip())
    finally:
        if not keep_workspace:
            shutil.rmtree(workspace, ignore_errors=True)


def filter_suite(suite: GeneratedSuite) -> GeneratedSuite | None:
    """Reject suites with fewer than two tests or a single shared outcome."""
    if len(suite.tests) < 2:
        return None
    expected: set[str] = set()
    for test in suite.tests:
        try:
            expected.add(expected_value_text(test))
        except ConversionError:
            expected.add(f"<unsupported:{test}>")
    if len(expected) < 2:
        return None
    return suite
