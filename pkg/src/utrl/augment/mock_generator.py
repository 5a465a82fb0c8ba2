"""Deterministic stand-in for a search-based test generator, used in CI.

Invoked as ``python -m utrl.augment.mock_generator <workspace> <class_name>``.
Reads ``<class_name>.java`` from the workspace, looks up the method names it
finds in a canned suite table, and writes ``<class_name>Test.java`` with the
corresponding assertions.  Method names carrying ``crash`` make it exit
nonzero, exercising the failure path.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

# canned suites per method name; values are JUnit-style assertion statements
SUITES: dict[str, list[str]] = {
    "max": [
        'assertEquals(581, max(0, 581));',
        'assertEquals(-1, max(-1, -1));',
        'assertEquals(581, max(581, 373));',
        'assertEquals(0, max(0, 0));',
    ],
    "monkeyTrouble2": [
        'assertEquals("Yes", monkeyTrouble2(false, false));',
        'assertEquals("Yes", monkeyTrouble2(true, true));',
        'assertEquals("No", monkeyTrouble2(true, false));',
        'assertEquals("No", monkeyTrouble2(false, true));',
    ],
    "containsSubSequence": [
        'assertFalse(containsSubSequence("Qz\'UP3nQGY+yG|7", "Jf~vr"));',
        'assertTrue(containsSubSequence("Qz\'UP3nQGY+yG|7", "Qz\'UP3nQGY+yG|7"));',
    ],
    "addNumbers": [
        'assertEquals(5L, addNumbers(2L, 3L));',
        'assertEquals(0L, addNumbers(0L, 0L));',
        'assertEquals(-1L, addNumbers(4L, -5L));',
    ],
    "firstChar": [
        "assertEquals('a', firstChar(\"abc\"));",
        "assertEquals('z', firstChar(\"z\"));",
    ],
    "alwaysFalse": [
        'assertFalse(alwaysFalse(1));',
        'assertFalse(alwaysFalse(2));',
        'assertFalse(alwaysFalse(3));',
    ],
    "lonely": [
        'assertEquals(7, lonely(7));',
    ],
    "makeBox": [
        'assertEquals(new Box(1), makeBox(1));',
        'assertEquals(new Box(2), makeBox(2));',
    ],
}

_METHOD_RE = re.compile(r"\b(?:public|private|protected|static|final|\s)+[\w<>\[\],\s]+?(\w+)\s*\(")


def main(argv: list[str]) -> int:
    if len(argv) != 2:
        print("usage: mock_generator <workspace> <class_name>", file=sys.stderr)
        return 2
    workspace, class_name = Path(argv[0]), argv[1]
    source = workspace / f"{class_name}.java"
    if not source.exists():
        print(f"no source file {source}", file=sys.stderr)
        return 2
    text = source.read_text(encoding="utf-8")
    methods = [m for m in _METHOD_RE.findall(text) if m != class_name]
    if any("crash" in m.lower() for m in methods):
        print("simulated generator crash", file=sys.stderr)
        return 1
    tests = []
    for method in methods:
        tests.extend(SUITES.get(method, []))
    if not tests:
        return 0  # nothing generated; driver reports an empty suite
    body = "\n".join(f"        {t}" for t in tests)
    out = workspace / f"{class_name}Test.java"
    out.write_text(
        "import static org.junit.Assert.*;\n"
        f"public class {class_name}Test {{\n"
        "    public void generatedTests() {\n"
        f"{body}\n"
        "    }\n"
        "}\n",
        encoding="utf-8",
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
