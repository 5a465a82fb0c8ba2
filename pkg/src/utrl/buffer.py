"""Replay buffer of canonicalized valid solutions, one store per problem.

Solutions enter only after earning the maximum reward.  Before insertion
they are reduced on the syntax tree: comments and docstrings go away,
functions unreachable from the entry function go away, top-level statements
after the entry function go away, and pre-function statements survive only
if the retained code references their bindings.  Pretty-printing the reduced
tree gives the canonical text used for deduplication.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)


class CanonicalizationError(ValueError):
    """The solution cannot be parsed or reduced."""


def _names_loaded(node: ast.AST) -> set[str]:
    return {n.id for n in ast.walk(node) if isinstance(n, ast.Name)}


def _names_bound(stmt: ast.stmt) -> set[str]:
    """Names a top-level statement makes available to later code."""
    bound: set[str] = set()
    if isinstance(stmt, (ast.Import, ast.ImportFrom)):
        for alias in stmt.names:
            bound.add((alias.asname or alias.name).split(".")[0])
    elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
        bound.add(stmt.name)
    else:
        for n in ast.walk(stmt):
            if isinstance(n, ast.Name) and isinstance(n.ctx, (ast.Store, ast.Del)):
                bound.add(n.id)
            elif isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                bound.add(n.name)
    return bound


class _DocstringStripper(ast.NodeTransformer):
    def _strip(self, node):
        body = node.body
        if (
            body
            and isinstance(body[0], ast.Expr)
            and isinstance(body[0].value, ast.Constant)
            and isinstance(body[0].value.value, str)
        ):
            body = body[1:]
        node.body = body or [ast.Pass()]
        return node

    def visit_FunctionDef(self, node):
        self.generic_visit(node)
        return self._strip(node)

    def visit_AsyncFunctionDef(self, node):
        self.generic_visit(node)
        return self._strip(node)

    def visit_ClassDef(self, node):
        self.generic_visit(node)
        return self._strip(node)


def canonicalize(code: str, entry_function: str) -> str:
    """Reduce ``code`` around ``entry_function`` and pretty-print it.

    Idempotent; comments disappear with the tree round-trip, docstrings are
    stripped explicitly.  Reachability is call-graph-by-name from the entry
    function; dynamic dispatch beyond names is out of scope.
    """
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError) as exc:
        raise CanonicalizationError(f"code does not parse: {exc}") from exc

    top_defs = {
        stmt.name: stmt
        for stmt in tree.body
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef))
    }
    entry = top_defs.get(entry_function)
    if entry is None:
        raise CanonicalizationError(f"entry function {entry_function!r} not defined at top level")

    # reachable functions: closure over names referenced from the entry
    reachable = {entry_function}
    frontier = [entry]
    while frontier:
        referenced = _names_loaded(frontier.pop())
        for name in referenced & top_defs.keys():
            if name not in reachable:
                reachable.add(name)
                frontier.append(top_defs[name])

    entry_index = tree.body.index(entry)
    needed = set()
    for name in reachable:
        needed |= _names_loaded(top_defs[name])

    kept_pre: list[ast.stmt] = []
    for stmt in reversed(tree.body[:entry_index]):
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
            if stmt.name in reachable:
                kept_pre.append(stmt)
            continue
        if _names_bound(stmt) & needed:
            kept_pre.append(stmt)
            needed |= _names_loaded(stmt)
    kept_pre.reverse()

    kept_post = [
        stmt
        for stmt in tree.body[entry_index + 1 :]
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)) and stmt.name in reachable
    ]

    reduced = ast.Module(body=kept_pre + [entry] + kept_post, type_ignores=[])
    reduced = _DocstringStripper().visit(reduced)
    ast.fix_missing_locations(reduced)
    return ast.unparse(reduced) + "\n"


def completion_from_canonical(canonical: str, signature: str) -> str | None:
    """Re-express a canonical program as a completion of ``signature``.

    Pre-entry statements are hoisted into the body head (function-scoped);
    helpers defined after the entry function follow the body verbatim.
    Returns None when no faithful completion exists (decorated entry,
    helpers that need hoisted module-level bindings, signature mismatch).
    """
    try:
        tree = ast.parse(canonical)
    except (SyntaxError, ValueError):
        return None
    sig = signature.rstrip()
    entry_index = None
    for i, stmt in enumerate(tree.body):
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
            if stmt.decorator_list:
                continue
            header = ast.unparse(stmt).split("\n", 1)[0].rstrip()
            if header == sig:
                entry_index = i
                break
    if entry_index is None:
        return None
    entry = tree.body[entry_index]
    pre = tree.body[:entry_index]
    post = tree.body[entry_index + 1 :]
    if pre and post:
        hoisted = set().union(*(_names_bound(s) for s in pre))
        for stmt in post:
            if _names_loaded(stmt) & hoisted:
                return None  # helper would lose the module-level binding
    lines: list[str] = []
    for stmt in pre:
        lines.extend("    " + ln for ln in ast.unparse(stmt).split("\n"))
    body_text = ast.unparse(ast.Module(body=[entry], type_ignores=[]))
    lines.extend(body_text.split("\n")[1:])
    for stmt in post:
        lines.append("")
        lines.extend(ast.unparse(stmt).split("\n"))
    return "\n".join(lines) + "\n"


@dataclass
class BufferStats:
    adds: int = 0
    rejects: int = 0
    per_problem: dict[str, int] = field(default_factory=dict)


class ReplayBuffer:
    """Per-problem ordered stores of canonical solutions.

    ``verifier(problem, canonical_program) -> bool`` is consulted at
    insertion when provided: it should re-run the problem's tests against the
    canonical form, keeping the semantic-preservation invariant honest.
    """

    def __init__(self, verifier=None):
        self._store: dict[str, list[str]] = {}
        self._index: dict[str, set[str]] = {}
        self._epochs: dict[str, list[int]] = {}
        self.verifier = verifier
        self.stats = BufferStats()

    def register(self, problem_id: str) -> None:
        self._store.setdefault(problem_id, [])
        self._index.setdefault(problem_id, set())
        self._epochs.setdefault(problem_id, [])

    def problem_ids(self) -> list[str]:
        return list(self._store)

    def entries(self, problem_id: str) -> list[str]:
        return list(self._store.get(problem_id, []))

    def size(self, problem_id: str) -> int:
        return len(self._store.get(problem_id, ()))

    def total_size(self) -> int:
        return sum(len(v) for v in self._store.values())

    def add_if_new(self, problem, solution: str, epoch: int = 0) -> bool:
        """Canonicalize and insert unless an equal canonical form exists.

        ``solution`` is the full program text that already earned the
        maximum reward.  Canonicalization or verification failures skip the
        solution with a warning; training never crashes here.
        """
        self.register(problem.id)
        try:
            canonical = canonicalize(solution, problem.function_name)
        except CanonicalizationError as exc:
            log.warning("buffer: skipping solution for %s: %s", problem.id, exc)
            self.stats.rejects += 1
            return False
        if canonical in self._index[problem.id]:
            self.stats.rejects += 1
            return False
        if self.verifier is not None and not self.verifier(problem, canonical):
            log.warning(
                "buffer: canonical form for %s fails the problem's tests; skipped", problem.id
            )
            self.stats.rejects += 1
            return False
        self._store[problem.id].append(canonical)
        self._index[problem.id].add(canonical)
        self._epochs[problem.id].append(epoch)
        self.stats.adds += 1
        self.stats.per_problem[problem.id] = len(self._store[problem.id])
        return True

    def seed_from_problems(self, problems) -> int:
        """Insert curated seed solutions; returns the number inserted."""
        inserted = 0
        for problem in problems:
            self.register(problem.id)
            for solution in problem.seed_solutions:
                if self.add_if_new(problem, solution, epoch=0):
                    inserted += 1
        return inserted

    def sample_valid(self, problem_id: str, n: int, rng) -> list[str]:
        """Uniform sample with replacement; empty store yields an empty list."""
        entries = self._store.get(problem_id, [])
        if not entries:
            return []
        picks = rng.integers(0, len(entries), size=n)
        return [entries[int(i)] for i in picks]

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for problem_id, solutions in self._store.items():
                for solution, epoch in zip(solutions, self._epochs[problem_id]):
                    record = {
                        "problem_id": problem_id,
                        "canonical_solution": solution,
                        "epoch_added": epoch,
                    }
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path, verifier=None) -> "ReplayBuffer":
        buffer = cls(verifier=verifier)
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                pid = record["problem_id"]
                buffer.register(pid)
                canonical = record["canonical_solution"]
                if canonical not in buffer._index[pid]:
                    buffer._store[pid].append(canonical)
                    buffer._index[pid].add(canonical)
                    buffer._epochs[pid].append(record.get("epoch_added", 0))
                    buffer.stats.adds += 1
                    buffer.stats.per_problem[pid] = len(buffer._store[pid])
        return buffer
