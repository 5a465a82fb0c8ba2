"""Problem datasets: ingestion, validation, splits, and prompt composition.

File format is line-delimited JSON, one object per line, UTF-8, with fields
``id``, ``description``, ``signature``, ``tests`` (array of strings) and the
optional ``solutions``, ``source``, ``loss_weight``.  MBPP's official field
names are accepted through :data:`MBPP_FIELD_MAP`.
"""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

SOURCE_CURATED = "curated"
SOURCE_AUGMENTED = "augmented"

# official MBPP field names -> ours
MBPP_FIELD_MAP = {
    "task_id": "id",
    "text": "description",
    "test_list": "tests",
    "code": "solutions",
}

# Official MBPP id convention: 1-10 few-shot, 11-510 test, 511-600
# validation, 601-974 train.  The few-shot ids are folded into the test
# portion; on the canonical 964-record file this yields 374/90/500.
MBPP_TEST_IDS = range(1, 511)
MBPP_VALIDATION_IDS = range(511, 601)
MBPP_TRAIN_IDS = range(601, 975)
MBPP_EXPECTED_TOTAL = 964


class DatasetError(ValueError):
    """A dataset file or record is malformed."""


@dataclass
class Problem:
    """One training/evaluation unit: description, signature, and unit tests."""

    id: str
    description: str
    signature: str
    unit_tests: list[str]
    seed_solutions: list[str] = field(default_factory=list)
    source: str = SOURCE_CURATED
    loss_weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.loss_weight <= 1.0:
            raise DatasetError(
                f"problem {self.id!r}: loss_weight must be in (0, 1], got {self.loss_weight}"
            )
        if self.source not in (SOURCE_CURATED, SOURCE_AUGMENTED):
            raise DatasetError(f"problem {self.id!r}: unknown source {self.source!r}")
        if self.source == SOURCE_CURATED and self.loss_weight != 1.0:
            raise DatasetError(f"problem {self.id!r}: curated instances have loss_weight 1.0")

    @property
    def function_name(self) -> str:
        """Name declared by the signature header line."""
        m = re.match(r"\s*def\s+([A-Za-z_]\w*)\s*\(", self.signature)
        if not m:
            raise DatasetError(f"problem {self.id!r}: cannot parse signature {self.signature!r}")
        return m.group(1)


@dataclass
class DatasetSplit:
    train: list[Problem]
    validation: list[Problem]
    test: list[Problem]

    def __post_init__(self) -> None:
        ids = [p.id for part in (self.train, self.validation, self.test) for p in part]
        if len(ids) != len(set(ids)):
            raise DatasetError("problem ids must be unique across splits")

    def sizes(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "validation": len(self.validation),
            "test": len(self.test),
        }


def normalize_text(text: str) -> str:
    """Strip trailing whitespace per line and enforce one trailing newline."""
    lines = [line.rstrip() for line in text.split("\n")]
    out = "\n".join(lines)
    return out.rstrip("\n") + "\n"


def make_prompt(problem: Problem) -> str:
    """Compose the model prompt: description, newline, signature, newline.

    Generation is expected to begin at the function body.  An empty
    description elides its block entirely.
    """
    sig = problem.signature.rstrip()
    desc = normalize_text(problem.description).rstrip("\n")
    if not desc:
        return f"{sig}\n"
    return f"{desc}\n{sig}\n"


def _require(record: dict, key: str, index: int) -> object:
    if key not in record or record[key] in (None, ""):
        raise DatasetError(f"record {index}: missing field {key!r}")
    return record[key]


def _problem_from_record(record: dict, index: int) -> Problem:
    tests = _require(record, "tests", index)
    if not isinstance(tests, list) or not all(isinstance(t, str) for t in tests):
        raise DatasetError(f"record {index}: 'tests' must be an array of strings")
    solutions = record.get("solutions", [])
    if isinstance(solutions, str):
        solutions = [solutions]
    return Problem(
        id=str(_require(record, "id", index)),
        description=normalize_text(str(record.get("description", ""))).rstrip("\n"),
        signature=str(_require(record, "signature", index)).rstrip(),
        unit_tests=[t.strip() for t in tests],
        seed_solutions=[normalize_text(s) for s in solutions],
        source=record.get("source", SOURCE_CURATED),
        loss_weight=float(record.get("loss_weight", 1.0)),
    )


def _read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    if not records:
        raise DatasetError(f"{path}: no records")
    return records


def load_problems(path: str | Path) -> list[Problem]:
    """Load problems from a line-delimited file in the native format."""
    return [_problem_from_record(rec, i) for i, rec in enumerate(_read_jsonl(path))]


def save_problems(problems: list[Problem], path: str | Path) -> None:
    """Write problems in the native line-delimited format (load round-trips)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in problems:
            rec = {
                "id": p.id,
                "description": p.description,
                "signature": p.signature,
                "tests": p.unit_tests,
                "solutions": p.seed_solutions,
                "source": p.source,
                "loss_weight": p.loss_weight,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _signature_from_code(code: str, tests: list[str], index: int) -> str:
    """Derive the function header line from gold code.

    Picks the top-level ``def`` whose name appears in the tests, falling
    back to the first one.
    """
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        raise DatasetError(f"record {index}: gold code does not parse: {exc}") from exc
    defs = [n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    if not defs:
        raise DatasetError(f"record {index}: gold code defines no function")
    tests_text = "\n".join(tests)
    chosen = next((d for d in defs if re.search(rf"\b{re.escape(d.name)}\s*\(", tests_text)), defs[0])
    args = ast.unparse(chosen.args)
    return f"def {chosen.name}({args}):"


def _mbpp_record_to_native(record: dict, index: int) -> dict:
    native = {MBPP_FIELD_MAP.get(k, k): v for k, v in record.items()}
    code = native.get("solutions")
    tests = native.get("tests") or []
    if not isinstance(tests, list):
        raise DatasetError(f"record {index}: missing field 'test_list'")
    if "signature" not in native:
        if not code:
            raise DatasetError(f"record {index}: missing field 'code'")
        native["signature"] = _signature_from_code(str(code), [str(t) for t in tests], index)
    return native


def load_mbpp(path: str | Path) -> DatasetSplit:
    """Load an MBPP-format file and split by the official id ranges."""
    records = _read_jsonl(path)
    if len(records) != MBPP_EXPECTED_TOTAL:
        log.warning(
            "expected %d MBPP records, found %d; proceeding with the id-range rule",
            MBPP_EXPECTED_TOTAL,
            len(records),
        )
    train, validation, test = [], [], []
    for i, rec in enumerate(records):
        problem = _problem_from_record(_mbpp_record_to_native(rec, i), i)
        try:
            numeric_id = int(problem.id)
        except ValueError as exc:
            raise DatasetError(f"record {i}: MBPP id {problem.id!r} is not numeric") from exc
        if numeric_id in MBPP_TEST_IDS:
            test.append(problem)
        elif numeric_id in MBPP_VALIDATION_IDS:
            validation.append(problem)
        elif numeric_id in MBPP_TRAIN_IDS:
            train.append(problem)
        else:
            log.warning("record %d: id %d outside the official ranges, assigning to train", i, numeric_id)
            train.append(problem)
    return DatasetSplit(train=train, validation=validation, test=test)


def load_augmented(path: str | Path) -> list[Problem]:
    """Load augmentation instances: no seed solutions, source=augmented."""
    problems = []
    for i, rec in enumerate(_read_jsonl(path)):
        tests = rec.get("tests")
        if not tests:
            raise DatasetError(f"record {i}: augmented instance has no tests")
        rec = dict(rec)
        rec["source"] = SOURCE_AUGMENTED
        rec.pop("solutions", None)
        problems.append(_problem_from_record(rec, i))
    return problems


def validate_problems(problems: list[Problem], sandbox) -> list[str]:
    """Ingestion validation: signatures and seed solutions must compile.

    Returns a list of diagnostics, empty when everything checks out.
    """
    issues = []
    for p in problems:
        ok, diag = sandbox.check_compile(f"{p.signature}\n    pass\n")
        if not ok:
            issues.append(f"{p.id}: signature does not compile: {diag}")
            continue
        name = p.function_name
        for t in p.unit_tests:
            if not re.search(rf"\b{re.escape(name)}\b", t):
                issues.append(f"{p.id}: test does not reference {name!r}: {t}")
        for j, sol in enumerate(p.seed_solutions):
            ok, diag = sandbox.check_compile(sol)
            if not ok:
                issues.append(f"{p.id}: seed solution {j} does not compile: {diag}")
    return issues


def toy_suite_path() -> Path:
    """Path of the packaged 8-problem arithmetic suite."""
    return Path(resources.files("utrl").joinpath("data/toy_suite.jsonl"))  # type: ignore[arg-type]


def load_toy_suite() -> list[Problem]:
    return load_problems(toy_suite_path())
