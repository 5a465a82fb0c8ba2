"""End-to-end augmentation: extract, generate, filter, convert, validate.

Emits instances in the dataset module's line-delimited format plus a
provenance sidecar mapping each instance to its source function and
generator diagnostics.  Instance ids are content hashes, so re-running over
the same corpus reproduces the same file.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..dataset import Problem, make_prompt
from ..policy.base import DecodingParams, PolicyHandle
from .convert import ConversionError, convert_assertion, convert_signature
from .extract import extract_functions
from .testgen import (
    GeneratedSuite,
    GenerationFailure,
    compile_source_function,
    filter_suite,
    generate_tests,
)

log = logging.getLogger(__name__)


@dataclass
class AugmentedInstance:
    description: str
    signature: str
    assertions: list[str]
    source_origin: str
    source_signature: str
    generator_diagnostics: str = ""

    @property
    def instance_id(self) -> str:
        digest = hashlib.sha256(
            "\x1e".join([self.description, self.signature, *self.assertions]).encode("utf-8")
        ).hexdigest()
        return f"aug-{digest[:12]}"


@dataclass
class PipelineResult:
    instances: list[AugmentedInstance] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def bump(self, key: str) -> None:
        self.counters[key] = self.counters.get(key, 0) + 1


def _stub_program(signature: str, assertion: str) -> str:
    return f"{signature}\n    pass\n{assertion}\n"


def convert_suite(
    suite: GeneratedSuite,
    sandbox,
    result: PipelineResult,
    float_tolerance: float | None = None,
) -> AugmentedInstance | None:
    """Steps 5-6 plus validation for one generated suite."""
    try:
        signature = convert_signature(suite.function.signature)
    except ConversionError as exc:
        result.bump("dropped_signature")
        result.failures.append({"origin": suite.function.origin, "reason": str(exc)})
        return None
    assertions = []
    for test in suite.tests:
        try:
            assertions.append(convert_assertion(test, float_tolerance))
        except ConversionError:
            result.bump("dropped_assertions")
    if len(assertions) < 2:
        result.bump("dropped_too_few_converted")
        return None
    expected = {a.rsplit("==", 1)[-1].strip() for a in assertions if "==" in a}
    if len(expected) < 2:
        result.bump("dropped_same_outcome_converted")
        return None
    for assertion in assertions:
        ok, diag = sandbox.check_compile(_stub_program(signature, assertion))
        if not ok:
            result.bump("dropped_compile_check")
            result.failures.append(
                {"origin": suite.function.origin, "reason": f"compile check: {diag}"}
            )
            return None
    return AugmentedInstance(
        description=suite.function.description,
        signature=signature,
        assertions=assertions,
        source_origin=suite.function.origin,
        source_signature=suite.function.signature,
        generator_diagnostics=suite.diagnostics,
    )


def run_pipeline(
    corpus_root,
    sandbox,
    generator_command: list[str] | None = None,
    source_compile_command: list[str] | None = None,
    time_budget_s: int = 60,
    min_tokens: int = 10,
    max_tokens: int = 512,
    english_detector=None,
    float_tolerance: float | None = None,
) -> PipelineResult:
    result = PipelineResult()
    functions = extract_functions(
        corpus_root,
        min_tokens=min_tokens,
        max_tokens=max_tokens,
        english_detector=english_detector,
    )
    result.counters["extracted"] = len(functions)
    seen_ids: set[str] = set()
    for index, fn in enumerate(functions):
        if not compile_source_function(fn, source_compile_command):
            result.bump("dropped_source_compile")
            continue
        outcome = generate_tests(
            fn, generator_command, time_budget_s=time_budget_s, index=index
        )
        if isinstance(outcome, GenerationFailure):
            result.bump("dropped_generation")
            result.failures.append({"origin": fn.origin, "reason": outcome.reason})
            continue
        suite = filter_suite(outcome)
        if suite is None:
            result.bump("dropped_suite_filter")
            continue
        instance = convert_suite(suite, sandbox, result, float_tolerance)
        if instance is None:
            continue
        if instance.instance_id in seen_ids:
            result.bump("dropped_duplicate")
            continue
        seen_ids.add(instance.instance_id)
        result.instances.append(instance)
    result.counters["emitted"] = len(result.instances)
    return result


def write_instances(
    result: PipelineResult, out_path, loss_weight: float = 1.0
) -> None:
    """Dataset-format instances plus a .provenance.jsonl sidecar."""
    out_path = Path(out_path)
    with out_path.open("w", encoding="utf-8") as fh:
        for instance in result.instances:
            record = {
                "id": instance.instance_id,
                "description": instance.description,
                "signature": instance.signature,
                "tests": instance.assertions,
                "source": "augmented",
                "loss_weight": loss_weight,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    sidecar = out_path.with_suffix(out_path.suffix + ".provenance.jsonl")
    with sidecar.open("w", encoding="utf-8") as fh:
        for instance in result.instances:
            fh.write(
                json.dumps(
                    {
                        "id": instance.instance_id,
                        "source_file": instance.source_origin,
                        "source_signature": instance.source_signature,
                        "generator_diagnostics": instance.generator_diagnostics,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def solvability_filter(
    instances: list[Problem],
    policy: PolicyHandle,
    sandbox,
    n: int = 100,
    params: DecodingParams | None = None,
) -> tuple[list[Problem], list[Problem]]:
    """Keep instances the policy can solve at least once in ``n`` samples.

    The rejected set is returned separately; it remains useful as a held-out
    test set of problems the policy has never solved.
    """
    from ..evaluator import solves

    params = params or DecodingParams()
    kept, rejected = [], []
    cache: dict = {}
    for problem in instances:
        prompt = make_prompt(problem)
        trajectories = policy.sample_batch(prompt, n, params)
        if any(solves(problem, t.text, sandbox, cache) for t in trajectories):
            kept.append(problem)
        else:
            rejected.append(problem)
    return kept, rejected
