"""Greedy solve rate and the unbiased pass@k estimator.

pass@k = 1 - C(n-c, k) / C(n, k), evaluated in the numerically stable
product form 1 - prod_{i=n-c+1..n} (1 - k/i).  The product is accumulated
in exact rational arithmetic and converted to float once, so results agree
bit-for-bit with exhaustive subset enumeration.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from .policy.base import DecodingParams, PolicyHandle


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that at least one of k draws from n samples (c correct) passes."""
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    product = Fraction(1)
    for i in range(n - c + 1, n + 1):
        product *= 1 - Fraction(k, i)
    return float(1 - product)


@dataclass
class ProblemEval:
    problem_id: str
    n_samples: int
    n_correct: int
    greedy_pass: bool


@dataclass
class EvalReport:
    per_problem: list[ProblemEval]
    greedy_rate: float
    pass_rates: dict[int, float]
    n_samples: int
    decoding: dict
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )

    def to_json(self) -> str:
        payload = asdict(self)
        payload["pass_rates"] = {str(k): v for k, v in self.pass_rates.items()}
        return json.dumps(payload, indent=2)

    def write(self, directory) -> None:
        """Structured report plus a flat table for spreadsheet import."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(self.to_json(), encoding="utf-8")
        lines = ["problem_id,n_samples,n_correct,greedy_pass"]
        for row in self.per_problem:
            lines.append(
                f"{row.problem_id},{row.n_samples},{row.n_correct},{int(row.greedy_pass)}"
            )
        (directory / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def solution_program(problem, completion: str) -> str:
    """The executable program: signature line plus the generated body."""
    return problem.signature.rstrip() + "\n" + completion


def solves(problem, completion: str, sandbox, cache: dict | None = None) -> bool:
    """Whether the completion passes every unit test of the problem."""
    program = solution_program(problem, completion)
    key = (program, tuple(problem.unit_tests))
    if cache is not None and key in cache:
        outcome = cache[key]
    else:
        outcome = sandbox.run_tests(program, problem.unit_tests)
        if cache is not None:
            cache[key] = outcome
    return outcome.all_passed()


def evaluate(
    problems,
    policy: PolicyHandle,
    sandbox,
    n_samples: int = 200,
    ks: list[int] | None = None,
    params: DecodingParams | None = None,
) -> EvalReport:
    """Sample ``n_samples`` solutions per problem plus one greedy decode.

    A problem counts as correct only when every unit test passes.  The
    aggregate pass@k averages per-problem estimates.  Never mutates policy
    or critic state.
    """
    from .dataset import make_prompt

    ks = ks or [1, 10, 100]
    params = params or DecodingParams()
    if any(k > n_samples for k in ks):
        raise ValueError(f"every k in {ks} must be <= n_samples={n_samples}")

    per_problem = []
    execution_cache: dict = {}
    for problem in problems:
        prompt = make_prompt(problem)
        trajectories = policy.sample_batch(prompt, n_samples, params)
        n_correct = sum(
            solves(problem, t.text, sandbox, execution_cache) for t in trajectories
        )
        greedy_traj = policy.greedy(prompt, params)
        greedy_pass = solves(problem, greedy_traj.text, sandbox, execution_cache)
        per_problem.append(
            ProblemEval(
                problem_id=problem.id,
                n_samples=n_samples,
                n_correct=n_correct,
                greedy_pass=greedy_pass,
            )
        )

    count = max(1, len(per_problem))
    greedy_rate = sum(p.greedy_pass for p in per_problem) / count
    pass_rates = {
        k: sum(pass_at_k(p.n_samples, p.n_correct, k) for p in per_problem) / count
        for k in ks
    }
    return EvalReport(
        per_problem=per_problem,
        greedy_rate=greedy_rate,
        pass_rates=pass_rates,
        n_samples=n_samples,
        decoding=asdict(params),
    )


def greedy_solve_rate(problems, policy: PolicyHandle, sandbox, params: DecodingParams | None = None, cache: dict | None = None) -> float:
    """Fraction of problems whose greedy decode passes all tests."""
    params = params or DecodingParams()
    if not problems:
        return 0.0
    hits = 0
    for problem in problems:
        from .dataset import make_prompt

        trajectory = policy.greedy(make_prompt(problem), params)
        hits += solves(problem, trajectory.text, sandbox, cache)
    return hits / len(problems)
