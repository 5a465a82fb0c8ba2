"""Training loop: generation, reward assignment, buffer mixing, updates.

Each epoch runs four phases in order: (a) per problem, sample solutions,
execute them, assign rewards, mix in an equal number of buffer replays at
maximum reward, and bank newly found valid solutions; (b) minibatch policy
ascent steps with critic-baselined advantages; (c) minibatch critic
regression steps on the same epoch data; (d) one KL-coefficient controller
step, then a greedy validation pass.  The best-validation checkpoint is
tracked throughout.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import reward as reward_mod
from .buffer import ReplayBuffer, completion_from_canonical
from .critic import CriticModel, advantage
from .dataset import DatasetSplit, Problem, make_prompt
from .evaluator import greedy_solve_rate, solution_program
from .policy.base import (
    ORIGIN_BUFFER,
    DecodingParams,
    PolicyHandle,
    Trajectory,
    UpdateItem,
)
from .reward import RewardConfig
from .sandbox import ExecutionLimits, Sandbox, SandboxConfigError
from .seeding import substream

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
BEST_POINTER_FILE = "best"
STATE_FILE = "state.json"


class TrainerAbort(RuntimeError):
    """The run cannot continue; state has been saved where possible."""


@dataclass
class TrainConfig:
    max_epochs: int = 100
    samples_per_problem: int = 8
    minibatch_size: int = 32
    policy_lr: float = 5e-7
    critic_lr: float = 1e-6
    decoding: DecodingParams = field(default_factory=DecodingParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    seed: int = 0
    buffer_enabled: bool = True
    validate_every: int = 1
    execution_workers: int = 4
    keep_all_checkpoints: bool = False

    def __post_init__(self) -> None:
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if self.samples_per_problem < 1:
            raise ValueError("samples_per_problem must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")
        if self.policy_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.validate_every < 1:
            raise ValueError("validate_every must be positive")
        if self.execution_workers < 1:
            raise ValueError("execution_workers must be positive")


@dataclass
class EpochEntry:
    trajectory: Trajectory
    problem: Problem
    weight: float


@dataclass
class EpochBatch:
    entries: list[EpochEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RunRecord:
    epochs: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    checkpoints: dict[int, str] = field(default_factory=dict)
    best_epoch: int | None = None

    def append(self, row: dict, run_dir: Path | None) -> None:
        self.epochs.append(row)
        if run_dir is not None:
            with (run_dir / METRICS_FILE).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    @staticmethod
    def load_metrics(run_dir) -> list[dict]:
        rows = []
        with (Path(run_dir) / METRICS_FILE).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
        return rows


def select_checkpoint(run: RunRecord) -> int:
    """Epoch with the best validation greedy score; ties go to the earliest."""
    scored = [
        (row["epoch"], row["validation_greedy"])
        for row in run.epochs
        if row.get("validation_greedy") is not None
    ]
    if not scored:
        raise ValueError("no validation evaluations recorded")
    best_epoch, _ = max(scored, key=lambda pair: (pair[1], -pair[0]))
    return best_epoch


class ExecutionCache:
    """Memoizes deterministic run_tests calls; safe because identical

    (code, tests, limits) triples yield identical outcomes."""

    def __init__(self, sandbox: Sandbox):
        self.sandbox = sandbox
        self._cache: dict = {}

    def run(self, program: str, tests: list[str]):
        key = (program, tuple(tests))
        outcome = self._cache.get(key)
        if outcome is None:
            outcome = self.sandbox.run_tests(program, tests)
            self._cache[key] = outcome
        return outcome


class Trainer:
    def __init__(
        self,
        problems: list[Problem] | DatasetSplit,
        policy: PolicyHandle,
        critic: CriticModel,
        buffer: ReplayBuffer,
        config: TrainConfig,
        sandbox: Sandbox | None = None,
        run_dir: str | Path | None = None,
    ):
        if isinstance(problems, DatasetSplit):
            self.train_problems = problems.train
            self.validation_problems = problems.validation or problems.train
        else:
            self.train_problems = list(problems)
            self.validation_problems = list(problems)
        if not self.train_problems:
            raise ValueError("no training problems")
        self.policy = policy
        self.critic = critic
        self.buffer = buffer
        self.config = config
        self.sandbox = sandbox or Sandbox(config.limits)
        self.executor = ExecutionCache(self.sandbox)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.kl_coef = config.reward.kl_coef_init
        self.start_epoch = 1
        self._rng_buffer = substream(config.seed, "buffer-sampling")
        self._rng_policy_shuffle = substream(config.seed, "policy-shuffle")
        self._rng_critic_shuffle = substream(config.seed, "critic-shuffle")
        self._best_score = -math.inf
        self._validation_cache: dict = {}
        # distinct valid solutions seen, tracked independently of the buffer
        # so the replay-buffer ablation measures both arms the same way
        self._found_valid: dict[str, set[str]] = {}

    # -- phase (a): generation ----------------------------------------------

    def _execute_many(self, jobs: list[tuple[str, list[str]]]):
        """Fan candidate programs out over the sandbox pool, order preserved."""
        unique = {}
        for program, tests in jobs:
            unique.setdefault((program, tuple(tests)), None)
        keys = list(unique)
        if self.config.execution_workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(self.config.execution_workers) as pool:
                outcomes = list(
                    pool.map(lambda key: self.executor.run(key[0], list(key[1])), keys)
                )
        else:
            outcomes = [self.executor.run(k[0], list(k[1])) for k in keys]
        by_key = dict(zip(keys, outcomes))
        return [by_key[(program, tuple(tests))] for program, tests in jobs]

    def build_epoch_batch(self, epoch: int) -> tuple[EpochBatch, dict]:
        """Generate, execute, reward, and mix with buffer replays."""
        cfg = self.config
        batch = EpochBatch()
        generated_kls: list[float] = []
        rewards: list[float] = []
        new_valid = 0

        for problem in self.train_problems:
            prompt = make_prompt(problem)
            trajectories = self.policy.sample_batch(
                prompt, cfg.samples_per_problem, cfg.decoding
            )
            jobs = [
                (solution_program(problem, t.text), problem.unit_tests)
                for t in trajectories
            ]
            outcomes = self._execute_many(jobs)

            # buffer replays are drawn before newly found solutions land
            replays: list[str] = []
            if cfg.buffer_enabled:
                replays = self.buffer.sample_valid(
                    problem.id, cfg.samples_per_problem, self._rng_buffer
                )

            for trajectory, outcome in zip(trajectories, outcomes):
                functional = reward_mod.functional_reward(outcome, cfg.reward)
                kl = reward_mod.sequence_kl(
                    trajectory.logp_policy, trajectory.logp_reference
                )
                trajectory.reward = reward_mod.total_reward(functional, kl, self.kl_coef)
                trajectory.problem_id = problem.id
                generated_kls.append(kl)
                rewards.append(trajectory.reward.total)
                batch.entries.append(EpochEntry(trajectory, problem, problem.loss_weight))
                if outcome.all_passed():
                    program = solution_program(problem, trajectory.text)
                    self._tally_valid(problem, program)
                    if cfg.buffer_enabled and self.buffer.add_if_new(problem, program, epoch=epoch):
                        new_valid += 1

            for canonical in replays:
                completion = completion_from_canonical(canonical, problem.signature)
                if completion is None:
                    log.warning(
                        "buffer entry for %s cannot be replayed as a completion; skipped",
                        problem.id,
                    )
                    continue
                score = self.policy.score(prompt, completion)
                replay = Trajectory(
                    prompt=prompt,
                    text=completion,
                    tokens=score.tokens,
                    logp_policy=score.logp_policy,
                    logp_reference=score.logp_reference,
                    origin=ORIGIN_BUFFER,
                    problem_id=problem.id,
                )
                # replays are not drawn from the current policy: no KL term
                replay.reward = reward_mod.total_reward(cfg.reward.max_reward, 0.0, self.kl_coef)
                rewards.append(replay.reward.total)
                batch.entries.append(EpochEntry(replay, problem, problem.loss_weight))

        stats = {
            "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
            "mean_kl": float(np.mean(generated_kls)) if generated_kls else 0.0,
            "new_valid_solutions": new_valid,
        }
        return batch, stats

    def _tally_valid(self, problem: Problem, program: str) -> None:
        from .buffer import CanonicalizationError, canonicalize

        try:
            key = canonicalize(program, problem.function_name)
        except CanonicalizationError:
            key = program
        self._found_valid.setdefault(problem.id, set()).add(key)

    def distinct_valid_total(self) -> int:
        return sum(len(v) for v in self._found_valid.values())

    # -- phases (b)+(c): updates ---------------------------------------------

    def _minibatches(self, size: int, rng) -> list[np.ndarray]:
        order = rng.permutation(size)
        n_steps = size // self.config.minibatch_size
        return [
            order[i * self.config.minibatch_size : (i + 1) * self.config.minibatch_size]
            for i in range(n_steps)
        ]

    def _policy_phase(self, batch: EpochBatch) -> float:
        objective_total = 0.0
        steps = 0
        for indices in self._minibatches(len(batch), self._rng_policy_shuffle):
            items = []
            for i in indices:
                entry = batch.entries[int(i)]
                baseline = self.critic.score(entry.trajectory.prompt, entry.trajectory.text)
                entry.trajectory.advantage = advantage(entry.trajectory.reward.total, baseline)
                items.append(
                    UpdateItem(entry.trajectory, entry.trajectory.advantage, entry.weight)
                )
            objective = self.policy.apply_update(items, self.config.policy_lr)
            if not math.isfinite(objective):
                raise TrainerAbort(f"non-finite policy objective: {objective}")
            objective_total += objective
            steps += 1
        return objective_total / steps if steps else 0.0

    def _critic_phase(self, batch: EpochBatch) -> float:
        loss_total = 0.0
        steps = 0
        for indices in self._minibatches(len(batch), self._rng_critic_shuffle):
            rows = [
                (
                    batch.entries[int(i)].trajectory.prompt,
                    batch.entries[int(i)].trajectory.text,
                    batch.entries[int(i)].trajectory.reward.total,
                )
                for i in indices
            ]
            loss = self.critic.update(rows, self.config.critic_lr)
            if not math.isfinite(loss):
                raise TrainerAbort(f"non-finite critic loss: {loss}")
            loss_total += loss
            steps += 1
        return loss_total / steps if steps else 0.0

    # -- checkpointing -------------------------------------------------------

    def _save_checkpoint(self, epoch: int, record: RunRecord) -> str | None:
        if self.run_dir is None:
            return None
        ckpt = self.run_dir / "checkpoints" / f"epoch-{epoch}"
        ckpt.mkdir(parents=True, exist_ok=True)
        self.policy.save(ckpt / "policy")
        self.critic.save(ckpt / "critic")
        self.buffer.save(ckpt / "buffer.jsonl")
        state = {
            "epoch": epoch,
            "kl_coef": self.kl_coef,
            "best_score": self._best_score,
            "best_epoch": record.best_epoch,
            "rng_buffer": self._rng_buffer.bit_generator.state,
            "rng_policy_shuffle": self._rng_policy_shuffle.bit_generator.state,
            "rng_critic_shuffle": self._rng_critic_shuffle.bit_generator.state,
        }
        (ckpt / STATE_FILE).write_text(json.dumps(state), encoding="utf-8")
        return str(ckpt)

    def _drop_checkpoint(self, epoch: int, record: RunRecord) -> None:
        path = record.checkpoints.pop(epoch, None)
        if path and not self.config.keep_all_checkpoints:
            shutil.rmtree(path, ignore_errors=True)

    def resume_from(self, checkpoint_dir: str | Path) -> None:
        """Restore controller and RNG state saved alongside a checkpoint."""
        state = json.loads((Path(checkpoint_dir) / STATE_FILE).read_text(encoding="utf-8"))
        self.kl_coef = state["kl_coef"]
        self._best_score = state["best_score"]
        self.start_epoch = state["epoch"] + 1
        self._rng_buffer.bit_generator.state = state["rng_buffer"]
        self._rng_policy_shuffle.bit_generator.state = state["rng_policy_shuffle"]
        self._rng_critic_shuffle.bit_generator.state = state["rng_critic_shuffle"]

    # -- the loop -------------------------------------------------------------

    def train(self) -> RunRecord:
        cfg = self.config
        record = RunRecord(config=_config_dict(cfg))
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            if self.start_epoch == 1:
                (self.run_dir / "train_config.json").write_text(
                    json.dumps(record.config, indent=2), encoding="utf-8"
                )
                (self.run_dir / METRICS_FILE).write_text("", encoding="utf-8")

        if getattr(self.policy, "reference_frozen", True) is False:
            self.policy.freeze_reference()
        if cfg.buffer_enabled and self.start_epoch == 1:
            try:
                self.buffer.seed_from_problems(self.train_problems)
            except SandboxConfigError as exc:
                self._save_checkpoint(0, record)
                raise TrainerAbort(f"sandbox hard error while seeding: {exc}") from exc
            for problem in self.train_problems:
                for canonical in self.buffer.entries(problem.id):
                    self._found_valid.setdefault(problem.id, set()).add(canonical)

        for epoch in range(self.start_epoch, cfg.max_epochs + 1):
            try:
                batch, stats = self.build_epoch_batch(epoch)

                policy_objective = self._policy_phase(batch)
                critic_loss = self._critic_phase(batch)
                self.kl_coef = reward_mod.update_kl_coef(
                    stats["mean_kl"], cfg.reward, self.kl_coef
                )

                validation_greedy = None
                if epoch % cfg.validate_every == 0 or epoch == cfg.max_epochs:
                    validation_greedy = greedy_solve_rate(
                        self.validation_problems,
                        self.policy,
                        self.sandbox,
                        cfg.decoding,
                        cache=self._validation_cache,
                    )
            except SandboxConfigError as exc:
                self._save_checkpoint(epoch - 1, record)
                raise TrainerAbort(f"sandbox hard error in epoch {epoch}: {exc}") from exc

            row = {
                "epoch": epoch,
                "mean_reward": stats["mean_reward"],
                "mean_kl": stats["mean_kl"],
                "kl_coef": self.kl_coef,
                "validation_greedy": validation_greedy,
                "buffer_size": self.buffer.total_size(),
                "distinct_valid_solutions": self.distinct_valid_total(),
                "new_valid_solutions": stats["new_valid_solutions"],
                "policy_objective": policy_objective,
                "critic_loss": critic_loss,
                "batch_size": len(batch),
            }
            record.append(row, self.run_dir)

            improved = validation_greedy is not None and validation_greedy > self._best_score
            if improved or epoch == cfg.max_epochs or cfg.keep_all_checkpoints:
                path = self._save_checkpoint(epoch, record)
                if path:
                    record.checkpoints[epoch] = path
            if improved:
                previous_best = record.best_epoch
                self._best_score = validation_greedy
                record.best_epoch = epoch
                if previous_best is not None and previous_best != epoch:
                    self._drop_checkpoint(previous_best, record)
                if self.run_dir is not None:
                    (self.run_dir / BEST_POINTER_FILE).write_text(
                        f"checkpoints/epoch-{epoch}\n", encoding="utf-8"
                    )
        return record


def _config_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    reward_cfg = out.get("reward", {})
    if math.isinf(reward_cfg.get("kl_target", 0.0)):
        reward_cfg["kl_target"] = "inf"
    return out


def train(
    problems,
    policy: PolicyHandle,
    critic: CriticModel,
    buffer: ReplayBuffer,
    config: TrainConfig,
    sandbox: Sandbox | None = None,
    run_dir=None,
) -> RunRecord:
    """Run the full training loop (see :class:`Trainer`)."""
    trainer = Trainer(problems, policy, critic, buffer, config, sandbox, run_dir)
    return trainer.train()
